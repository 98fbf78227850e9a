//! Helpers shared by the line-oriented text formats.

use std::str::{FromStr, SplitWhitespace};

use crate::{Error, Result};

/// Whitespace-separated fields of one line, with errors that name the
/// format and line number.
pub(crate) struct Fields<'a> {
    kind: &'static str,
    line: usize,
    it: SplitWhitespace<'a>,
}

impl<'a> Fields<'a> {
    pub fn new(kind: &'static str, line: usize, text: &'a str) -> Self {
        Self { kind, line, it: text.split_whitespace() }
    }

    pub fn err(&self, msg: impl std::fmt::Display) -> Error {
        Error::format(self.kind, format!("line {}: {msg}", self.line))
    }

    pub fn word(&mut self, what: &str) -> Result<&'a str> {
        self.it.next().ok_or_else(|| self.err(format!("missing {what}")))
    }

    pub fn parse<T: FromStr>(&mut self, what: &str) -> Result<T> {
        let w = self.word(what)?;
        w.parse().map_err(|_| self.err(format!("bad {what} `{w}`")))
    }

    /// A finite float.
    pub fn real(&mut self, what: &str) -> Result<f64> {
        let v: f64 = self.parse(what)?;
        if !v.is_finite() {
            return Err(self.err(format!("{what} is not finite")));
        }
        Ok(v)
    }

    pub fn keyword(&mut self, expected: &str) -> Result<()> {
        let w = self.word(expected)?;
        if w != expected {
            return Err(self.err(format!("expected `{expected}`, found `{w}`")));
        }
        Ok(())
    }

    pub fn finish(mut self) -> Result<()> {
        match self.it.next() {
            Some(w) => Err(self.err(format!("unexpected trailing `{w}`"))),
            None => Ok(()),
        }
    }
}

/// Non-empty lines that are not `#` comments, numbered from 1.
pub(crate) fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines().enumerate().map(|(i, l)| (i + 1, l.trim())).filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

/// `-` for `None`.
pub(crate) fn opt_to_string<T: ToString>(v: Option<T>) -> String {
    v.map_or_else(|| "-".to_string(), |v| v.to_string())
}

pub(crate) fn parse_opt<T: FromStr>(f: &mut Fields, what: &str) -> Result<Option<T>> {
    let w = f.word(what)?;
    if w == "-" {
        return Ok(None);
    }
    w.parse().map(Some).map_err(|_| f.err(format!("bad {what} `{w}`")))
}

/// Reads `qw qx qy qz`. Stored unit quaternions are kept bit-exact; any
/// other non-zero quaternion is normalized.
pub(crate) fn unit_quaternion(f: &mut Fields) -> Result<nalgebra::UnitQuaternion<f64>> {
    let q = nalgebra::Quaternion::new(f.real("qw")?, f.real("qx")?, f.real("qy")?, f.real("qz")?);
    let norm = q.norm();
    if !(norm > 1e-12 && norm.is_finite()) {
        return Err(f.err("degenerate rotation quaternion"));
    }
    Ok(if (norm - 1.0).abs() < 1e-12 { nalgebra::UnitQuaternion::new_unchecked(q) } else { nalgebra::UnitQuaternion::from_quaternion(q) })
}
