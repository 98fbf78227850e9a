//! Per-command manifest: hashes of every file read and written plus the
//! configuration echoed verbatim.
//!
//! ```text
//! dynsplat-manifest 1
//! command <name>
//! config-sha256 <hex>
//! input <hex> <path>
//! output <hex> <path>
//! config-begin
//! <configuration lines>
//! config-end
//! ```

use std::fmt::Write as _;

use sha2::{Digest, Sha256};

use super::text::Fields;
use crate::{Error, Result};

const KIND: &str = "manifest";

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().fold(String::with_capacity(64), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Manifest {
    pub command: String,
    pub config: String,
    /// `(sha256, path)` in the order the files were touched.
    pub inputs: Vec<(String, String)>,
    pub outputs: Vec<(String, String)>,
}

impl Manifest {
    pub fn new(command: &str, config: &str) -> Self {
        Self { command: command.into(), config: config.into(), ..Default::default() }
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("dynsplat-manifest 1\ncommand {}\nconfig-sha256 {}\n", self.command, sha256_hex(self.config.as_bytes()));
        for (h, p) in &self.inputs {
            let _ = writeln!(out, "input {h} {p}");
        }
        for (h, p) in &self.outputs {
            let _ = writeln!(out, "output {h} {p}");
        }
        out.push_str("config-begin\n");
        out.push_str(&self.config);
        if !self.config.is_empty() && !self.config.ends_with('\n') {
            out.push('\n');
        }
        out.push_str("config-end\n");
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        let mut next = |what: &str| lines.next().ok_or_else(|| Error::format(KIND, format!("missing {what}")));
        let (n, l) = next("header")?;
        let mut f = Fields::new(KIND, n, l);
        f.keyword("dynsplat-manifest")?;
        f.keyword("1")?;
        f.finish()?;
        let (n, l) = next("command")?;
        let mut f = Fields::new(KIND, n, l);
        f.keyword("command")?;
        let command = f.word("command name")?.to_string();
        f.finish()?;
        let (n, l) = next("config hash")?;
        let mut f = Fields::new(KIND, n, l);
        f.keyword("config-sha256")?;
        let config_hash = f.word("hash")?.to_string();
        f.finish()?;
        let mut m = Manifest { command, ..Default::default() };
        loop {
            let (n, l) = next("config-begin")?;
            if l == "config-begin" {
                break;
            }
            let (tag, rest) = l.split_once(' ').ok_or_else(|| Error::format(KIND, format!("line {n}: malformed entry")))?;
            let (hash, path) = rest.split_once(' ').ok_or_else(|| Error::format(KIND, format!("line {n}: entry needs a hash and a path")))?;
            if hash.len() != 64 || !hash.bytes().all(|b| b.is_ascii_hexdigit()) {
                return Err(Error::format(KIND, format!("line {n}: bad hash `{hash}`")));
            }
            let entry = (hash.to_string(), path.to_string());
            match tag {
                "input" => m.inputs.push(entry),
                "output" => m.outputs.push(entry),
                t => return Err(Error::format(KIND, format!("line {n}: unknown entry `{t}`"))),
            }
        }
        loop {
            let (_, l) = next("config-end")?;
            if l == "config-end" {
                break;
            }
            m.config.push_str(l);
            m.config.push('\n');
        }
        if sha256_hex(m.config.as_bytes()) != config_hash {
            return Err(Error::format(KIND, "config hash does not match the echoed config"));
        }
        Ok(m)
    }
}
