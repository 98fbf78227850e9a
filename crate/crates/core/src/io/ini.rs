//! Typed access to `key = value` files with `[section]` headers. Every key
//! must be consumed, so typos surface as errors instead of silently falling
//! back to defaults.

use std::fmt::{Display, Write as _};
use std::str::FromStr;

use ini::Ini;

use crate::{Error, Result};

pub struct IniDoc {
    /// `(section, key, value)` in file order, removed as they are read.
    entries: Vec<(String, String, String)>,
}

impl IniDoc {
    pub fn parse(text: &str) -> Result<Self> {
        let ini = Ini::load_from_str(text).map_err(|e| Error::format("config", e.to_string()))?;
        let mut entries: Vec<(String, String, String)> = Vec::new();
        for (section, props) in ini.iter() {
            for (key, value) in props.iter() {
                let Some(section) = section else {
                    return Err(Error::InvalidConfig(format!("key `{key}` appears before any [section]")));
                };
                if entries.iter().any(|(s, k, _)| s == section && k == key) {
                    return Err(Error::InvalidConfig(format!("[{section}] {key} is set twice")));
                }
                entries.push((section.to_string(), key.to_string(), value.trim().to_string()));
            }
        }
        Ok(Self { entries })
    }

    fn remove(&mut self, section: &str, key: &str) -> Option<String> {
        let i = self.entries.iter().position(|(s, k, _)| s == section && k == key)?;
        Some(self.entries.remove(i).2)
    }

    /// Overwrites `slot` when the key is present.
    pub fn take<T: FromStr>(&mut self, section: &str, key: &str, slot: &mut T) -> Result<()> {
        self.take_with(section, key, slot, |v| v.parse().ok())
    }

    pub fn take_with<T>(&mut self, section: &str, key: &str, slot: &mut T, parse: impl FnOnce(&str) -> Option<T>) -> Result<()> {
        if let Some(v) = self.remove(section, key) {
            *slot = parse(&v).ok_or_else(|| Error::InvalidConfig(format!("[{section}] {key} = `{v}` is not a valid value")))?;
        }
        Ok(())
    }

    /// Fails on any key nobody asked for.
    pub fn finish(self) -> Result<()> {
        match self.entries.first() {
            None => Ok(()),
            Some((s, k, _)) => Err(Error::InvalidConfig(format!("unknown key [{s}] {k}"))),
        }
    }
}

/// Comma-separated list, e.g. `1, 4`.
pub fn parse_list<T: FromStr>(v: &str) -> Option<Vec<T>> {
    v.split(',').map(|s| s.trim().parse().ok()).collect()
}

pub fn format_list<T: Display>(v: &[T]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join(", ")
}

/// `none` or a value.
pub fn parse_optional<T: FromStr>(v: &str) -> Option<Option<T>> {
    if v == "none" {
        Some(None)
    } else {
        v.parse().ok().map(Some)
    }
}

pub fn format_optional<T: Display>(v: &Option<T>) -> String {
    v.as_ref().map_or_else(|| "none".to_string(), ToString::to_string)
}

/// Builds a canonical file section by section.
#[derive(Default)]
pub struct IniWriter {
    out: String,
}

impl IniWriter {
    pub fn section(&mut self, name: &str) -> &mut Self {
        if !self.out.is_empty() {
            self.out.push('\n');
        }
        let _ = writeln!(self.out, "[{name}]");
        self
    }

    pub fn kv(&mut self, key: &str, value: impl Display) -> &mut Self {
        let _ = writeln!(self.out, "{key} = {value}");
        self
    }

    pub fn finish(self) -> String {
        self.out
    }
}
