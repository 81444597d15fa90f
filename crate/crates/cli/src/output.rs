//! Artifact writers. Every file starts with the resolved configuration.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use serde_json::{json, Value};

/// A CSV cell. Reals use 17 significant digits so files round-trip exactly.
pub enum Cell {
    Int(i128),
    Real(f64),
    Text(String),
}

impl From<f64> for Cell {
    fn from(x: f64) -> Self {
        Self::Real(x)
    }
}

impl From<u64> for Cell {
    fn from(x: u64) -> Self {
        Self::Int(x.into())
    }
}

impl From<usize> for Cell {
    fn from(x: usize) -> Self {
        Self::Int(x as i128)
    }
}

impl From<bool> for Cell {
    fn from(x: bool) -> Self {
        Self::Int(x.into())
    }
}

impl From<&str> for Cell {
    fn from(x: &str) -> Self {
        Self::Text(x.to_string())
    }
}

impl Cell {
    fn render(&self, out: &mut String) {
        match self {
            Self::Int(i) => write!(out, "{i}").unwrap(),
            Self::Real(x) if x.is_nan() => out.push_str("nan"),
            Self::Real(x) if x.is_infinite() => out.push_str(if *x > 0.0 { "inf" } else { "-inf" }),
            Self::Real(x) => write!(out, "{x:.16e}").unwrap(),
            Self::Text(s) => out.push_str(s),
        }
    }
}

pub struct Artifacts {
    dir: PathBuf,
    command: &'static str,
    config: Value,
    root_seed: u64,
}

impl Artifacts {
    pub fn new(dir: &Path, command: &'static str, config: Value, root_seed: u64) -> Result<Self> {
        fs::create_dir_all(dir).with_context(|| format!("creating output directory {}", dir.display()))?;
        Ok(Self { dir: dir.to_path_buf(), command, config, root_seed })
    }

    pub fn csv(&mut self, name: &str, columns: &[&str], rows: Vec<Vec<Cell>>) -> Result<()> {
        let mut out = String::new();
        writeln!(out, "# vbsim {}", self.command).unwrap();
        writeln!(out, "# root_seed = {}", self.root_seed).unwrap();
        writeln!(out, "# config = {}", self.config).unwrap();
        out.push_str(&columns.join(","));
        out.push('\n');
        for row in rows {
            for (i, c) in row.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                c.render(&mut out);
            }
            out.push('\n');
        }
        self.write(name, out)
    }

    /// Pretty JSON with the command, seed and configuration ahead of `body`'s fields.
    pub fn json<T: Serialize>(&mut self, name: &str, body: &T) -> Result<Value> {
        let mut doc = json!({ "command": self.command, "root_seed": self.root_seed, "config": self.config });
        let body = serde_json::to_value(body)?;
        if let (Some(d), Value::Object(b)) = (doc.as_object_mut(), body) {
            d.extend(b);
        }
        let mut text = serde_json::to_string_pretty(&doc)?;
        text.push('\n');
        self.write(name, text)?;
        Ok(doc)
    }

    fn write(&self, name: &str, text: String) -> Result<()> {
        let path = self.dir.join(name);
        fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
    }
}
