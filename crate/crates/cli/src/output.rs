//! Run directories and file emission.
//!
//! Layout: `<out>/<hash>-<seed>/<command>/` where `hash` is the first 16 hex
//! digits of the SHA-256 of the resolved config text. CSV files open with `#` comment
//! lines carrying the version, the subcommand and the resolved config; JSON
//! files carry the same under `version`, `command` and `config`.

use std::fs;
use std::path::{Path, PathBuf};

use serde_json::{json, Value};
use sha2::{Digest, Sha256};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub fn config_hash(text: &str) -> String {
    let digest = Sha256::digest(text.as_bytes());
    digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
}

pub struct RunDir {
    pub path: PathBuf,
    pub command: &'static str,
    pub config: String,
}

impl RunDir {
    pub fn create(out: &Path, command: &'static str, config: String, seed: u64) -> std::io::Result<Self> {
        let path = out.join(format!("{}-{seed}", config_hash(&config))).join(command);
        fs::create_dir_all(&path)?;
        let stale = path.join("error.json");
        if stale.exists() {
            fs::remove_file(stale)?;
        }
        Ok(Self { path, command, config })
    }

    fn preamble(&self) -> String {
        let mut s = format!("# wtlab {VERSION}\n# command: {}\n", self.command);
        for line in self.config.lines() {
            s.push_str("# ");
            s.push_str(line);
            s.push('\n');
        }
        s
    }

    /// Writes `header` and `rows` as CSV after the comment preamble.
    pub fn csv(&self, name: &str, header: &[String], rows: &[Vec<String>]) -> std::io::Result<PathBuf> {
        let mut buf = self.preamble().into_bytes();
        {
            let mut w = csv::Writer::from_writer(&mut buf);
            w.write_record(header)?;
            for r in rows {
                w.write_record(r)?;
            }
            w.flush()?;
        }
        self.bytes(name, &buf)
    }

    /// Writes CSV produced by `f` after the comment preamble.
    pub fn csv_with<F>(&self, name: &str, f: F) -> Result<PathBuf, wtlab::Error>
    where
        F: FnOnce(&mut Vec<u8>) -> wtlab::Result<()>,
    {
        let mut buf = self.preamble().into_bytes();
        f(&mut buf)?;
        Ok(self.bytes(name, &buf)?)
    }

    pub fn json(&self, name: &str, body: Value) -> std::io::Result<PathBuf> {
        let doc = json!({
            "version": VERSION,
            "command": self.command,
            "config": self.config,
            "result": body,
        });
        let mut text = serde_json::to_string_pretty(&doc).expect("json serializes");
        text.push('\n');
        self.bytes(name, text.as_bytes())
    }

    pub fn bytes(&self, name: &str, data: &[u8]) -> std::io::Result<PathBuf> {
        let p = self.path.join(name);
        fs::write(&p, data)?;
        Ok(p)
    }
}

/// Shortest round-trip decimal form.
pub fn num(x: f64) -> String {
    wtlab::modegrid::fmt_f64(x)
}
