//! Small text helpers shared by the on-disk formats.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// 17 significant digits, enough to round-trip any `f64`.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn parse_f64(path: &Path, token: &str) -> Result<f64> {
    token.trim().parse::<f64>().map_err(|_| Error::Parse {
        path: path.to_path_buf(),
        detail: format!("bad number '{token}'"),
    })
}

pub fn parse_usize(path: &Path, token: &str) -> Result<usize> {
    token.trim().parse::<usize>().map_err(|_| Error::Parse {
        path: path.to_path_buf(),
        detail: format!("bad integer '{token}'"),
    })
}

pub fn read_to_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn write_string(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

pub fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// `key=value` lines; blank lines and `#` comments are skipped.
pub fn parse_key_values(path: &Path, text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
            path: path.to_path_buf(),
            detail: format!("expected key=value, got '{line}'"),
        })?;
        map.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(map)
}

pub fn require<'a>(path: &Path, map: &'a BTreeMap<String, String>, key: &str) -> Result<&'a str> {
    map.get(key).map(String::as_str).ok_or_else(|| Error::Parse {
        path: path.to_path_buf(),
        detail: format!("missing key '{key}'"),
    })
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}
