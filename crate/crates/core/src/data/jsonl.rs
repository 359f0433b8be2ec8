use std::fs;
use std::io::Write;
use std::path::Path;

use super::sample::GlaucomaSample;
use crate::error::{Error, Result};

/// One record per non-blank line. Line numbers in errors are 1-based.
pub fn parse_jsonl(text: &str) -> Result<Vec<GlaucomaSample>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let s: GlaucomaSample = serde_json::from_str(line).map_err(|e| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        s.validate().map_err(|e| match e {
            Error::Validation(m) => Error::Validation(format!("line {}: {m}", i + 1)),
            other => other,
        })?;
        out.push(s);
    }
    Ok(out)
}

pub fn load_jsonl(path: &Path) -> Result<Vec<GlaucomaSample>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_jsonl(&text)
}

pub fn to_jsonl(samples: &[GlaucomaSample]) -> Result<String> {
    let mut out = String::new();
    for s in samples {
        out.push_str(&serde_json::to_string(s).map_err(|e| Error::contract(e.to_string()))?);
        out.push('\n');
    }
    Ok(out)
}

pub fn save_jsonl(path: &Path, samples: &[GlaucomaSample]) -> Result<()> {
    let text = to_jsonl(samples)?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}
