use std::fs;
use std::path::{Path, PathBuf};

use serde_json::{json, Value};

use crate::CliError;

/// Output directory plus the list of files written so far.
pub struct OutDir {
    root: PathBuf,
    written: Vec<String>,
}

impl OutDir {
    pub fn create(root: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(root).map_err(|e| CliError::io(root, e))?;
        Ok(OutDir { root: root.to_path_buf(), written: Vec::new() })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn record(&mut self, name: &str) {
        self.written.push(name.to_string());
    }

    /// Writes a CSV file, then reads it back and checks it against `header`.
    pub fn write_csv(&mut self, name: &str, header: &str, text: &str) -> Result<(), CliError> {
        let path = self.path(name);
        fs::write(&path, text).map_err(|e| CliError::io(&path, e))?;
        let back = fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
        check_csv(&back, header).map_err(|msg| CliError::Schema { path: path.clone(), msg })?;
        self.record(name);
        Ok(())
    }

    /// Writes `<command>.manifest.json` with the resolved config and the files produced.
    pub fn write_manifest(&self, command: &str, seed: Option<u64>, config: Value) -> Result<(), CliError> {
        let manifest = json!({
            "command": command,
            "version": env!("CARGO_PKG_VERSION"),
            "seed": seed,
            "config": config,
            "outputs": self.written,
        });
        let path = self.path(&format!("{command}.manifest.json"));
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n";
        fs::write(&path, text).map_err(|e| CliError::io(&path, e))
    }
}

/// Header must match exactly and every row must have as many fields as the header.
pub fn check_csv(text: &str, header: &str) -> Result<(), String> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == header => {}
        Some(h) => return Err(format!("header {h:?} does not match {header:?}")),
        None => return Err("file is empty".into()),
    }
    let n = header.split(',').count();
    for (i, line) in lines.enumerate() {
        let got = line.split(',').count();
        if got != n {
            return Err(format!("row {} has {got} fields, expected {n}", i + 1));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schema_check() {
        assert!(check_csv("a,b\n1,2\n3,\n", "a,b").is_ok());
        assert!(check_csv("a,b\n1,2,3\n", "a,b").is_err());
        assert!(check_csv("a,c\n", "a,b").is_err());
        assert!(check_csv("", "a,b").is_err());
    }
}
