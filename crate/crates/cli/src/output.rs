use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use serde_json::json;

/// A failure reported to the user as one JSON line.
#[derive(Debug)]
pub struct CliError {
    kind: &'static str,
    message: String,
}

impl CliError {
    fn new(kind: &'static str, message: impl Into<String>) -> Self {
        CliError {
            kind,
            message: message.into(),
        }
    }

    pub fn usage(m: impl Into<String>) -> Self {
        Self::new("usage", m)
    }

    pub fn config(m: impl Into<String>) -> Self {
        Self::new("config", m)
    }

    pub fn input(m: impl Into<String>) -> Self {
        Self::new("input", m)
    }

    pub fn runtime(m: impl Into<String>) -> Self {
        Self::new("runtime", m)
    }

    pub fn io(m: impl Into<String>) -> Self {
        Self::new("io", m)
    }

    pub fn exit_code(&self) -> u8 {
        if self.kind == "usage" {
            2
        } else {
            1
        }
    }

    pub fn report(&self) -> ExitCode {
        let line = json!({ "error": self.kind, "message": self.message.replace('\n', " ") });
        eprintln!("{line}");
        ExitCode::from(self.exit_code())
    }
}

/// Artifacts buffered until the run has succeeded.
#[derive(Debug, Default)]
pub struct Outputs {
    files: Vec<(String, Vec<u8>)>,
}

impl Outputs {
    pub fn add(&mut self, name: &str, bytes: Vec<u8>) {
        self.files.push((name.to_string(), bytes));
    }

    /// Writes every file into `dir`. On failure, removes whatever this call
    /// already wrote.
    pub fn commit(self, dir: &Path) -> Result<(), CliError> {
        let io = |p: &Path, e: std::io::Error| CliError::io(format!("{}: {e}", p.display()));
        fs::create_dir_all(dir).map_err(|e| io(dir, e))?;
        let mut written: Vec<PathBuf> = Vec::new();
        for (name, bytes) in &self.files {
            let path = dir.join(name);
            let tmp = dir.join(format!(".{name}.partial"));
            let res = fs::write(&tmp, bytes).and_then(|_| fs::rename(&tmp, &path));
            if let Err(e) = res {
                let _ = fs::remove_file(&tmp);
                for p in &written {
                    let _ = fs::remove_file(p);
                }
                return Err(io(&path, e));
            }
            written.push(path);
        }
        Ok(())
    }
}
