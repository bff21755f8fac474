//! Run directories, config loading and the manifest.

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{json, Value};
use thiserror::Error;

pub const OUT_ENV: &str = "GEOLOSS_OUT";
pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad configuration; exit code 2.
    #[error("config error at `{key}`: {message}")]
    Config { key: String, message: String },
    /// Failure while running; exit code 1.
    #[error(transparent)]
    Runtime(#[from] anyhow::Error),
}

impl CliError {
    pub fn config(key: &str, message: impl std::fmt::Display) -> Self {
        CliError::Config {
            key: key.to_string(),
            message: message.to_string(),
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config { .. } => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

pub fn runtime<E: Into<anyhow::Error>>(e: E) -> CliError {
    CliError::Runtime(e.into())
}

/// Reads a JSON config, filling absent keys from defaults. Unknown keys and
/// type errors are reported with their dotted path.
pub fn load_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T, CliError> {
    let Some(path) = path else {
        return Ok(T::default());
    };
    let text = fs::read_to_string(path).map_err(|e| CliError::config("--config", format!("{}: {e}", path.display())))?;
    let de = &mut serde_json::Deserializer::from_str(&text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let key = e.path().to_string();
        let inner = e.into_inner();
        let key = match unknown_field(&inner.to_string()) {
            Some(f) if key == "." => f,
            Some(f) if !key.ends_with(&f) => format!("{key}.{f}"),
            _ => key,
        };
        CliError::Config { key, message: inner.to_string() }
    })
}

fn unknown_field(msg: &str) -> Option<String> {
    let rest = msg.strip_prefix("unknown field `")?;
    Some(rest[..rest.find('`')?].to_string())
}

/// One invocation's output directory and bookkeeping.
pub struct RunContext {
    pub command: String,
    pub dir: PathBuf,
    pub seed: u64,
    pub threads: Option<usize>,
    inputs: Vec<String>,
    outputs: Vec<String>,
    config: Value,
}

impl RunContext {
    pub fn new(command: &str, out_dir: Option<PathBuf>, seed: u64, threads: Option<usize>) -> Self {
        let dir = out_dir.unwrap_or_else(|| {
            let root = std::env::var_os(OUT_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("runs"));
            root.join(command)
        });
        RunContext {
            command: command.to_string(),
            dir,
            seed,
            threads,
            inputs: Vec::new(),
            outputs: Vec::new(),
            config: Value::Null,
        }
    }

    pub fn record_config<T: Serialize>(&mut self, cfg: &T) -> Result<(), CliError> {
        self.config = serde_json::to_value(cfg).map_err(runtime)?;
        Ok(())
    }

    pub fn input(&mut self, path: &Path) {
        self.inputs.push(path.display().to_string());
    }

    pub fn ensure_dir(&self) -> Result<(), CliError> {
        fs::create_dir_all(&self.dir).map_err(|e| runtime(anyhow::anyhow!("cannot create {}: {e}", self.dir.display())))
    }

    /// Writes `name` inside the run directory and records it.
    pub fn write(&mut self, name: &str, contents: impl AsRef<[u8]>) -> Result<PathBuf, CliError> {
        self.ensure_dir()?;
        let path = self.dir.join(name);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(runtime)?;
        }
        fs::write(&path, contents).map_err(|e| runtime(anyhow::anyhow!("cannot write {}: {e}", path.display())))?;
        self.outputs.push(name.to_string());
        Ok(path)
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<PathBuf, CliError> {
        let text = serde_json::to_string_pretty(value).map_err(runtime)?;
        self.write(name, text + "\n")
    }

    /// Records an output written by other code.
    pub fn output(&mut self, name: &str) {
        self.outputs.push(name.to_string());
    }

    pub fn write_manifest(&mut self, error: Option<&CliError>) -> std::io::Result<()> {
        fs::create_dir_all(&self.dir)?;
        let mut outputs = self.outputs.clone();
        outputs.sort();
        outputs.dedup();
        let manifest = json!({
            "command": self.command,
            "version": env!("CARGO_PKG_VERSION"),
            "seed": self.seed,
            "threads": self.threads,
            "config": self.config,
            "inputs": self.inputs,
            "outputs": outputs,
            "error": error.map(|e| e.to_string()),
        });
        fs::write(self.dir.join(MANIFEST), serde_json::to_string_pretty(&manifest)? + "\n")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde::Deserialize;

    #[derive(Debug, Default, Serialize, Deserialize)]
    #[serde(deny_unknown_fields, default)]
    struct Inner {
        depth: u32,
    }

    #[derive(Debug, Default, Serialize, Deserialize)]
    #[serde(deny_unknown_fields, default)]
    struct Outer {
        width: u32,
        inner: Inner,
    }

    fn load(text: &str) -> Result<Outer, CliError> {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        fs::write(&p, text).unwrap();
        load_config(Some(&p))
    }

    #[test]
    fn errors_name_the_key() {
        assert_eq!(load(r#"{"width": 3}"#).unwrap().width, 3);
        match load(r#"{"inner": {"bogus": 1}}"#) {
            Err(CliError::Config { key, .. }) => assert_eq!(key, "inner.bogus"),
            other => panic!("{other:?}"),
        }
        match load(r#"{"bogus": 1}"#) {
            Err(CliError::Config { key, .. }) => assert_eq!(key, "bogus"),
            other => panic!("{other:?}"),
        }
        match load(r#"{"inner": {"depth": "deep"}}"#) {
            Err(CliError::Config { key, .. }) => assert_eq!(key, "inner.depth"),
            other => panic!("{other:?}"),
        }
    }
}
