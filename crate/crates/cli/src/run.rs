//! Config resolution, output files and the run manifest.

use std::fmt;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{json, Map, Value};

/// Failure of a CLI run. Each variant maps to its own exit code.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Config(String),
    MissingFile(PathBuf),
    Verification(String),
    Core(gdl_core::Error),
}

impl CliError {
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::Config(_) => "malformed_config",
            CliError::MissingFile(_) => "missing_file",
            CliError::Verification(_) => "verification_failed",
            CliError::Core(e) => e.kind(),
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Config(_) => 3,
            CliError::MissingFile(_) => 4,
            CliError::Verification(_) => 5,
            CliError::Core(_) => 1,
        }
    }

    /// Single-line JSON diagnostic.
    pub fn line(&self) -> String {
        json!({ "error": self.kind(), "message": self.to_string() }).to_string()
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Config(m) | CliError::Verification(m) => f.write_str(m),
            CliError::MissingFile(p) => write!(f, "no such file: {}", p.display()),
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

impl From<gdl_core::Error> for CliError {
    fn from(e: gdl_core::Error) -> Self {
        match e {
            gdl_core::Error::InvalidConfig(m) => CliError::Config(m),
            other => CliError::Core(other),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Core(e.into())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Core(e.into())
    }
}

pub type CliResult<T> = Result<T, CliError>;

pub fn require_file(path: &Path) -> CliResult<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::MissingFile(path.to_path_buf()))
    }
}

/// Builds the resolved config: defaults, then the config file, then `--set` pairs, then flags.
pub struct ConfigBuilder {
    value: Value,
}

impl ConfigBuilder {
    pub fn new<T: Serialize + Default>() -> Self {
        Self { value: serde_json::to_value(T::default()).expect("default config serializes") }
    }

    pub fn file(mut self, path: Option<&Path>) -> CliResult<Self> {
        let Some(path) = path else { return Ok(self) };
        require_file(path)?;
        let text = fs::read_to_string(path)?;
        let file: Value =
            serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        if !file.is_object() {
            return Err(CliError::Config(format!("{}: top level must be a JSON object", path.display())));
        }
        merge(&mut self.value, file);
        Ok(self)
    }

    /// `key=value` with dotted keys for nested fields. Values parse as JSON, falling back to a string.
    pub fn overrides(mut self, pairs: &[String]) -> CliResult<Self> {
        for pair in pairs {
            let (key, raw) =
                pair.split_once('=').ok_or_else(|| CliError::Usage(format!("override '{pair}' is not key=value")))?;
            let v = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
            self = self.set(key, v);
        }
        Ok(self)
    }

    pub fn set(mut self, key: &str, v: Value) -> Self {
        let mut cur = &mut self.value;
        let parts: Vec<&str> = key.split('.').collect();
        for (i, part) in parts.iter().enumerate() {
            if !cur.is_object() {
                *cur = Value::Object(Map::new());
            }
            let obj = cur.as_object_mut().unwrap();
            if i + 1 == parts.len() {
                obj.insert(part.to_string(), v);
                break;
            }
            cur = obj.entry(part.to_string()).or_insert(Value::Object(Map::new()));
        }
        self
    }

    pub fn set_opt<T: Serialize>(self, key: &str, v: Option<T>) -> Self {
        match v {
            Some(x) => self.set(key, serde_json::to_value(x).expect("flag value serializes")),
            None => self,
        }
    }

    pub fn build<T: DeserializeOwned>(self) -> CliResult<T> {
        serde_json::from_value(self.value).map_err(|e| CliError::Config(e.to_string()))
    }
}

fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Output directory plus the bookkeeping needed for the manifest.
pub struct RunContext {
    pub out: PathBuf,
    pub command: &'static str,
    pub seed: u64,
    outputs: Vec<String>,
}

impl RunContext {
    pub fn new(out: &Path, command: &'static str, seed: u64) -> CliResult<Self> {
        fs::create_dir_all(out)?;
        Ok(Self { out: out.to_path_buf(), command, seed, outputs: Vec::new() })
    }

    pub fn header(&self) -> String {
        format!("# gdl {} {} seed={}", gdl_core::VERSION, self.command, self.seed)
    }

    /// Opens `name` in the output directory with the seed header line already written.
    pub fn csv_file(&mut self, name: &str) -> CliResult<BufWriter<File>> {
        let path = self.out.join(name);
        let mut w = BufWriter::new(File::create(&path)?);
        writeln!(w, "{}", self.header())?;
        self.outputs.push(name.to_string());
        Ok(w)
    }

    pub fn write_rows<R: Serialize>(&mut self, name: &str, rows: &[R]) -> CliResult<()> {
        let mut w = csv::Writer::from_writer(self.csv_file(name)?);
        for r in rows {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn finish<C: Serialize>(self, config: &C) -> CliResult<PathBuf> {
        let manifest = json!({
            "command": self.command,
            "version": gdl_core::VERSION,
            "seed": self.seed,
            "config": config,
            "outputs": self.outputs,
        });
        let path = self.out.join(format!("{}.manifest.json", self.command));
        let text = serde_json::to_string_pretty(&manifest).map_err(|e| CliError::Core(e.into()))?;
        fs::write(&path, text + "\n")?;
        Ok(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use gdl_core::probing::TrainConfig;

    #[test]
    fn precedence_file_then_overrides_then_flags() {
        let dir = tempfile::tempdir().unwrap();
        let f = dir.path().join("c.json");
        fs::write(&f, r#"{"eta": 0.1, "beta": 2.0, "dataset": {"n_train": 40}}"#).unwrap();
        let cfg: TrainConfig = ConfigBuilder::new::<TrainConfig>()
            .file(Some(&f))
            .unwrap()
            .overrides(&["beta=3".into(), "dataset.n_test=12".into()])
            .unwrap()
            .set_opt("eta", Some(0.2))
            .build()
            .unwrap();
        assert_eq!(cfg.eta, 0.2);
        assert_eq!(cfg.beta, 3.0);
        assert_eq!(cfg.dataset.n_train, 40);
        assert_eq!(cfg.dataset.n_test, 12);
        assert_eq!(cfg.sft_epochs, TrainConfig::default().sft_epochs);
    }

    #[test]
    fn unknown_key_is_config_error() {
        let err =
            ConfigBuilder::new::<TrainConfig>().overrides(&["learning_rate=1".into()]).unwrap().build::<TrainConfig>();
        assert_eq!(err.unwrap_err().kind(), "malformed_config");
    }

    #[test]
    fn missing_config_file() {
        let err = ConfigBuilder::new::<TrainConfig>().file(Some(Path::new("/nonexistent/c.json")));
        assert_eq!(err.err().unwrap().exit_code(), 4);
    }

    #[test]
    fn error_line_is_single_json_object() {
        let line = CliError::Config("bad\nthing".into()).line();
        assert!(!line.contains('\n'));
        let v: Value = serde_json::from_str(&line).unwrap();
        assert_eq!(v["error"], "malformed_config");
    }
}
