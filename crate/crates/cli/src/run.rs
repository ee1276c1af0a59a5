//! Run-directory plumbing, configuration merging, and exit-code
//! classification shared by every subcommand.

use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;

use dtcontrol::data::{builtin_task, builtin_task_names, TaskSpec};
use dtcontrol::Error;

/// CLI failure, split by exit code: validation problems (bad flags, bad
/// configuration, malformed or mismatched inputs) exit 1; runtime faults
/// (solver failures, non-finite losses, output I/O) exit 2.
#[derive(Debug)]
pub enum CliError {
    Validation(String),
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            CliError::Validation(m) | CliError::Runtime(m) => m,
        }
    }
}

pub fn validation(msg: impl Display) -> CliError {
    CliError::Validation(msg.to_string())
}

pub fn runtime(msg: impl Display) -> CliError {
    CliError::Runtime(msg.to_string())
}

/// Classify a core error raised while *executing* a command. Contract
/// violations (bad arguments, dimension mismatches, malformed files) are
/// configuration problems even when they surface mid-run — e.g. evaluating
/// a checkpoint on a task with different dimensions — and exit 1; numeric
/// and I/O faults exit 2.
pub fn classify(e: Error) -> CliError {
    match e {
        Error::Invalid(_) | Error::Dimension(_) | Error::Parse { .. } => {
            CliError::Validation(e.to_string())
        }
        other => CliError::Runtime(other.to_string()),
    }
}

/// Classify a core error raised while loading/validating inputs: always a
/// validation failure.
pub fn input_error(e: Error) -> CliError {
    CliError::Validation(e.to_string())
}

// ---------------------------------------------------------------------------
// Output directories
// ---------------------------------------------------------------------------

/// Common output options shared by artifact-producing subcommands.
#[derive(Debug, clap::Args)]
pub struct OutArgs {
    /// Parent directory for run outputs.
    #[arg(long, default_value = "runs")]
    pub outdir: PathBuf,

    /// Run name; outputs land in `<outdir>/<command>-<label>`. Defaults to
    /// a UTC timestamp.
    #[arg(long)]
    pub label: Option<String>,

    /// Replace an existing run directory of the same name.
    #[arg(long)]
    pub overwrite: bool,

    /// JSON configuration file merged under explicit flags (flags win;
    /// unknown keys are rejected).
    #[arg(long)]
    pub config: Option<PathBuf>,
}

/// A prepared run directory.
pub struct RunDir {
    pub path: PathBuf,
}

impl RunDir {
    /// Create `<outdir>/<command>-<label>`, refusing to clobber an existing
    /// directory unless `--overwrite` was given.
    pub fn prepare(out: &OutArgs, command: &str) -> Result<RunDir, CliError> {
        let label = match &out.label {
            Some(l) if !l.is_empty() => l.clone(),
            Some(_) => return Err(validation("--label must be non-empty")),
            None => chrono::Utc::now().format("%Y%m%d-%H%M%S%3f").to_string(),
        };
        let path = out.outdir.join(format!("{command}-{label}"));
        if path.exists() {
            if !out.overwrite {
                return Err(validation(format!(
                    "refusing to overwrite existing run directory {} (pass --overwrite)",
                    path.display()
                )));
            }
            fs::remove_dir_all(&path)
                .map_err(|e| runtime(format!("cannot clear {}: {e}", path.display())))?;
        }
        fs::create_dir_all(&path)
            .map_err(|e| runtime(format!("cannot create {}: {e}", path.display())))?;
        Ok(RunDir { path })
    }

    /// Write the resolved-configuration snapshot next to the outputs. The
    /// snapshot plus the input files it names reruns the command
    /// identically.
    pub fn write_snapshot<T: Serialize>(&self, command: &str, cfg: &T) -> Result<(), CliError> {
        let mut doc = serde_json::Map::new();
        doc.insert("command".into(), serde_json::Value::String(command.into()));
        let body = serde_json::to_value(cfg)
            .map_err(|e| runtime(format!("cannot serialize resolved config: {e}")))?;
        match body {
            serde_json::Value::Object(m) => doc.extend(m),
            other => {
                doc.insert("config".into(), other);
            }
        }
        self.write_text(
            "resolved_config.json",
            &format!(
                "{}\n",
                serde_json::to_string_pretty(&serde_json::Value::Object(doc)).unwrap()
            ),
        )
    }

    /// Write a text artifact into the run directory.
    pub fn write_text(&self, name: &str, contents: &str) -> Result<(), CliError> {
        let path = self.path.join(name);
        fs::write(&path, contents)
            .map_err(|e| runtime(format!("cannot write {}: {e}", path.display())))?;
        Ok(())
    }

    /// Serialize a value as pretty JSON into the run directory.
    pub fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<(), CliError> {
        let body = serde_json::to_string_pretty(value)
            .map_err(|e| runtime(format!("cannot serialize {name}: {e}")))?;
        self.write_text(name, &format!("{body}\n"))
    }
}

// ---------------------------------------------------------------------------
// Configuration loading
// ---------------------------------------------------------------------------

/// Load a command configuration document. Absent file → defaults; unknown
/// keys are rejected by the document types (`deny_unknown_fields`).
pub fn load_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T, CliError> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let text = fs::read_to_string(p)
                .map_err(|e| validation(format!("cannot read config {}: {e}", p.display())))?;
            serde_json::from_str(&text)
                .map_err(|e| validation(format!("invalid config {}: {e}", p.display())))
        }
    }
}

/// Read and parse a JSON input file.
pub fn load_json<T: DeserializeOwned>(path: &Path, what: &str) -> Result<T, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| validation(format!("cannot read {what} {}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| validation(format!("invalid {what} {}: {e}", path.display())))
}

/// Resolve the seed: explicit flag wins, then the config document; every
/// stochastic command requires one.
pub fn resolve_seed(flag: Option<u64>, cfg: Option<u64>) -> Result<u64, CliError> {
    flag.or(cfg)
        .ok_or_else(|| validation("a seed is required: pass --seed <u64> (or set \"seed\" in the config)"))
}

/// Overlay an optional flag onto a config field (flags win).
pub fn overlay<T>(slot: &mut T, flag: Option<T>) {
    if let Some(v) = flag {
        *slot = v;
    }
}

// ---------------------------------------------------------------------------
// Task resolution
// ---------------------------------------------------------------------------

/// Resolve a task argument: an existing path is parsed as a task JSON file,
/// anything else must name a builtin task.
pub fn resolve_task(name: &str) -> Result<TaskSpec, CliError> {
    let path = Path::new(name);
    if path.exists() {
        return load_json::<TaskSpec>(path, "task file");
    }
    builtin_task(name).map_err(|_| {
        validation(format!(
            "unknown task `{name}`: expected a task JSON file or one of {}",
            builtin_task_names().join(", ")
        ))
    })
}
