//! Shared command plumbing: config layering, run-directory loading, output
//! resolution, and manifests.
//!
//! Config precedence, lowest to highest: preset or `--config` file (for
//! downstream commands, the `config.json` recorded in the run directory),
//! then `--<key> <value>` overrides, then the mapped flags `--seed`, `--T`,
//! `--out`.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, Context};
use epk_core::config::{preset, FlatConfig};
use epk_core::dataset::{read_modadd_csv, SplitData};
use epk_core::trajectory::TrajectoryLog;
use serde::Serialize;
use sha2::{Digest, Sha256};

/// Environment variable naming the default root for command output
/// directories.
pub const OUT_ROOT_ENV: &str = "EPK_OUT_ROOT";

/// How a failed command maps to an exit status: 1 for validation problems,
/// 2 for missing or unreadable inputs.
#[derive(Debug)]
pub enum AppError {
    Validation(anyhow::Error),
    MissingInput(anyhow::Error),
}

impl AppError {
    pub fn exit_code(&self) -> u8 {
        match self {
            AppError::Validation(_) => 1,
            AppError::MissingInput(_) => 2,
        }
    }

    pub fn message(&self) -> String {
        match self {
            AppError::Validation(e) => format!("{e:#}"),
            AppError::MissingInput(e) => format!("{e:#}"),
        }
    }
}

pub fn validation(e: impl Into<anyhow::Error>) -> AppError {
    AppError::Validation(e.into())
}

pub fn missing(e: impl Into<anyhow::Error>) -> AppError {
    AppError::MissingInput(e.into())
}

pub type CmdResult<T> = Result<T, AppError>;

/// The set of flat-config keys, taken from the schema itself so the
/// override scanner never drifts from the config struct.
pub fn config_keys() -> BTreeSet<String> {
    let value = serde_json::to_value(FlatConfig::default()).expect("config serializes");
    value
        .as_object()
        .expect("flat config is a json object")
        .keys()
        .cloned()
        .collect()
}

/// Split argv into `--key value` config overrides and everything else.
/// Both `--train_fraction` and `--train-fraction` address the same key.
pub fn extract_overrides(args: Vec<String>) -> CmdResult<(Vec<String>, Vec<(String, String)>)> {
    let keys = config_keys();
    let mut rest = Vec::with_capacity(args.len());
    let mut overrides = Vec::new();
    let mut it = args.into_iter();
    while let Some(arg) = it.next() {
        let key = arg
            .strip_prefix("--")
            .map(|k| k.replace('-', "_"))
            .filter(|k| keys.contains(k));
        match key {
            Some(k) => {
                let value = it.next().ok_or_else(|| {
                    AppError::Validation(anyhow!("override --{k} is missing its value"))
                })?;
                overrides.push((k, value));
            }
            None => rest.push(arg),
        }
    }
    Ok((rest, overrides))
}

/// Interpret one override value: JSON if it parses, bare string otherwise.
/// For list-valued keys, comma-separated scalars (or a single scalar) are
/// accepted in place of JSON array syntax.
fn override_value(existing: &serde_json::Value, raw: &str) -> serde_json::Value {
    let parsed = serde_json::from_str::<serde_json::Value>(raw)
        .unwrap_or_else(|_| serde_json::Value::String(raw.to_string()));
    if existing.is_array() && !parsed.is_array() {
        let items = raw
            .split(',')
            .map(|part| {
                serde_json::from_str::<serde_json::Value>(part)
                    .unwrap_or_else(|_| serde_json::Value::String(part.to_string()))
            })
            .collect();
        return serde_json::Value::Array(items);
    }
    parsed
}

/// Apply `--key value` overrides on top of a base config.
pub fn apply_overrides(
    base: &FlatConfig,
    overrides: &[(String, String)],
) -> CmdResult<FlatConfig> {
    if overrides.is_empty() {
        return Ok(base.clone());
    }
    let mut value = serde_json::to_value(base).map_err(validation)?;
    let obj = value.as_object_mut().expect("flat config is a json object");
    for (key, raw) in overrides {
        let existing = obj
            .get(key)
            .ok_or_else(|| AppError::Validation(anyhow!("unknown config key '{key}'")))?;
        let new = override_value(existing, raw);
        obj.insert(key.clone(), new);
    }
    serde_json::from_value(value)
        .map_err(|e| AppError::Validation(anyhow!("invalid override: {e}")))
}

/// Load the base config for a command that starts from scratch: an explicit
/// `--config` file or a named `--preset`, never both.
pub fn base_config(
    config: Option<&Path>,
    preset_name: Option<&str>,
) -> CmdResult<FlatConfig> {
    match (config, preset_name) {
        (Some(_), Some(_)) => Err(AppError::Validation(anyhow!(
            "--config and --preset are mutually exclusive"
        ))),
        (Some(path), None) => read_config_file(path),
        (None, Some(name)) => preset(name).ok_or_else(|| {
            AppError::Validation(anyhow!(
                "unknown preset '{name}' (available: desk_transformer, desk_grokking, \
                 study_transformer, desk_mlp)"
            ))
        }),
        (None, None) => Err(AppError::Validation(anyhow!(
            "needs --config <file> or --preset <name>"
        ))),
    }
}

pub fn read_config_file(path: &Path) -> CmdResult<FlatConfig> {
    if !path.exists() {
        return Err(AppError::MissingInput(anyhow!(
            "config file {} does not exist",
            path.display()
        )));
    }
    let text = fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))
        .map_err(missing)?;
    FlatConfig::from_json(&text)
        .map_err(|e| AppError::Validation(anyhow!("{}: {e}", path.display())))
}

/// Resolve the output directory: `--out`, then the config's `out_dir`, then
/// `$EPK_OUT_ROOT/<command>`, then `./epk_out/<command>`.
pub fn resolve_out(
    out_flag: Option<&Path>,
    cfg_out: Option<&str>,
    command: &str,
) -> CmdResult<PathBuf> {
    let dir = if let Some(p) = out_flag {
        p.to_path_buf()
    } else if let Some(p) = cfg_out {
        PathBuf::from(p)
    } else if let Ok(root) = std::env::var(OUT_ROOT_ENV) {
        Path::new(&root).join(command)
    } else {
        Path::new("epk_out").join(command)
    };
    fs::create_dir_all(&dir)
        .with_context(|| format!("creating output directory {}", dir.display()))
        .map_err(validation)?;
    Ok(dir)
}

/// Flags shared by every subcommand, already parsed.
#[derive(Debug, Default)]
pub struct Common {
    pub config: Option<PathBuf>,
    pub preset: Option<String>,
    pub run: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub t: Option<usize>,
}

/// Fold the mapped flags into the config: `--seed N` sets the three RNG
/// streams to N, N+1, N+2; `--T` sets the quadrature order.
pub fn apply_mapped_flags(flat: &mut FlatConfig, common: &Common) {
    if let Some(s) = common.seed {
        flat.init_seed = s;
        flat.batch_seed = s.wrapping_add(1);
        flat.data_seed = s.wrapping_add(2);
    }
    if let Some(t) = common.t {
        flat.integration_steps = t;
    }
}

/// A training run on disk: trajectory, dataset, and the config that made it.
pub struct RunDir {
    pub dir: PathBuf,
    pub log: TrajectoryLog,
    pub data: SplitData,
    pub flat: FlatConfig,
    /// Input files actually read, for the manifest.
    pub inputs: Vec<PathBuf>,
}

impl RunDir {
    pub fn trajectory_path(&self) -> PathBuf {
        self.dir.join("trajectory.bin")
    }
}

/// Load a run directory produced by `epk train`. The recorded `config.json`
/// is the base config (overridable); the dataset comes from `dataset.csv`
/// when present (the exact split the run saw, even if it was imported)
/// and is regenerated from the config otherwise.
pub fn load_run_dir(
    run: Option<&Path>,
    config: Option<&Path>,
    overrides: &[(String, String)],
) -> CmdResult<RunDir> {
    let dir = run
        .ok_or_else(|| AppError::Validation(anyhow!("needs --run <dir> from a previous train")))?
        .to_path_buf();
    if !dir.is_dir() {
        return Err(AppError::MissingInput(anyhow!(
            "run directory {} does not exist",
            dir.display()
        )));
    }
    let traj_path = dir.join("trajectory.bin");
    if !traj_path.exists() {
        return Err(AppError::MissingInput(anyhow!(
            "{} has no trajectory.bin",
            dir.display()
        )));
    }
    let log = TrajectoryLog::load(&traj_path)
        .map_err(|e| AppError::MissingInput(anyhow!("{}: {e}", traj_path.display())))?;
    let mut inputs = vec![traj_path];

    let base = match config {
        Some(path) => read_config_file(path)?,
        None => {
            let cfg_path = dir.join("config.json");
            if !cfg_path.exists() {
                return Err(AppError::MissingInput(anyhow!(
                    "{} has no config.json (pass --config)",
                    dir.display()
                )));
            }
            let flat = read_config_file(&cfg_path)?;
            inputs.push(cfg_path);
            flat
        }
    };
    let flat = apply_overrides(&base, overrides)?;

    let data_path = dir.join("dataset.csv");
    let data = if data_path.exists() {
        let p = match &log.meta.config.data {
            epk_core::config::DataConfig::ModAdd(spec) => spec.modulus,
            _ => {
                return Err(AppError::Validation(anyhow!(
                    "dataset.csv found but the run is not a modular-addition task"
                )))
            }
        };
        let file = fs::File::open(&data_path).map_err(missing)?;
        let split = read_modadd_csv(std::io::BufReader::new(file), p)
            .map_err(|e| AppError::MissingInput(anyhow!("{}: {e}", data_path.display())))?;
        inputs.push(data_path);
        split
    } else {
        log.meta.config.data.generate().map_err(validation)?
    };
    if data.train.len() != log.meta.train_size {
        return Err(AppError::Validation(anyhow!(
            "dataset has {} train samples but the trajectory was recorded with {}",
            data.train.len(),
            log.meta.train_size
        )));
    }
    Ok(RunDir {
        dir,
        log,
        data,
        flat,
        inputs,
    })
}

#[derive(Serialize)]
struct InputRecord {
    path: String,
    bytes: u64,
    sha256: String,
}

#[derive(Serialize)]
struct SeedRecord {
    init_seed: u64,
    batch_seed: u64,
    data_seed: u64,
    prune_seed: u64,
    reinit_seeds: Vec<u64>,
}

/// Provenance sidecar written next to every command's artifacts. All fields
/// are reproducible from config + inputs except `wall_time_ms`.
#[derive(Serialize)]
pub struct Manifest {
    command: String,
    tool: String,
    version: String,
    format_version: u32,
    config: FlatConfig,
    inputs: Vec<InputRecord>,
    seeds: SeedRecord,
    workers: usize,
    wall_time_ms: u128,
    artifacts: Vec<String>,
}

pub struct ManifestBuilder {
    command: String,
    started: Instant,
    inputs: Vec<PathBuf>,
    artifacts: Vec<String>,
}

impl ManifestBuilder {
    pub fn new(command: &str) -> ManifestBuilder {
        ManifestBuilder {
            command: command.to_string(),
            started: Instant::now(),
            inputs: Vec::new(),
            artifacts: Vec::new(),
        }
    }

    pub fn input(&mut self, path: impl Into<PathBuf>) -> &mut Self {
        self.inputs.push(path.into());
        self
    }

    pub fn inputs(&mut self, paths: &[PathBuf]) -> &mut Self {
        self.inputs.extend(paths.iter().cloned());
        self
    }

    pub fn artifact(&mut self, path: &Path) -> &mut Self {
        self.artifacts
            .push(path.file_name().unwrap_or_default().to_string_lossy().into_owned());
        self
    }

    /// Hash the inputs and write `manifest.json` into `dir`.
    pub fn write(self, dir: &Path, flat: &FlatConfig) -> CmdResult<()> {
        let mut inputs = Vec::with_capacity(self.inputs.len());
        for path in &self.inputs {
            let bytes = fs::read(path)
                .with_context(|| format!("hashing input {}", path.display()))
                .map_err(missing)?;
            let mut hasher = Sha256::new();
            hasher.update(&bytes);
            inputs.push(InputRecord {
                path: path.display().to_string(),
                bytes: bytes.len() as u64,
                sha256: format!("{:x}", hasher.finalize()),
            });
        }
        let manifest = Manifest {
            command: self.command,
            tool: "epk".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            format_version: 1,
            config: flat.clone(),
            inputs,
            seeds: SeedRecord {
                init_seed: flat.init_seed,
                batch_seed: flat.batch_seed,
                data_seed: flat.data_seed,
                prune_seed: flat.prune_seed,
                reinit_seeds: flat.reinit_seeds.clone(),
            },
            workers: rayon::current_num_threads(),
            wall_time_ms: self.started.elapsed().as_millis(),
            artifacts: self.artifacts,
        };
        write_json(&dir.join("manifest.json"), &manifest)
    }
}

/// Pretty-printed JSON with a trailing newline; serde_json emits the
/// shortest decimal that round-trips each float, so files are lossless and
/// reruns byte-identical.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CmdResult<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(validation)?;
    text.push('\n');
    fs::write(path, text)
        .with_context(|| format!("writing {}", path.display()))
        .map_err(validation)?;
    Ok(())
}
