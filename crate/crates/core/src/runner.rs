//! Run orchestration: expands a run configuration into (task, condition,
//! seed) episode jobs, executes them on a bounded worker pool, and lays out
//! the run directory (raw traces, redacted public traces, run manifest).

use crate::backend::{MockPolicy, ModelSpec, SamplingParams};
use crate::catalog::{load_catalog, validate_catalog, Catalog};
use crate::controller::{
    run_episode, Condition, ControllerMode, EpisodeBackend, EpisodeConfig,
};
use crate::trace::{redact_trace, write_trace, Trace};
use crate::util::content_hash;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RunError {
    #[error("invalid run config: {0}")]
    InvalidConfig(String),
    #[error("catalog has {0} validation violation(s)")]
    CatalogInvalid(usize),
    #[error("output directory {0} already holds a run; pass resume to continue it")]
    OutDirOccupied(PathBuf),
    #[error(transparent)]
    Catalog(#[from] crate::catalog::CatalogError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("model config error: {0}")]
    ModelConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendSelector {
    Endpoint,
    Mock,
}

impl BackendSelector {
    pub fn as_str(self) -> &'static str {
        match self {
            BackendSelector::Endpoint => "endpoint",
            BackendSelector::Mock => "mock",
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub tasks_path: PathBuf,
    pub models_path: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub conditions: Vec<Condition>,
    pub seeds: Vec<u64>,
    pub controller_mode: ControllerMode,
    pub backend: BackendSelector,
    pub parallelism: usize,
    pub resume: bool,
    pub mock_policy_path: Option<PathBuf>,
    /// Restrict the run to these task ids; empty means the whole catalog.
    pub task_filter: Vec<String>,
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), RunError> {
        if self.conditions.is_empty() {
            return Err(RunError::InvalidConfig("no conditions selected".into()));
        }
        if self.seeds.is_empty() {
            return Err(RunError::InvalidConfig("no seeds given".into()));
        }
        let distinct: BTreeSet<u64> = self.seeds.iter().copied().collect();
        if distinct.len() != self.seeds.len() {
            return Err(RunError::InvalidConfig("seeds must be distinct".into()));
        }
        if self.parallelism == 0 {
            return Err(RunError::InvalidConfig("parallelism must be ≥ 1".into()));
        }
        if self.backend == BackendSelector::Endpoint && self.models_path.is_none() {
            return Err(RunError::InvalidConfig(
                "endpoint backend requires a model config".into(),
            ));
        }
        Ok(())
    }
}

/// Model spec used when no endpoint is involved (mock backend): provenance is
/// recorded but no network request is ever made.
pub fn mock_model_spec() -> ModelSpec {
    ModelSpec {
        name: "mock".to_string(),
        endpoint_url: "mock://scripted".to_string(),
        weights_path: String::new(),
        weights_sha256: String::new(),
        sampling: SamplingParams {
            temperature: 0.0,
            top_p: 1.0,
            max_tokens: 1024,
        },
        chat_template_id: "mock".to_string(),
        context_length: 1_000_000,
        quantization: String::new(),
        revision: String::new(),
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct ModelFile {
    models: Vec<ModelSpec>,
}

pub fn load_models(path: &Path) -> Result<Vec<ModelSpec>, RunError> {
    let text = std::fs::read_to_string(path)?;
    let file: ModelFile =
        serde_json::from_str(&text).map_err(|e| RunError::ModelConfig(e.to_string()))?;
    if file.models.is_empty() {
        return Err(RunError::ModelConfig("no models in config".into()));
    }
    for m in &file.models {
        m.validate().map_err(RunError::ModelConfig)?;
    }
    Ok(file.models)
}

#[derive(Debug, Serialize, Deserialize)]
struct ConditionFile {
    conditions: Vec<Condition>,
}

pub fn load_conditions(path: &Path) -> Result<Vec<Condition>, RunError> {
    let text = std::fs::read_to_string(path)?;
    let file: ConditionFile =
        serde_json::from_str(&text).map_err(|e| RunError::ModelConfig(e.to_string()))?;
    for c in &file.conditions {
        c.validate()
            .map_err(|e| RunError::InvalidConfig(e.to_string()))?;
    }
    Ok(file.conditions)
}

/// Run metadata written next to the traces; records enough hashes to detect
/// input drift on resume or re-analysis.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub harness_version: String,
    pub tasks_path: String,
    pub catalog_hash: String,
    pub conditions_hash: String,
    pub model_hash: String,
    pub controller_mode: String,
    pub backend: String,
    pub seeds: Vec<u64>,
    pub started_at_unix_s: u64,
}

#[derive(Debug, Default)]
pub struct RunSummary {
    pub written: usize,
    pub skipped: usize,
    pub errors: Vec<String>,
}

pub fn traces_dir(out_dir: &Path) -> PathBuf {
    out_dir.join("traces")
}

pub fn public_dir(out_dir: &Path) -> PathBuf {
    out_dir.join("public")
}

pub fn manifest_path(out_dir: &Path) -> PathBuf {
    out_dir.join("run_manifest.json")
}

struct Job {
    manifest: crate::catalog::TaskManifest,
    condition: Condition,
    seed: u64,
}

fn job_key(job: &Job) -> String {
    format!(
        "{}.{}.{}",
        job.manifest.task_id,
        job.condition.name.as_str(),
        job.seed
    )
}

/// Executes a full run. One trace per (task, condition, seed); existing keys
/// are skipped when resuming. Episodes run on a bounded worker pool of
/// `parallelism` threads; trace files are written by the workers themselves
/// (the append-only writer refuses key collisions).
pub fn execute_run(cfg: &RunConfig) -> Result<RunSummary, RunError> {
    cfg.validate()?;
    let catalog = load_catalog(&cfg.tasks_path)?;
    let violations = validate_catalog(&catalog);
    if !violations.is_empty() {
        return Err(RunError::CatalogInvalid(violations.len()));
    }

    let model = match cfg.backend {
        BackendSelector::Mock => mock_model_spec(),
        BackendSelector::Endpoint => {
            let models = load_models(cfg.models_path.as_ref().unwrap())?;
            models[0].clone()
        }
    };
    let mock_policy = match &cfg.mock_policy_path {
        Some(path) => MockPolicy::load(path)?,
        None => MockPolicy::default(),
    };

    let traces = traces_dir(&cfg.out_dir);
    let manifest_file = manifest_path(&cfg.out_dir);
    if manifest_file.exists() && !cfg.resume {
        return Err(RunError::OutDirOccupied(cfg.out_dir.clone()));
    }
    std::fs::create_dir_all(&traces)?;
    std::fs::create_dir_all(public_dir(&cfg.out_dir))?;

    let run_manifest = RunManifest {
        harness_version: crate::HARNESS_VERSION.to_string(),
        tasks_path: cfg.tasks_path.display().to_string(),
        catalog_hash: catalog.hash.clone(),
        conditions_hash: content_hash(&cfg.conditions),
        model_hash: content_hash(&model),
        controller_mode: cfg.controller_mode.as_str().to_string(),
        backend: cfg.backend.as_str().to_string(),
        seeds: cfg.seeds.clone(),
        started_at_unix_s: std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0),
    };
    if !manifest_file.exists() {
        std::fs::write(
            &manifest_file,
            serde_json::to_string_pretty(&run_manifest).expect("manifest serializes"),
        )?;
    }

    let mut jobs: Vec<Job> = Vec::new();
    let mut skipped = 0usize;
    for manifest in &catalog.manifests {
        if !cfg.task_filter.is_empty() && !cfg.task_filter.contains(&manifest.task_id) {
            continue;
        }
        for condition in &cfg.conditions {
            for &seed in &cfg.seeds {
                let job = Job {
                    manifest: manifest.clone(),
                    condition: condition.clone(),
                    seed,
                };
                if traces.join(format!("{}.json", job_key(&job))).exists() {
                    skipped += 1;
                } else {
                    jobs.push(job);
                }
            }
        }
    }

    let queue: Mutex<Vec<Job>> = Mutex::new(jobs);
    let results: Mutex<(usize, Vec<String>)> = Mutex::new((0, Vec::new()));
    let catalog_root = &catalog.root;
    let workspace_base = cfg.out_dir.join("workspaces");
    std::fs::create_dir_all(&workspace_base)?;

    std::thread::scope(|scope| {
        for _ in 0..cfg.parallelism {
            scope.spawn(|| loop {
                let job = match queue.lock().expect("queue lock").pop() {
                    Some(j) => j,
                    None => break,
                };
                let outcome = run_one(
                    cfg,
                    &job,
                    &model,
                    &mock_policy,
                    catalog_root,
                    &workspace_base,
                    &traces,
                );
                let mut res = results.lock().expect("results lock");
                match outcome {
                    Ok(()) => res.0 += 1,
                    Err(e) => res.1.push(format!("{}: {e}", job_key(&job))),
                }
            });
        }
    });

    let (written, errors) = results.into_inner().expect("results lock");
    Ok(RunSummary {
        written,
        skipped,
        errors,
    })
}

fn run_one(
    cfg: &RunConfig,
    job: &Job,
    model: &ModelSpec,
    mock_policy: &MockPolicy,
    catalog_root: &Path,
    workspace_base: &Path,
    traces: &Path,
) -> Result<(), anyhow::Error> {
    let episode = EpisodeConfig {
        task_id: job.manifest.task_id.clone(),
        seed: job.seed,
        condition: job.condition.clone(),
        controller_mode: cfg.controller_mode,
        model: model.clone(),
    };
    let backend = match cfg.backend {
        BackendSelector::Endpoint => EpisodeBackend::Endpoint,
        BackendSelector::Mock => EpisodeBackend::Mock(mock_policy),
    };
    let workspace_root = workspace_base.join(job_key(job));
    let trace = run_episode(&episode, &backend, &job.manifest, catalog_root, &workspace_root)?;
    write_trace(&trace, traces)?;
    let public = redact_trace(&trace, &job.manifest.redaction_rule);
    write_trace(&public, &public_dir(&cfg.out_dir))?;
    Ok(())
}

/// Loads every trace from a run directory's raw trace folder.
pub fn load_run_traces(out_dir: &Path) -> Result<Vec<Trace>, crate::trace::TraceError> {
    crate::trace::read_traces(&traces_dir(out_dir))
}

pub fn load_run_manifest(out_dir: &Path) -> Result<RunManifest, RunError> {
    let text = std::fs::read_to_string(manifest_path(out_dir))?;
    serde_json::from_str(&text).map_err(|e| RunError::ModelConfig(e.to_string()))
}

/// Reloads the catalog recorded in a run manifest, trying the stored path
/// first and then the same filename relative to `fallback_root`.
pub fn reload_catalog(manifest: &RunManifest, fallback_root: &Path) -> Result<Catalog, RunError> {
    let stored = PathBuf::from(&manifest.tasks_path);
    if stored.exists() {
        return Ok(load_catalog(&stored)?);
    }
    let fallback = fallback_root.join(stored.file_name().unwrap_or_default());
    Ok(load_catalog(&fallback)?)
}
