//! Task catalogs: machine-readable manifests with local fixtures, success
//! predicates, grounding targets, and redaction rules.

use crate::util::{content_hash, sha256_hex};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::fs;
use std::path::{Component, Path, PathBuf};
use thiserror::Error;
use walkdir::WalkDir;

pub const TOOL_SET: [&str; 4] = ["list_files", "read_file", "run_command", "write_artifact"];

#[derive(Debug, Error)]
pub enum CatalogError {
    #[error("catalog read failed at {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("catalog parse error: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("duplicate task_id: {0}")]
    DuplicateTaskId(String),
    #[error("workspace collision: {0} is not empty")]
    WorkspaceCollision(PathBuf),
    #[error("manifest invalid: {0}")]
    InvalidManifest(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskClass {
    VulnLocalization,
    Reachability,
    ProofOfTrigger,
    PatchVerification,
    SecurityReport,
    SanityCoding,
    StandardCoding,
}

impl TaskClass {
    pub const SECURITY: [TaskClass; 5] = [
        TaskClass::VulnLocalization,
        TaskClass::Reachability,
        TaskClass::ProofOfTrigger,
        TaskClass::PatchVerification,
        TaskClass::SecurityReport,
    ];

    pub fn is_security(self) -> bool {
        Self::SECURITY.contains(&self)
    }

    pub fn name(self) -> &'static str {
        match self {
            TaskClass::VulnLocalization => "vuln_localization",
            TaskClass::Reachability => "reachability",
            TaskClass::ProofOfTrigger => "proof_of_trigger",
            TaskClass::PatchVerification => "patch_verification",
            TaskClass::SecurityReport => "security_report",
            TaskClass::SanityCoding => "sanity_coding",
            TaskClass::StandardCoding => "standard_coding",
        }
    }
}

impl fmt::Display for TaskClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContextPolicy {
    TruncateOldest,
    FailOnOverflow,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Budget {
    pub wall_clock_limit_s: u64,
    pub max_model_calls: u64,
    pub max_tool_output_bytes: usize,
    pub context_policy: ContextPolicy,
}

impl Default for Budget {
    fn default() -> Self {
        Budget {
            wall_clock_limit_s: 300,
            max_model_calls: 20,
            max_tool_output_bytes: 64 * 1024,
            context_policy: ContextPolicy::TruncateOldest,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct GroundingTargets {
    pub expected_files: Vec<String>,
    pub expected_symbols: Vec<String>,
    pub issue_terms: Vec<String>,
    pub evidence_terms: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PredicateClause {
    ArtifactContainsAll { terms: Vec<String> },
    ArtifactMatchesPattern { pattern: String },
    ArtifactExcludesAll { terms: Vec<String> },
    FileExists { path: String },
    VerifyCommandSucceeds { command: String },
    ArtifactFieldEquals { field: String, value: String },
}

impl PredicateClause {
    pub fn kind_name(&self) -> &'static str {
        match self {
            PredicateClause::ArtifactContainsAll { .. } => "artifact_contains_all",
            PredicateClause::ArtifactMatchesPattern { .. } => "artifact_matches_pattern",
            PredicateClause::ArtifactExcludesAll { .. } => "artifact_excludes_all",
            PredicateClause::FileExists { .. } => "file_exists",
            PredicateClause::VerifyCommandSucceeds { .. } => "verify_command_succeeds",
            PredicateClause::ArtifactFieldEquals { .. } => "artifact_field_equals",
        }
    }
}

/// Conjunction of clauses; all must hold.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PredicateSpec {
    pub clauses: Vec<PredicateClause>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct RedactionRule {
    /// (pattern, placeholder) rewrites applied before any trace is published.
    pub patterns: Vec<(String, String)>,
    /// Apply harness-wide secret patterns too.
    pub global: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GroundTruth {
    pub root_cause_file: String,
    pub root_cause_symbol: String,
    pub bug_class: String,
    #[serde(default)]
    pub notes: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TaskManifest {
    pub task_id: String,
    pub task_class: TaskClass,
    pub prompt: String,
    pub fixture_dir: String,
    pub budgets: Budget,
    pub allowed_tools: BTreeSet<String>,
    #[serde(default)]
    pub forbidden_action_patterns: Vec<String>,
    pub ground_truth: GroundTruth,
    pub grounding_targets: GroundingTargets,
    pub success_predicate: PredicateSpec,
    #[serde(default)]
    pub redaction_rule: RedactionRule,
    #[serde(default)]
    pub expected_artifacts: Vec<String>,
}

#[derive(Debug, Deserialize, Serialize)]
struct CatalogFile {
    #[serde(default = "default_schema_version")]
    schema_version: u32,
    tasks: Vec<TaskManifest>,
}

fn default_schema_version() -> u32 {
    1
}

#[derive(Debug, Clone)]
pub struct Catalog {
    pub manifests: Vec<TaskManifest>,
    /// Hex digest over the canonical (key-sorted, whitespace-normalized)
    /// serialization of the catalog file.
    pub hash: String,
    /// Directory containing the catalog file; fixture_dir is resolved here.
    pub root: PathBuf,
}

impl Catalog {
    pub fn get(&self, task_id: &str) -> Option<&TaskManifest> {
        self.manifests.iter().find(|m| m.task_id == task_id)
    }

    pub fn class_histogram(&self) -> BTreeMap<String, usize> {
        let mut hist = BTreeMap::new();
        for m in &self.manifests {
            *hist.entry(m.task_class.name().to_string()).or_insert(0) += 1;
        }
        hist
    }
}

/// Loads a catalog file, preserving manifest order and hashing the canonical
/// serialization so the digest is stable across reloads.
pub fn load_catalog(path: &Path) -> Result<Catalog, CatalogError> {
    let text = fs::read_to_string(path).map_err(|source| CatalogError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let file: CatalogFile = serde_json::from_str(&text)?;
    let mut seen = HashSet::new();
    for m in &file.tasks {
        if !seen.insert(m.task_id.clone()) {
            return Err(CatalogError::DuplicateTaskId(m.task_id.clone()));
        }
    }
    let hash = content_hash(&file);
    let root = path
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."));
    Ok(Catalog {
        manifests: file.tasks,
        hash,
        root,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub task_id: String,
    pub field: String,
    pub reason: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}\t{}\t{}", self.task_id, self.field, self.reason)
    }
}

/// True when a relative path stays inside its root: no absolute components,
/// no traversal above the start. Purely lexical; works for missing paths.
pub fn path_is_contained(rel: &str) -> bool {
    let p = Path::new(rel);
    if p.is_absolute() {
        return false;
    }
    let mut depth: i64 = 0;
    for comp in p.components() {
        match comp {
            Component::Normal(_) => depth += 1,
            Component::ParentDir => {
                depth -= 1;
                if depth < 0 {
                    return false;
                }
            }
            Component::CurDir => {}
            Component::RootDir | Component::Prefix(_) => return false,
        }
    }
    true
}

/// Checks every manifest invariant; violations are data, not errors.
pub fn validate_manifest(m: &TaskManifest, catalog_root: &Path) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut push = |field: &str, reason: String| {
        out.push(Violation {
            task_id: m.task_id.clone(),
            field: field.to_string(),
            reason,
        });
    };

    if m.task_id.is_empty() {
        push("task_id", "task_id must be non-empty".into());
    }
    if !path_is_contained(&m.fixture_dir) {
        push("fixture_dir", format!("escapes catalog root: {}", m.fixture_dir));
    } else {
        let dir = catalog_root.join(&m.fixture_dir);
        match fixture_inventory(&dir) {
            Ok(files) if files.is_empty() => {
                push("fixture_dir", format!("fixture dir has no files: {}", m.fixture_dir))
            }
            Ok(_) => {}
            Err(_) => push("fixture_dir", format!("fixture dir missing: {}", m.fixture_dir)),
        }
    }

    if m.budgets.wall_clock_limit_s == 0
        || m.budgets.max_model_calls == 0
        || m.budgets.max_tool_output_bytes == 0
    {
        push("budgets", "all budget limits must be strictly positive".into());
    }

    for tool in &m.allowed_tools {
        if !TOOL_SET.contains(&tool.as_str()) {
            push("allowed_tools", format!("unknown tool: {tool}"));
        }
    }

    let targets = &m.grounding_targets;
    if m.task_class.is_security() {
        if targets.expected_files.is_empty() {
            push("grounding_targets", "expected_files empty for security class".into());
        }
        if targets.expected_symbols.is_empty() {
            push("grounding_targets", "expected_symbols empty for security class".into());
        }
        if targets.issue_terms.is_empty() {
            push("grounding_targets", "issue_terms empty for security class".into());
        }
        if targets.evidence_terms.is_empty() {
            push("grounding_targets", "evidence_terms empty for security class".into());
        }
    }
    for s in targets
        .expected_files
        .iter()
        .chain(&targets.expected_symbols)
        .chain(&targets.issue_terms)
        .chain(&targets.evidence_terms)
    {
        if s.is_empty() {
            push("grounding_targets", "empty target string".into());
        }
    }
    for f in &targets.expected_files {
        if !path_is_contained(f) {
            push("grounding_targets", format!("expected file escapes fixture: {f}"));
        } else if !catalog_root.join(&m.fixture_dir).join(f).is_file() {
            push("grounding_targets", format!("expected file missing from fixture: {f}"));
        }
    }

    if m.success_predicate.clauses.is_empty() {
        push("success_predicate", "predicate must have at least one clause".into());
    }
    for clause in &m.success_predicate.clauses {
        if let PredicateClause::ArtifactMatchesPattern { pattern } = clause {
            if regex::Regex::new(pattern).is_err() {
                push("success_predicate", format!("invalid pattern: {pattern}"));
            }
        }
    }

    for (pattern, placeholder) in &m.redaction_rule.patterns {
        match regex::Regex::new(pattern) {
            Ok(re) => {
                if re.is_match(placeholder) {
                    push(
                        "redaction_rule",
                        format!("placeholder {placeholder:?} matches its own pattern"),
                    );
                }
            }
            Err(_) => push("redaction_rule", format!("invalid pattern: {pattern}")),
        }
    }

    if !m
        .grounding_targets
        .expected_files
        .contains(&m.ground_truth.root_cause_file)
    {
        push(
            "ground_truth",
            format!(
                "root_cause_file {} not in expected_files",
                m.ground_truth.root_cause_file
            ),
        );
    }

    for p in &m.forbidden_action_patterns {
        if regex::Regex::new(p).is_err() {
            push("forbidden_action_patterns", format!("invalid pattern: {p}"));
        }
    }

    out
}

/// Validates every manifest in a catalog.
pub fn validate_catalog(catalog: &Catalog) -> Vec<Violation> {
    catalog
        .manifests
        .iter()
        .flat_map(|m| validate_manifest(m, &catalog.root))
        .collect()
}

/// One materialized episode workspace: the fixture copy plus an artifacts area.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Workspace {
    pub root: PathBuf,
    /// Sorted relative paths of all fixture files.
    pub inventory: Vec<String>,
}

impl Workspace {
    pub fn artifacts_dir(&self) -> PathBuf {
        self.root.join("artifacts")
    }
}

fn fixture_inventory(dir: &Path) -> std::io::Result<Vec<String>> {
    if !dir.is_dir() {
        return Err(std::io::Error::new(
            std::io::ErrorKind::NotFound,
            format!("{} is not a directory", dir.display()),
        ));
    }
    let mut files = Vec::new();
    for entry in WalkDir::new(dir).sort_by_file_name() {
        let entry = entry.map_err(std::io::Error::other)?;
        if entry.file_type().is_file() {
            let rel = entry
                .path()
                .strip_prefix(dir)
                .expect("walk stays under dir")
                .to_string_lossy()
                .into_owned();
            files.push(rel);
        }
    }
    files.sort();
    Ok(files)
}

/// Copies fixture files byte-identically into a fresh workspace root. The
/// seed participates only in the recorded metadata; materialization itself is
/// deterministic.
pub fn materialize_fixture(
    m: &TaskManifest,
    catalog_root: &Path,
    workspace_root: &Path,
    _seed: u64,
) -> Result<Workspace, CatalogError> {
    if !path_is_contained(&m.fixture_dir) {
        return Err(CatalogError::InvalidManifest(format!(
            "fixture_dir escapes catalog root: {}",
            m.fixture_dir
        )));
    }
    if workspace_root.exists() {
        let non_empty = fs::read_dir(workspace_root)
            .map_err(|source| CatalogError::Io {
                path: workspace_root.to_path_buf(),
                source,
            })?
            .next()
            .is_some();
        if non_empty {
            return Err(CatalogError::WorkspaceCollision(workspace_root.to_path_buf()));
        }
    }
    let fixture = catalog_root.join(&m.fixture_dir);
    let inventory = fixture_inventory(&fixture).map_err(|source| CatalogError::Io {
        path: fixture.clone(),
        source,
    })?;
    for rel in &inventory {
        if !path_is_contained(rel) {
            return Err(CatalogError::InvalidManifest(format!(
                "fixture path escapes root: {rel}"
            )));
        }
        let src = fixture.join(rel);
        let dst = workspace_root.join(rel);
        if let Some(parent) = dst.parent() {
            fs::create_dir_all(parent).map_err(|source| CatalogError::Io {
                path: parent.to_path_buf(),
                source,
            })?;
        }
        fs::copy(&src, &dst).map_err(|source| CatalogError::Io { path: dst, source })?;
    }
    fs::create_dir_all(workspace_root.join("artifacts")).map_err(|source| CatalogError::Io {
        path: workspace_root.join("artifacts"),
        source,
    })?;
    Ok(Workspace {
        root: workspace_root.to_path_buf(),
        inventory,
    })
}

/// Digest of a workspace's fixture content, used by determinism checks.
pub fn workspace_digest(ws: &Workspace) -> std::io::Result<String> {
    let mut acc = String::new();
    for rel in &ws.inventory {
        let bytes = fs::read(ws.root.join(rel))?;
        acc.push_str(rel);
        acc.push(':');
        acc.push_str(&sha256_hex(&bytes));
        acc.push('\n');
    }
    Ok(sha256_hex(acc.as_bytes()))
}
