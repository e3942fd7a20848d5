//! Command-line entry point: `run`, `analyze`, `audit`, `validate`, and the
//! `reproduce` meta-command. Exit codes are a stable contract: 0 success,
//! 1 validation/analysis findings, 2 usage error, 3 environment error.

use crate::catalog::{load_catalog, validate_catalog};
use crate::controller::{default_conditions, Condition, ControllerMode};
use crate::report::{
    aggregate_conditions, agreement_report, build_audit_packet, cross_pair_row, decision_gates,
    original_records, parse_reviewer_records, render_agreement_report, render_condition_table,
    render_cross_pair_table, render_gates, ConditionAggregate, CrossPairRow, GateInputs,
    GateThresholds, GateVerdicts, OriginalRecord,
};
use crate::runner::{
    execute_run, load_conditions, load_run_traces, public_dir, reload_catalog, BackendSelector,
    RunConfig, RunError,
};
use crate::stats::{
    bootstrap_ci, mcnemar_exact, sign_permutation_blocked, OutcomePair, PairedComparison,
};
use crate::trace::{audit_redaction, read_traces, Trace};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FINDINGS: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_ENVIRONMENT: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "secagent-eval", version, about = "Trace-based evaluation harness for sandboxed security agents")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run episodes over a task catalog and write traces.
    Run(RunArgs),
    /// Aggregate saved runs into tables, paired tests, and gate verdicts.
    Analyze(AnalyzeArgs),
    /// Redaction audits, blind packets, and reviewer agreement.
    Audit(AuditArgs),
    /// Validate a task catalog and list violations.
    Validate(ValidateArgs),
    /// validate → run (mock) → analyze → audit redaction, in one command.
    Reproduce(ReproduceArgs),
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub tasks: PathBuf,
    #[arg(long)]
    pub models: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, num_args = 1.., default_values = ["aligned", "uncensored"])]
    pub conditions: Vec<String>,
    #[arg(long, num_args = 1.., default_values_t = [0u64])]
    pub seeds: Vec<u64>,
    #[arg(long, default_value = "strict")]
    pub controller_mode: String,
    #[arg(long, default_value = "mock")]
    pub backend: String,
    #[arg(long, default_value_t = 1)]
    pub parallelism: usize,
    #[arg(long)]
    pub resume: bool,
    /// JSON file with condition prefixes; defaults to the built-in set.
    #[arg(long)]
    pub conditions_file: Option<PathBuf>,
    /// Scripted replies for the mock backend.
    #[arg(long)]
    pub mock_policy: Option<PathBuf>,
    /// Restrict to these task ids.
    #[arg(long, num_args = 1..)]
    pub only_tasks: Vec<String>,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    /// Run directories produced by `run`.
    #[arg(required = true)]
    pub run_dirs: Vec<PathBuf>,
    /// Output directory; defaults to <first run dir>/analysis.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AuditArgs {
    /// Audit mode: redaction, packet, or agreement.
    pub mode: String,
    #[arg()]
    pub run_dirs: Vec<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Packet size (packet mode).
    #[arg(long, default_value_t = 120)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Reviewer label files (agreement mode).
    #[arg(long)]
    pub reviewer_a: Option<PathBuf>,
    #[arg(long)]
    pub reviewer_b: Option<PathBuf>,
    /// Packet answer key written by packet mode (agreement mode).
    #[arg(long)]
    pub key: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    #[arg(long)]
    pub tasks: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReproduceArgs {
    #[arg(long)]
    pub tasks: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub mock_policy: Option<PathBuf>,
    #[arg(long, num_args = 1.., default_values = ["aligned", "uncensored"])]
    pub conditions: Vec<String>,
    #[arg(long, num_args = 1.., default_values_t = [0u64, 1, 2, 3, 4])]
    pub seeds: Vec<u64>,
    #[arg(long, default_value = "repair")]
    pub controller_mode: String,
    #[arg(long)]
    pub conditions_file: Option<PathBuf>,
}

fn parse_mode(s: &str) -> Result<ControllerMode, String> {
    match s {
        "strict" => Ok(ControllerMode::Strict),
        "repair" => Ok(ControllerMode::Repair),
        other => Err(format!("unknown controller mode {other:?}")),
    }
}

fn parse_backend(s: &str) -> Result<BackendSelector, String> {
    match s {
        "endpoint" => Ok(BackendSelector::Endpoint),
        "mock" => Ok(BackendSelector::Mock),
        other => Err(format!("unknown backend {other:?}")),
    }
}

/// Resolves condition names against the built-in set or a conditions file,
/// preserving the order the names were given in.
pub fn select_conditions(
    names: &[String],
    file: Option<&Path>,
) -> Result<Vec<Condition>, String> {
    let pool = match file {
        Some(path) => load_conditions(path).map_err(|e| e.to_string())?,
        None => default_conditions(),
    };
    let mut out = Vec::new();
    for name in names {
        let found = pool
            .iter()
            .find(|c| c.name.as_str() == name)
            .ok_or_else(|| format!("condition {name:?} not available"))?;
        out.push(found.clone());
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// analysis

const SECURITY_CLASSES: [&str; 5] = [
    "vuln_localization",
    "reachability",
    "proof_of_trigger",
    "patch_verification",
    "security_report",
];

pub fn class_is_security(task_class: &str) -> bool {
    SECURITY_CLASSES.contains(&task_class)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PairedTestRow {
    pub pair: String,
    pub n_pairs: u64,
    pub b: u64,
    pub c: u64,
    pub delta_pp: f64,
    pub mcnemar_p: f64,
    pub sign_permutation_p: Option<f64>,
    pub bootstrap_ci_95: Option<(f64, f64)>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Analysis {
    pub overall: Vec<ConditionAggregate>,
    pub security: Vec<ConditionAggregate>,
    pub control: Vec<ConditionAggregate>,
    pub cross_pairs: Vec<CrossPairRow>,
    pub paired_tests: Vec<PairedTestRow>,
    pub gate_inputs: Option<GateInputs>,
    pub gates: Option<GateVerdicts>,
    pub notices: Vec<String>,
}

fn matched_pairs(traces: &[Trace], cond_a: &str, cond_b: &str) -> Vec<OutcomePair> {
    let mut a_map: BTreeMap<(String, u64), bool> = BTreeMap::new();
    let mut b_map: BTreeMap<(String, u64), bool> = BTreeMap::new();
    for t in traces {
        let key = (t.task_id.clone(), t.seed);
        let success = t.success == Some(true);
        if t.condition_name == cond_a {
            a_map.insert(key, success);
        } else if t.condition_name == cond_b {
            b_map.insert(key, success);
        }
    }
    a_map
        .into_iter()
        .filter_map(|((task_id, seed), outcome_a)| {
            b_map.get(&(task_id.clone(), seed)).map(|outcome_b| OutcomePair {
                task_id,
                seed,
                outcome_a,
                outcome_b: *outcome_b,
            })
        })
        .collect()
}

fn per_task_diffs(pairs: &[OutcomePair]) -> Vec<f64> {
    let mut by_task: BTreeMap<&str, (f64, f64, f64)> = BTreeMap::new();
    for p in pairs {
        let entry = by_task.entry(&p.task_id).or_insert((0.0, 0.0, 0.0));
        entry.0 += p.outcome_a as u8 as f64;
        entry.1 += p.outcome_b as u8 as f64;
        entry.2 += 1.0;
    }
    by_task
        .values()
        .map(|(a, b, n)| (b - a) / n)
        .collect()
}

fn unpaired_delta_pp(aggs: &[ConditionAggregate], cond_a: &str, cond_b: &str) -> Option<f64> {
    let a = aggs.iter().find(|x| x.condition == cond_a)?;
    let b = aggs.iter().find(|x| x.condition == cond_b)?;
    Some((b.success_rate - a.success_rate) * 100.0)
}

/// Full deterministic analysis pass over a scored trace corpus. Paired tests
/// use the security subset; gates additionally use the control subset for the
/// transfer check.
pub fn analyze_traces(traces: &[Trace]) -> Analysis {
    let security: Vec<Trace> = traces
        .iter()
        .filter(|t| class_is_security(&t.task_class))
        .cloned()
        .collect();
    let control: Vec<Trace> = traces
        .iter()
        .filter(|t| !class_is_security(&t.task_class))
        .cloned()
        .collect();

    let overall_aggs = aggregate_conditions(traces);
    let security_aggs = aggregate_conditions(&security);
    let control_aggs = aggregate_conditions(&control);
    let mut notices = Vec::new();

    let mut conditions: Vec<String> = overall_aggs.iter().map(|a| a.condition.clone()).collect();
    conditions.sort();
    let baseline = if conditions.iter().any(|c| c == "aligned") {
        "aligned".to_string()
    } else {
        conditions.first().cloned().unwrap_or_default()
    };

    let mut cross_pairs = Vec::new();
    let mut paired_tests = Vec::new();
    let others: Vec<&String> = conditions.iter().filter(|c| **c != baseline).collect();
    if others.is_empty() {
        notices.push("single condition run: paired tests skipped".to_string());
    }
    for other in &others {
        let pairs = matched_pairs(&security, &baseline, other);
        let pool = if security_aggs.iter().any(|a| a.condition == baseline)
            && security_aggs.iter().any(|a| a.condition == **other)
        {
            &security_aggs
        } else {
            &overall_aggs
        };
        if let Ok(row) = cross_pair_row(pool, &baseline, other, &pairs) {
            cross_pairs.push(row);
        }
        if pairs.is_empty() {
            notices.push(format!(
                "no matched security pairs for {baseline} vs {other}; paired tests skipped"
            ));
            continue;
        }
        let cmp = PairedComparison::from_pairs(pairs.clone());
        let mcnemar = mcnemar_exact(cmp.b, cmp.c);
        let diffs_by_task = per_task_diffs(&pairs);
        let sign_p = sign_permutation_blocked(&diffs_by_task)
            .ok()
            .map(|t| t.p_value);
        let pair_diffs: Vec<f64> = pairs
            .iter()
            .map(|p| p.outcome_b as u8 as f64 - p.outcome_a as u8 as f64)
            .collect();
        let ci = bootstrap_ci(&pair_diffs, 10_000, 0.95, 0).ok();
        let delta_pp = pair_diffs.iter().sum::<f64>() / pair_diffs.len() as f64 * 100.0;
        paired_tests.push(PairedTestRow {
            pair: format!("{baseline} vs {other}"),
            n_pairs: pairs.len() as u64,
            b: cmp.b,
            c: cmp.c,
            delta_pp,
            mcnemar_p: mcnemar.p_value,
            sign_permutation_p: sign_p,
            bootstrap_ci_95: ci,
        });
    }

    let (gate_inputs, gates) = match paired_tests.first() {
        Some(test) => {
            let other = others[0];
            let aligned_agg = security_aggs.iter().find(|a| a.condition == baseline);
            let less_agg = security_aggs.iter().find(|a| a.condition == **other);
            match (aligned_agg, less_agg) {
                (Some(a), Some(l)) => {
                    let control_delta = unpaired_delta_pp(&control_aggs, &baseline, other)
                        .unwrap_or_else(|| {
                            notices.push(
                                "no control tasks for gate 4; control delta treated as 0"
                                    .to_string(),
                            );
                            0.0
                        });
                    let inputs = GateInputs {
                        security_delta_pp: test.delta_pp,
                        security_mcnemar_p: test.mcnemar_p,
                        aligned_refusal_rate: a.refusal_rate,
                        less_refusal_rate: l.refusal_rate,
                        aligned_suppressed_rate: a.suppressed_rate,
                        less_suppressed_rate: l.suppressed_rate,
                        aligned_failure_histogram: a.label_histogram.clone(),
                        control_delta_pp: control_delta,
                    };
                    let verdicts = decision_gates(&inputs, &GateThresholds::default());
                    (Some(inputs), Some(verdicts))
                }
                _ => {
                    notices.push("security aggregates incomplete; gates skipped".to_string());
                    (None, None)
                }
            }
        }
        None => (None, None),
    };

    Analysis {
        overall: overall_aggs,
        security: security_aggs,
        control: control_aggs,
        cross_pairs,
        paired_tests,
        gate_inputs,
        gates,
        notices,
    }
}

pub fn render_analysis(analysis: &Analysis) -> String {
    let mut out = String::new();
    out.push_str("== all tasks ==\n");
    out.push_str(&render_condition_table(&analysis.overall));
    if !analysis.security.is_empty() {
        out.push_str("\n== security tasks ==\n");
        out.push_str(&render_condition_table(&analysis.security));
    }
    if !analysis.control.is_empty() {
        out.push_str("\n== control tasks ==\n");
        out.push_str(&render_condition_table(&analysis.control));
    }
    if !analysis.cross_pairs.is_empty() {
        out.push_str("\n== cross-pair comparison (security) ==\n");
        out.push_str(&render_cross_pair_table(&analysis.cross_pairs));
    }
    for t in &analysis.paired_tests {
        out.push_str(&format!(
            "\npaired tests {}: n={} b={} c={} delta={:+.1}pp mcnemar_p={:.6e}",
            t.pair, t.n_pairs, t.b, t.c, t.delta_pp, t.mcnemar_p
        ));
        if let Some(p) = t.sign_permutation_p {
            out.push_str(&format!(" sign_perm_p={p:.4}"));
        }
        if let Some((lo, hi)) = t.bootstrap_ci_95 {
            out.push_str(&format!(" ci95=[{lo:.3}, {hi:.3}]"));
        }
        out.push('\n');
    }
    if let Some(gates) = &analysis.gates {
        out.push_str("\n== decision gates ==\n");
        out.push_str(&render_gates(gates));
    }
    for n in &analysis.notices {
        out.push_str(&format!("notice: {n}\n"));
    }
    out
}

// ---------------------------------------------------------------------------
// command implementations

fn env_err(msg: impl std::fmt::Display) -> i32 {
    eprintln!("error: {msg}");
    EXIT_ENVIRONMENT
}

fn usage_err(msg: impl std::fmt::Display) -> i32 {
    eprintln!("usage error: {msg}");
    EXIT_USAGE
}

pub fn cmd_validate(args: &ValidateArgs) -> i32 {
    let catalog = match load_catalog(&args.tasks) {
        Ok(c) => c,
        Err(e) => return env_err(e),
    };
    let violations = validate_catalog(&catalog);
    for v in &violations {
        println!("{v}");
    }
    if violations.is_empty() {
        println!("catalog ok: {} tasks", catalog.manifests.len());
        EXIT_OK
    } else {
        EXIT_FINDINGS
    }
}

pub fn cmd_run(args: &RunArgs) -> i32 {
    let controller_mode = match parse_mode(&args.controller_mode) {
        Ok(m) => m,
        Err(e) => return usage_err(e),
    };
    let backend = match parse_backend(&args.backend) {
        Ok(b) => b,
        Err(e) => return usage_err(e),
    };
    let conditions = match select_conditions(&args.conditions, args.conditions_file.as_deref()) {
        Ok(c) => c,
        Err(e) => return usage_err(e),
    };
    let cfg = RunConfig {
        tasks_path: args.tasks.clone(),
        models_path: args.models.clone(),
        out_dir: args.out.clone(),
        conditions,
        seeds: args.seeds.clone(),
        controller_mode,
        backend,
        parallelism: args.parallelism,
        resume: args.resume,
        mock_policy_path: args.mock_policy.clone(),
        task_filter: args.only_tasks.clone(),
    };
    match execute_run(&cfg) {
        Ok(summary) => {
            println!(
                "run complete: {} written, {} skipped",
                summary.written, summary.skipped
            );
            if summary.errors.is_empty() {
                EXIT_OK
            } else {
                for e in &summary.errors {
                    eprintln!("episode error: {e}");
                }
                eprintln!("partial run preserved; rerun with --resume to continue");
                EXIT_ENVIRONMENT
            }
        }
        Err(RunError::InvalidConfig(e)) => usage_err(e),
        Err(RunError::OutDirOccupied(p)) => {
            usage_err(format!("{} already holds a run; pass --resume", p.display()))
        }
        Err(RunError::CatalogInvalid(n)) => {
            eprintln!("catalog has {n} violations; run `validate` for the listing");
            EXIT_FINDINGS
        }
        Err(e) => env_err(e),
    }
}

fn collect_traces(run_dirs: &[PathBuf]) -> Result<Vec<Trace>, String> {
    let mut all = Vec::new();
    for dir in run_dirs {
        let mut traces =
            load_run_traces(dir).map_err(|e| format!("{}: {e}", dir.display()))?;
        all.append(&mut traces);
    }
    if all.is_empty() {
        return Err("no traces found in the given run directories".to_string());
    }
    Ok(all)
}

pub fn cmd_analyze(args: &AnalyzeArgs) -> i32 {
    let traces = match collect_traces(&args.run_dirs) {
        Ok(t) => t,
        Err(e) => return env_err(e),
    };
    let analysis = analyze_traces(&traces);
    let out_dir = args
        .out
        .clone()
        .unwrap_or_else(|| args.run_dirs[0].join("analysis"));
    if let Err(e) = std::fs::create_dir_all(&out_dir) {
        return env_err(e);
    }
    let json = serde_json::to_string_pretty(&analysis).expect("analysis serializes");
    let text = render_analysis(&analysis);
    if std::fs::write(out_dir.join("analysis.json"), json).is_err()
        || std::fs::write(out_dir.join("tables.txt"), &text).is_err()
    {
        return env_err("failed writing analysis outputs");
    }
    print!("{text}");
    EXIT_OK
}

fn redaction_rules_for(run_dirs: &[PathBuf]) -> Vec<crate::catalog::RedactionRule> {
    let mut rules = Vec::new();
    for dir in run_dirs {
        if let Ok(manifest) = crate::runner::load_run_manifest(dir) {
            if let Ok(catalog) = reload_catalog(&manifest, dir) {
                for m in &catalog.manifests {
                    rules.push(m.redaction_rule.clone());
                }
            }
        }
    }
    rules
}

pub fn cmd_audit(args: &AuditArgs) -> i32 {
    match args.mode.as_str() {
        "redaction" => {
            let mut public = Vec::new();
            for dir in &args.run_dirs {
                match read_traces(&public_dir(dir)) {
                    Ok(mut t) => public.append(&mut t),
                    Err(e) => return env_err(e),
                }
            }
            if public.is_empty() {
                return env_err("no public traces found");
            }
            let rules = redaction_rules_for(&args.run_dirs);
            let rule_refs: Vec<&crate::catalog::RedactionRule> = rules.iter().collect();
            let findings = audit_redaction(&public, &rule_refs);
            println!("redaction audit: {} finding(s)", findings.len());
            for f in &findings {
                println!("{}\t{}\toffset {}", f.trace_key, f.pattern, f.offset);
            }
            if findings.is_empty() {
                EXIT_OK
            } else {
                EXIT_FINDINGS
            }
        }
        "packet" => {
            let public = match args
                .run_dirs
                .iter()
                .map(|d| read_traces(&public_dir(d)))
                .collect::<Result<Vec<_>, _>>()
            {
                Ok(groups) => groups.into_iter().flatten().collect::<Vec<_>>(),
                Err(e) => return env_err(e),
            };
            if public.is_empty() {
                return env_err("no public traces found");
            }
            let packet = build_audit_packet(&public, args.n, args.seed);
            // The answer key is reconstructed from the raw traces so graded
            // fields survive even though the packet itself is blind.
            let raw = match collect_traces(&args.run_dirs) {
                Ok(t) => t,
                Err(e) => return env_err(e),
            };
            let key: BTreeMap<String, OriginalRecord> = original_records(&packet, &raw);
            let out_dir = args
                .out
                .clone()
                .unwrap_or_else(|| args.run_dirs[0].join("audit"));
            if std::fs::create_dir_all(&out_dir).is_err() {
                return env_err("cannot create audit output directory");
            }
            let packet_json = serde_json::to_string_pretty(&packet).expect("packet serializes");
            let key_json = serde_json::to_string_pretty(&key).expect("key serializes");
            if std::fs::write(out_dir.join("packet.json"), packet_json).is_err()
                || std::fs::write(out_dir.join("packet_key.json"), key_json).is_err()
            {
                return env_err("failed writing packet files");
            }
            println!(
                "packet: {} entries written to {}",
                packet.entries.len(),
                out_dir.display()
            );
            if let Some(note) = &packet.shortfall_note {
                println!("note: {note}");
            }
            EXIT_OK
        }
        "agreement" => {
            let (Some(a_path), Some(b_path), Some(key_path)) =
                (&args.reviewer_a, &args.reviewer_b, &args.key)
            else {
                return usage_err("agreement mode needs --reviewer-a, --reviewer-b, and --key");
            };
            let read = |p: &PathBuf| std::fs::read_to_string(p);
            let (a_text, b_text, key_text) = match (read(a_path), read(b_path), read(key_path)) {
                (Ok(a), Ok(b), Ok(k)) => (a, b, k),
                _ => return env_err("missing reviewer or key file"),
            };
            let parse = |t: &str| parse_reviewer_records(t);
            let (a, b) = match (parse(&a_text), parse(&b_text)) {
                (Ok(a), Ok(b)) => (a, b),
                (Err(e), _) | (_, Err(e)) => return env_err(e),
            };
            let key: BTreeMap<String, OriginalRecord> = match serde_json::from_str(&key_text) {
                Ok(k) => k,
                Err(e) => return env_err(e),
            };
            match agreement_report(&a, &b, &key) {
                Ok(report) => {
                    let text = render_agreement_report(&report);
                    print!("{text}");
                    if let Some(out) = &args.out {
                        let _ = std::fs::create_dir_all(out);
                        let _ = std::fs::write(
                            out.join("agreement.json"),
                            serde_json::to_string_pretty(&report).expect("report serializes"),
                        );
                        let _ = std::fs::write(out.join("agreement.txt"), text);
                    }
                    EXIT_OK
                }
                Err(e) => env_err(e),
            }
        }
        other => usage_err(format!("unknown audit mode {other:?}")),
    }
}

pub fn cmd_reproduce(args: &ReproduceArgs) -> i32 {
    let status = cmd_validate(&ValidateArgs {
        tasks: args.tasks.clone(),
    });
    if status != EXIT_OK {
        return status;
    }
    let status = cmd_run(&RunArgs {
        tasks: args.tasks.clone(),
        models: None,
        out: args.out.clone(),
        conditions: args.conditions.clone(),
        seeds: args.seeds.clone(),
        controller_mode: args.controller_mode.clone(),
        backend: "mock".to_string(),
        parallelism: 2,
        resume: false,
        conditions_file: args.conditions_file.clone(),
        mock_policy: args.mock_policy.clone(),
        only_tasks: Vec::new(),
    });
    if status != EXIT_OK {
        return status;
    }
    let status = cmd_analyze(&AnalyzeArgs {
        run_dirs: vec![args.out.clone()],
        out: None,
    });
    if status != EXIT_OK {
        return status;
    }
    cmd_audit(&AuditArgs {
        mode: "redaction".to_string(),
        run_dirs: vec![args.out.clone()],
        out: None,
        n: 120,
        seed: 0,
        reviewer_a: None,
        reviewer_b: None,
        key: None,
    })
}

/// Parses process arguments and dispatches; returns the process exit code.
pub fn run_cli<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            // clap uses exit code 2 for usage errors and 0 for --help/--version.
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match &cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Analyze(args) => cmd_analyze(args),
        Command::Audit(args) => cmd_audit(args),
        Command::Validate(args) => cmd_validate(args),
        Command::Reproduce(args) => cmd_reproduce(args),
    }
}
