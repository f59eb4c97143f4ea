use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use anyhow::{anyhow, bail, Context};
use rayon::prelude::*;
use relocsim_core::amm::{Amount, NumericMode};
use relocsim_core::calibration::{
    calibrate_with_tolerance, replay_and_validate, replay_and_validate_as, BPrimeReading, CalibrationError,
    ObservationSet,
};
use relocsim_core::engine::{Address, ExecutionTrace};
use relocsim_core::graph::{
    attribute, build_graph, taint_haircut, taint_poison, trace_to_dot, AttributionResult, GraphError, Quantization,
};
use relocsim_core::numeric::Scalar;
use relocsim_core::planner::FundingPolicy;
use relocsim_core::scenario::{build_scenario, builtin_names, builtin_source, ScenarioConfig};
use relocsim_core::suites;
use relocsim_core::tracer::{fmt_tokens, recover_from_trace, MigrationReport, TraceError};
use serde::Serialize;
use sha2::{Digest, Sha256};

/// How a command failed, which decides the exit code.
pub enum Failure {
    /// The analysis ran and found an inconsistency (exit 1).
    Inconsistent(String),
    /// Bad arguments, files or configs (exit 2).
    Usage(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Usage(e)
    }
}

type CmdResult = Result<(), Failure>;

#[derive(Debug, Serialize)]
struct RunManifest {
    scenario: String,
    config_hash: String,
    numeric_mode: NumericMode,
    seed: Option<u64>,
    outputs: Vec<String>,
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn load_config(spec: &str) -> anyhow::Result<(String, ScenarioConfig)> {
    let text = match spec.strip_prefix("builtin:") {
        Some(name) => builtin_source(name)
            .ok_or_else(|| anyhow!("unknown builtin scenario {name}; known: {}", builtin_names().join(", ")))?
            .to_string(),
        None => fs::read_to_string(spec).with_context(|| format!("reading {spec}"))?,
    };
    let cfg = ScenarioConfig::from_toml(&text)?;
    Ok((text, cfg))
}

fn simulate_one(spec: &str, out: &Path) -> anyhow::Result<RunManifest> {
    let (text, cfg) = load_config(spec)?;
    let scenario = build_scenario(&cfg)?;
    let (_, trace) = scenario.run()?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let json = out.join("trace.json");
    let dot = out.join("trace.dot");
    fs::write(&json, trace.to_json() + "\n")?;
    fs::write(&dot, trace_to_dot(&trace))?;
    Ok(RunManifest {
        scenario: scenario.name,
        config_hash: sha256_hex(text.as_bytes()),
        numeric_mode: trace.numeric_mode,
        seed: None,
        outputs: vec![json.display().to_string(), dot.display().to_string()],
    })
}

pub fn simulate(config: Option<&str>, all: bool, out: &Path) -> CmdResult {
    if !all {
        let spec = config.ok_or_else(|| anyhow!("a config path or --all is required"))?;
        let manifest = simulate_one(spec, out)?;
        println!("{}", serde_json::to_string_pretty(&manifest).expect("manifest serializes"));
        return Ok(());
    }
    let started = Instant::now();
    let names = builtin_names();
    let results: Vec<anyhow::Result<RunManifest>> = names
        .par_iter()
        .map(|name| simulate_one(&format!("builtin:{name}"), &out.join(name)))
        .collect();
    let mut manifests = Vec::new();
    for (name, r) in names.iter().zip(results) {
        manifests.push(r.with_context(|| format!("scenario {name}"))?);
    }
    fs::write(
        out.join("manifest.json"),
        serde_json::to_string_pretty(&manifests).expect("manifest serializes") + "\n",
    )
    .context("writing manifest")?;
    let stamp = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    let log = format!(
        "finished_unix={stamp} scenarios={} elapsed_ms={}\n",
        manifests.len(),
        started.elapsed().as_millis()
    );
    fs::write(out.join("run.log"), log).context("writing run log")?;
    println!("simulated {} scenarios into {}", manifests.len(), out.display());
    Ok(())
}

fn read_trace(path: &Path) -> anyhow::Result<ExecutionTrace> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    ExecutionTrace::from_json(&text).with_context(|| format!("parsing {}", path.display()))
}

pub struct AnalyzeArgs {
    pub trace: PathBuf,
    pub principal: Option<String>,
    pub beneficiary: Option<String>,
    pub asset: Option<String>,
    pub quantum: Option<String>,
    pub json: bool,
}

#[derive(Serialize)]
struct Analysis {
    principal: Option<Address>,
    beneficiary: Option<Address>,
    transfer_layer: Vec<AttributionResult>,
    transfer_recoverable: bool,
    semantic: Option<MigrationReport>,
    semantic_error: Option<String>,
}

fn quantization(trace: &ExecutionTrace, asset: &str, quantum: Option<&str>) -> anyhow::Result<Quantization> {
    let Some(q) = quantum else {
        return Ok(Quantization::Auto);
    };
    let id = trace.asset(asset).ok_or_else(|| anyhow!("trace has no asset {asset}"))?;
    let v = Scalar::parse(q).map_err(|e| anyhow!("bad quantum {q}: {e}"))?;
    let raw = match trace.numeric_mode {
        NumericMode::Integer => v.scale_pow10(id.decimals as i32),
        NumericMode::Exact => v,
    };
    Ok(Quantization::Explicit(Amount::new(raw)?))
}

/// Attribution of `p` to `b` on every asset graph where `p` appears.
fn transfer_layer(
    trace: &ExecutionTrace,
    p: &Address,
    b: &Address,
    only: Option<&str>,
    quantum: Option<&str>,
) -> anyhow::Result<Vec<AttributionResult>> {
    let mut out = Vec::new();
    for asset in &trace.assets {
        if only.is_some_and(|s| s != asset.symbol) {
            continue;
        }
        let g = build_graph(trace, asset);
        if !g.nodes.contains(p) && only.is_none() {
            continue;
        }
        let q = quantization(trace, &asset.symbol, quantum)?;
        match attribute(&g, p, b, &q) {
            Ok(r) => out.push(r),
            Err(e @ GraphError::BudgetExceeded { .. }) => bail!("{e} (pass --quantum)"),
            Err(e) => bail!("{}: {e}", asset.symbol),
        }
    }
    Ok(out)
}

pub fn analyze(args: &AnalyzeArgs) -> CmdResult {
    let trace = read_trace(&args.trace)?;
    let semantic = recover_from_trace(&trace, &[]);
    let first = semantic.as_ref().ok().and_then(|r| r.migrations.first());
    let principal = args.principal.as_deref().map(Address::new).or_else(|| first.map(|m| m.principal.clone()));
    let beneficiary = args.beneficiary.as_deref().map(Address::new).or_else(|| first.map(|m| m.beneficiary.clone()));
    let attributions = match (&principal, &beneficiary) {
        (Some(p), Some(b)) => transfer_layer(&trace, p, b, args.asset.as_deref(), args.quantum.as_deref())?,
        _ => Vec::new(),
    };
    let recoverable = attributions.iter().any(|r| r.recoverable);
    let analysis = Analysis {
        principal: principal.clone(),
        beneficiary: beneficiary.clone(),
        transfer_recoverable: recoverable,
        transfer_layer: attributions,
        semantic_error: semantic.as_ref().err().map(|e| e.to_string()),
        semantic: semantic.as_ref().ok().cloned(),
    };
    if args.json {
        println!("{}", serde_json::to_string_pretty(&analysis).expect("analysis serializes"));
    } else {
        match (&principal, &beneficiary) {
            (Some(p), Some(b)) => {
                println!("transfer-layer: {}", if recoverable { "RECOVERABLE" } else { "NOT RECOVERABLE" });
                for r in &analysis.transfer_layer {
                    println!(
                        "  {} {p} -> {b}: min {} max {} ({} decompositions, parcel {})",
                        r.asset,
                        fmt_tokens(&trace, &r.asset, r.p_to_b_min.value()),
                        fmt_tokens(&trace, &r.asset, r.p_to_b_max.value()),
                        r.decomposition_count,
                        fmt_tokens(&trace, &r.asset, r.quantum.value()),
                    );
                }
            }
            _ => println!("transfer-layer: no principal/beneficiary pair to attribute"),
        }
        match &semantic {
            Ok(r) => {
                for line in r.summary(&trace).lines() {
                    println!("semantic: {line}");
                }
            }
            Err(e) => println!("semantic: {e}"),
        }
    }
    match semantic {
        Err(e @ TraceError::AmbiguousPairing { .. }) => Err(Failure::Inconsistent(e.to_string())),
        Err(e) => Err(Failure::Inconsistent(e.to_string())),
        Ok(_) => Ok(()),
    }
}

fn load_observations(spec: &str) -> Result<ObservationSet, Failure> {
    if spec == "fork_reference" {
        return Ok(ObservationSet::fork_reference());
    }
    let text = fs::read_to_string(spec).with_context(|| format!("reading {spec}"))?;
    ObservationSet::from_json(&text).map_err(|e| match e {
        CalibrationError::InvalidObservation { .. } => Failure::Usage(e.into()),
        e => Failure::Inconsistent(e.to_string()),
    })
}

pub fn calibrate(spec: &str, out: Option<&Path>, tolerance: f64) -> CmdResult {
    let obs = load_observations(spec)?;
    let cal = match calibrate_with_tolerance(&obs, tolerance) {
        Ok(c) => c,
        Err(e @ CalibrationError::InvalidObservation { .. }) => return Err(Failure::Usage(e.into())),
        Err(e) => return Err(Failure::Inconsistent(e.to_string())),
    };
    let fmt_pool = |p: &relocsim_core::amm::PoolState| {
        format!(
            "{} {} / {} {} (fee {} bps)",
            p.reserve0.value().to_decimal_string(6),
            p.asset0.symbol,
            p.reserve1.value().to_decimal_string(6),
            p.asset1.symbol,
            p.fee_bps
        )
    };
    println!("method {} ({} iterations)", cal.method, cal.iterations);
    println!("pool1 {}", fmt_pool(&cal.pool1));
    println!("pool2 {}", fmt_pool(&cal.pool2));
    println!("{:<28} {:>12}", "equation", "rel. error");
    for r in &cal.residuals {
        println!("{:<28} {:>12.3e}", r.equation, r.relative_error);
    }
    let replay = replay_and_validate(&cal, &obs).map_err(|e| Failure::Inconsistent(e.to_string()))?;
    println!("replay ({:?} reading, {:?})", replay.b_prime_reading, replay.funding_policy);
    println!("{:<10} {:>22} {:>22} {:>12}", "quantity", "observed", "replayed", "rel. error");
    for c in &replay.checks {
        println!("{:<10} {:>22} {:>22} {:>12.3e}", c.quantity, c.observed, c.replayed, c.relative_error);
    }
    println!("efficiency {:.5}", replay.efficiency);
    let reading = cal.b_prime_reading.unwrap_or(BPrimeReading::FlashBorrow);
    if let Ok(alt) = replay_and_validate_as(&cal, &obs, reading, FundingPolicy::ShortfallFromPrincipal) {
        println!("efficiency {:.5} if the principal also covers the step-2 shortfall", alt.efficiency);
    }
    if let Some(path) = out {
        fs::write(path, cal.to_json() + "\n").with_context(|| format!("writing {}", path.display()))?;
    }
    if cal.max_residual() > tolerance.max(1e-9) || replay.max_relative_error > 1e-3 {
        return Err(Failure::Inconsistent(format!(
            "replay error {:.3e} exceeds 1e-3",
            replay.max_relative_error
        )));
    }
    Ok(())
}

#[derive(Serialize)]
struct TaintSummary {
    asset: String,
    sources: Vec<Address>,
    poison: BTreeMap<Address, bool>,
    haircut: BTreeMap<Address, String>,
}

#[derive(Serialize)]
struct RunEntry {
    run: String,
    bundle_id: String,
    semantic: Option<MigrationReport>,
    semantic_error: Option<String>,
    transfer_layer: Vec<AttributionResult>,
    taint: Vec<TaintSummary>,
}

#[derive(Serialize)]
struct EfficiencyRow {
    run: String,
    efficiency: Option<String>,
    transfer_recoverable: bool,
    migrations: usize,
}

#[derive(Serialize)]
struct Report {
    runs: Vec<RunEntry>,
    efficiency_table: Vec<EfficiencyRow>,
}

fn find_traces(dir: &Path) -> anyhow::Result<Vec<(String, PathBuf)>> {
    if !dir.is_dir() {
        bail!("{} is not a directory", dir.display());
    }
    let mut found = Vec::new();
    if dir.join("trace.json").is_file() {
        found.push((".".to_string(), dir.join("trace.json")));
    }
    let mut subdirs: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join("trace.json").is_file())
        .collect();
    subdirs.sort();
    for d in subdirs {
        let name = d.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        found.push((name, d.join("trace.json")));
    }
    if found.is_empty() {
        bail!("no trace.json found in {}", dir.display());
    }
    Ok(found)
}

fn analyze_run(name: String, trace: &ExecutionTrace) -> anyhow::Result<RunEntry> {
    let semantic = recover_from_trace(trace, &[]);
    let mut transfer = Vec::new();
    let mut taint = Vec::new();
    if let Ok(r) = &semantic {
        for m in &r.migrations {
            transfer.extend(transfer_layer(trace, &m.principal, &m.beneficiary, None, None)?);
            let asset = trace.asset(&m.source_asset).ok_or_else(|| anyhow!("unknown asset {}", m.source_asset))?;
            let g = build_graph(trace, asset);
            let sources: BTreeSet<Address> = [m.principal.clone()].into();
            taint.push(TaintSummary {
                asset: asset.symbol.clone(),
                sources: sources.iter().cloned().collect(),
                poison: taint_poison(&g, &sources),
                haircut: taint_haircut(&g, &sources)
                    .into_iter()
                    .map(|(k, v)| (k, v.to_decimal_string(12)))
                    .collect(),
            });
        }
    }
    Ok(RunEntry {
        run: name,
        bundle_id: trace.bundle_id.clone(),
        semantic_error: semantic.as_ref().err().map(|e| e.to_string()),
        semantic: semantic.ok(),
        transfer_layer: transfer,
        taint,
    })
}

pub fn report(dir: &Path) -> CmdResult {
    let traces = find_traces(dir)?;
    let loaded: Vec<(String, ExecutionTrace)> = traces
        .into_iter()
        .map(|(n, p)| Ok((n, read_trace(&p)?)))
        .collect::<anyhow::Result<_>>()?;
    let runs: Vec<RunEntry> = loaded
        .par_iter()
        .map(|(n, t)| analyze_run(n.clone(), t))
        .collect::<anyhow::Result<_>>()?;
    let table: Vec<EfficiencyRow> = runs
        .iter()
        .map(|r| EfficiencyRow {
            run: r.run.clone(),
            efficiency: r.semantic.as_ref().and_then(|s| s.efficiency.as_ref()).map(|e| e.to_decimal_string(6)),
            transfer_recoverable: r.transfer_layer.iter().any(|a| a.recoverable),
            migrations: r.semantic.as_ref().map_or(0, |s| s.migrations.len()),
        })
        .collect();
    let mut text = format!("{:<36} {:>10} {:>11} {:>16}\n", "run", "migrations", "efficiency", "transfer-layer");
    for row in &table {
        text.push_str(&format!(
            "{:<36} {:>10} {:>11} {:>16}\n",
            row.run,
            row.migrations,
            row.efficiency.as_deref().unwrap_or("-"),
            if row.transfer_recoverable { "recoverable" } else { "not recoverable" }
        ));
    }
    for r in &runs {
        if let Some(e) = &r.semantic_error {
            text.push_str(&format!("{}: {e}\n", r.run));
        }
    }
    let report = Report {
        runs,
        efficiency_table: table,
    };
    fs::write(
        dir.join("report.json"),
        serde_json::to_string_pretty(&report).expect("report serializes") + "\n",
    )
    .context("writing report.json")?;
    fs::write(dir.join("report.txt"), &text).context("writing report.txt")?;
    print!("{text}");
    let failed: Vec<&str> = report.runs.iter().filter(|r| r.semantic_error.is_some()).map(|r| r.run.as_str()).collect();
    if !failed.is_empty() {
        return Err(Failure::Inconsistent(format!("semantic analysis failed for {}", failed.join(", "))));
    }
    Ok(())
}

pub fn selftest(cases: usize, seed: u64) -> CmdResult {
    let outcomes = suites::run_all(cases, seed);
    let mut failed = Vec::new();
    for o in &outcomes {
        println!("{} {} ({} cases)", if o.passed() { "PASS" } else { "FAIL" }, o.name, o.cases);
        for f in &o.failures {
            println!("  {f}");
        }
        if !o.passed() {
            failed.push(o.name.clone());
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::Inconsistent(format!("failed suites: {}", failed.join(", "))))
    }
}
