use std::path::{Path, PathBuf};
use std::time::Instant;

use gcgm_core::dataset::{load_dataset, load_dataset_with, load_schema, Dataset, LoadOptions, VarType};
use gcgm_core::graph::pair_from_index;
use gcgm_core::latent::initialize_latent;
use gcgm_core::mcmc::{run_chains_on, Chain, ChainRun, Checkpoint};
use gcgm_core::summary::{
    density_stats, pearson_baseline, summarize, threshold_network, thresholded_parcor_matrix,
};
use gcgm_core::synthetic::{
    exact_posterior_p3, generate, read_truth, score_probabilities, write_fixture, ColumnPlan, Distortion,
    RecoveryReport, SyntheticSpec, Truth,
};
use gcgm_core::{Error, Result};
use serde::Serialize;

use crate::args::{CompareArgs, FitArgs, OracleArgs, SimulateArgs};
use crate::export::{export_dot, export_graphml, sig6, write_densities, write_edge_summary, write_matrix};
use crate::manifest::{
    Comparison, ConvergenceVerdict, FitConfig, GroupEntry, InputFile, RunManifest, MANIFEST_FORMAT, MANIFEST_VERSION,
};

/// Maximum MCMC-vs-oracle gap accepted by `compare`.
pub const ORACLE_TOLERANCE: f64 = 0.02;

/// Worker cap: `GCGM_THREADS` if set, else the available parallelism.
pub fn worker_threads() -> usize {
    let available = std::thread::available_parallelism().map_or(1, |n| n.get());
    std::env::var("GCGM_THREADS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&t| t > 0)
        .unwrap_or(available)
}

/// Progress sink for stderr.
#[derive(Debug, Clone, Copy)]
pub struct Log {
    pub quiet: bool,
}

impl Log {
    pub fn info(&self, msg: impl AsRef<str>) {
        if !self.quiet {
            eprintln!("[gcgm] {}", msg.as_ref());
        }
    }
}

fn model_names(ds: &Dataset) -> Vec<String> {
    ds.model_schema().into_iter().map(|s| s.abbreviation).collect()
}

struct FitOutputs {
    files: Vec<String>,
    run: ChainRun,
    comparison: Option<Comparison>,
}

fn write_fit_outputs(dir: &Path, ds: &Dataset, run: ChainRun, cfg: &FitConfig, log: Log) -> Result<FitOutputs> {
    std::fs::create_dir_all(dir)?;
    let names = model_names(ds);
    let p = names.len();
    let summaries = summarize(&run.accumulator)?;
    let mut files = Vec::new();

    write_edge_summary(&dir.join("edge_summary.csv"), &summaries, &names)?;
    files.push("edge_summary.csv".to_string());

    let parcor = thresholded_parcor_matrix(&summaries, p, cfg.threshold);
    write_matrix(&dir.join("parcor_matrix.csv"), &parcor, &names)?;
    files.push("parcor_matrix.csv".to_string());

    let pearson = pearson_baseline(ds, cfg.pearson_alpha)?;
    write_matrix(&dir.join("pearson_matrix.csv"), &pearson, &names)?;
    files.push("pearson_matrix.csv".to_string());
    let comparison = Some(Comparison {
        pearson: density_stats(&pearson),
        partial: density_stats(&parcor),
    });

    let net = threshold_network(&summaries, p, cfg.threshold)?;
    std::fs::write(dir.join("network.dot"), export_dot(&net, &names))?;
    std::fs::write(dir.join("network.graphml"), export_graphml(&net, &names))?;
    files.push("network.dot".to_string());
    files.push("network.graphml".to_string());
    log.info(format!(
        "{} of {} pairs at or above threshold {}",
        net.edges.len(),
        summaries.len(),
        cfg.threshold
    ));

    files.extend(write_densities(dir, &run.accumulator)?);
    Ok(FitOutputs { files, run, comparison })
}

struct CheckpointPlan<'a> {
    path: Option<&'a Path>,
    every: usize,
    resume: Option<&'a Path>,
}

fn sample(ds: &Dataset, cfg: &FitConfig, plan: &CheckpointPlan, log: Log) -> Result<ChainRun> {
    let latent = initialize_latent(ds)?;
    if plan.path.is_none() && plan.resume.is_none() {
        return run_chains_on(latent, &cfg.mcmc, worker_threads());
    }
    if cfg.mcmc.chains != 1 {
        return Err(Error::ConfigInvalid("checkpointing supports a single chain".into()));
    }
    let mut chain = match plan.resume {
        Some(path) => {
            let cp = Checkpoint::from_json(&std::fs::read_to_string(path)?)?;
            if cp.config != cfg.mcmc {
                return Err(Error::Checkpoint(
                    "checkpoint was written with a different sampler configuration".into(),
                ));
            }
            log.info(format!("resuming from iteration {}", cp.iteration));
            Chain::resume(latent, cp)?
        }
        None => Chain::new(latent, &cfg.mcmc, 0)?,
    };
    while !chain.is_finished() {
        chain.run(Some(plan.every.max(1)))?;
        if let Some(path) = plan.path {
            let tmp = path.with_extension("tmp");
            std::fs::write(&tmp, chain.checkpoint().to_json()?)?;
            std::fs::rename(&tmp, path)?;
            log.info(format!("checkpoint at iteration {}", chain.state().iteration));
        }
    }
    Ok(chain.into_run())
}

fn group_directory(label: &str, taken: &[GroupEntry]) -> String {
    let mut base: String = label
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || "-_.".contains(c) { c } else { '_' })
        .collect();
    if base.is_empty() || base.starts_with('.') {
        base = format!("group_{base}");
    }
    let mut name = base.clone();
    let mut k = 2;
    while taken.iter().any(|g| g.directory == name) {
        name = format!("{base}_{k}");
        k += 1;
    }
    name
}

pub fn cmd_fit(args: &FitArgs, log: Log) -> Result<RunManifest> {
    let started = Instant::now();
    let cfg = args.mcmc.resolve()?;
    let data = InputFile::hash(&args.data)?;
    let schema = InputFile::hash(&args.schema)?;
    let ds = load_dataset(&args.data, &args.schema)?;
    let plan = CheckpointPlan {
        path: args.checkpoint.as_deref(),
        every: args.checkpoint_every,
        resume: args.resume.as_deref(),
    };
    std::fs::create_dir_all(&args.out)?;

    let Some(column) = &args.group_by else {
        log.info(format!(
            "fitting {} rows x {} variables, {} iterations",
            ds.n(),
            model_names(&ds).len(),
            cfg.mcmc.iterations
        ));
        let run = sample(&ds, &cfg, &plan, log)?;
        let out = write_fit_outputs(&args.out, &ds, run, &cfg, log)?;
        let manifest = RunManifest {
            format: MANIFEST_FORMAT.into(),
            version: MANIFEST_VERSION,
            tool_version: env!("CARGO_PKG_VERSION").into(),
            config: cfg,
            data,
            schema,
            group: None,
            rows: ds.n(),
            variables: model_names(&ds),
            wall_clock_seconds: started.elapsed().as_secs_f64(),
            convergence: ConvergenceVerdict::from(&out.run.convergence),
            chains: out.run.stats.clone(),
            comparison: out.comparison,
            groups: Vec::new(),
            outputs: out.files,
        };
        manifest.write(&args.out)?;
        report_convergence(&manifest.convergence, log);
        return Ok(manifest);
    };

    if plan.path.is_some() || plan.resume.is_some() {
        return Err(Error::ConfigInvalid("checkpointing is not available with --group-by".into()));
    }
    let groups = ds.split_by_group(column)?;
    let mut entries: Vec<GroupEntry> = Vec::new();
    let mut all_files = Vec::new();
    let mut worst = ConvergenceVerdict {
        converged: true,
        max_abs_diff: 0.0,
        tolerance: gcgm_core::mcmc::CONVERGENCE_TOL,
        worst_pair: None,
    };
    for (label, sub) in &groups {
        let group_started = Instant::now();
        let directory = group_directory(label, &entries);
        log.info(format!("group {label:?}: {} rows", sub.n()));
        let dir = args.out.join(&directory);
        let run = sample(sub, &cfg, &plan, log)?;
        let out = write_fit_outputs(&dir, sub, run, &cfg, log)?;
        let verdict = ConvergenceVerdict::from(&out.run.convergence);
        let manifest = RunManifest {
            format: MANIFEST_FORMAT.into(),
            version: MANIFEST_VERSION,
            tool_version: env!("CARGO_PKG_VERSION").into(),
            config: cfg.clone(),
            data: data.clone(),
            schema: schema.clone(),
            group: Some((column.clone(), label.clone())),
            rows: sub.n(),
            variables: model_names(sub),
            wall_clock_seconds: group_started.elapsed().as_secs_f64(),
            convergence: verdict.clone(),
            chains: out.run.stats.clone(),
            comparison: out.comparison,
            groups: Vec::new(),
            outputs: out.files.clone(),
        };
        manifest.write(&dir)?;
        worst.converged &= verdict.converged;
        if verdict.max_abs_diff >= worst.max_abs_diff {
            worst.max_abs_diff = verdict.max_abs_diff;
            worst.worst_pair = verdict.worst_pair;
        }
        all_files.push(format!("{directory}/manifest.json"));
        all_files.extend(out.files.iter().map(|f| format!("{directory}/{f}")));
        entries.push(GroupEntry {
            label: label.clone(),
            directory,
            rows: sub.n(),
        });
    }
    let manifest = RunManifest {
        format: MANIFEST_FORMAT.into(),
        version: MANIFEST_VERSION,
        tool_version: env!("CARGO_PKG_VERSION").into(),
        config: cfg,
        data,
        schema,
        group: None,
        rows: ds.n(),
        variables: model_names(&ds),
        wall_clock_seconds: started.elapsed().as_secs_f64(),
        convergence: worst,
        chains: Vec::new(),
        comparison: None,
        groups: entries,
        outputs: all_files,
    };
    manifest.write(&args.out)?;
    report_convergence(&manifest.convergence, log);
    Ok(manifest)
}

fn report_convergence(v: &ConvergenceVerdict, log: Log) {
    let verdict = if v.converged { "converged" } else { "NOT converged" };
    log.info(format!(
        "{verdict}: half-vs-half max gap {} (tolerance {})",
        sig6(v.max_abs_diff),
        v.tolerance
    ));
}

/// Column plan with continuous columns first, then `ordinal`, then `binary`.
pub fn mixed_plan(p: usize, ordinal: usize, bins: usize, binary: usize, distort: Option<Distortion>) -> Result<Vec<ColumnPlan>> {
    if ordinal + binary > p {
        return Err(Error::ConfigInvalid(format!(
            "{ordinal} ordinal + {binary} binary columns exceed p = {p}"
        )));
    }
    let continuous = p - ordinal - binary;
    let base = distort.map_or(ColumnPlan::Identity, |d| ColumnPlan::Monotone { distortion: d });
    Ok(std::iter::repeat_n(base, continuous)
        .chain(std::iter::repeat_n(ColumnPlan::OrdinalBins { k: bins }, ordinal))
        .chain(std::iter::repeat_n(ColumnPlan::BinaryThreshold, binary))
        .collect())
}

pub fn cmd_simulate(args: &SimulateArgs, log: Log) -> Result<()> {
    let spec: SyntheticSpec = match &args.spec {
        Some(path) => serde_json::from_str(&std::fs::read_to_string(path)?)?,
        None => {
            let distort = args
                .distort
                .as_deref()
                .map(|d| {
                    serde_json::from_value::<Distortion>(serde_json::Value::String(d.to_string()))
                        .map_err(|_| Error::ConfigInvalid(format!("unknown distortion {d:?} (exp, cubic, sigmoid)")))
                })
                .transpose()?;
            let mut spec = SyntheticSpec::gaussian(args.p, args.n, args.edge_density, args.graph_seed, args.data_seed);
            if args.ordinal + args.binary > 0 || distort.is_some() {
                spec.column_plan = mixed_plan(args.p, args.ordinal, args.ordinal_bins, args.binary, distort)?;
            }
            spec
        }
    };
    let (ds, g, k) = generate(&spec)?;
    write_fixture(&args.out, &ds, &Truth::new(&spec, &g, &k))?;
    log.info(format!(
        "wrote fixture with {} rows, {} true edges to {}",
        ds.n(),
        g.num_edges(),
        args.out.display()
    ));
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
pub struct PairProbability {
    pub i: usize,
    pub j: usize,
    pub var_i: String,
    pub var_j: String,
    pub probability: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct GraphProbability {
    pub edges: Vec<(usize, usize)>,
    pub probability: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct OracleReport {
    pub edge_prior: f64,
    pub b: f64,
    pub rows: usize,
    pub edges: Vec<PairProbability>,
    pub graphs: Vec<GraphProbability>,
}

fn fixture_paths(dir: &Path) -> (PathBuf, PathBuf) {
    (dir.join("data.csv"), dir.join("schema.json"))
}

fn oracle_report(ds: &Dataset, edge_prior: f64, b: f64) -> Result<OracleReport> {
    let params = gcgm_core::gwishart::GWishartParams::new(b, nalgebra::DMatrix::identity(3, 3))?;
    let exact = exact_posterior_p3(ds, edge_prior, &params)?;
    let names = model_names(ds);
    Ok(OracleReport {
        edge_prior,
        b,
        rows: ds.n(),
        edges: (0..3)
            .map(|k| {
                let (i, j) = pair_from_index(3, k);
                PairProbability {
                    i,
                    j,
                    var_i: names[i].clone(),
                    var_j: names[j].clone(),
                    probability: exact.edge_probabilities[(i, j)],
                }
            })
            .collect(),
        graphs: exact
            .graphs
            .iter()
            .map(|(g, w)| GraphProbability {
                edges: g.edges(),
                probability: w.exp(),
            })
            .collect(),
    })
}

pub fn cmd_oracle(args: &OracleArgs, log: Log) -> Result<OracleReport> {
    let (data, schema) = match (&args.fixture, &args.data, &args.schema) {
        (Some(dir), _, _) => fixture_paths(dir),
        (None, Some(d), Some(s)) => (d.clone(), s.clone()),
        _ => return Err(Error::ConfigInvalid("oracle needs --fixture or both --data and --schema".into())),
    };
    let ds = load_dataset_with(&data, &schema, LoadOptions { min_rows: 0 })?;
    let report = oracle_report(&ds, args.edge_prior, args.b)?;
    write_json(&args.out, &report)?;
    log.info(format!("wrote exact posterior to {}", args.out.display()));
    Ok(report)
}

#[derive(Debug, Clone, Serialize)]
pub struct OracleGap {
    pub max_gap: f64,
    pub tolerance: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct CompareReport {
    pub recovery: RecoveryReport,
    pub convergence: ConvergenceVerdict,
    pub oracle: Option<OracleGap>,
}

pub fn cmd_compare(args: &CompareArgs, log: Log) -> Result<CompareReport> {
    let cfg = args.mcmc.resolve()?;
    let (data, schema_path) = fixture_paths(&args.fixture);
    let ds = load_dataset(&data, &schema_path)?;
    let truth = read_truth(&args.fixture)?;
    std::fs::create_dir_all(&args.out)?;
    let started = Instant::now();
    let run = run_chains_on(initialize_latent(&ds)?, &cfg.mcmc, worker_threads())?;
    let probs = run.accumulator.edge_probabilities()?;
    let mut recovery = score_probabilities(&probs, &truth.graph(), cfg.threshold);
    recovery.runtime_seconds = started.elapsed().as_secs_f64();
    log.info(format!("AUC {} in {:.1} s", sig6(recovery.auc), recovery.runtime_seconds));

    let all_continuous = load_schema(&schema_path)?
        .iter()
        .all(|s| s.modeled_type() == VarType::Continuous);
    let oracle = if ds.model_columns().len() == 3 && all_continuous {
        let exact = oracle_report(&ds, cfg.mcmc.edge_prior, cfg.mcmc.b)?;
        let mut w = csv::Writer::from_path(args.out.join("oracle_gap.csv"))?;
        w.write_record(["i", "j", "mcmc", "exact", "abs_diff"])?;
        let mut max_gap: f64 = 0.0;
        for e in &exact.edges {
            let m = probs[(e.i, e.j)];
            let gap = (m - e.probability).abs();
            max_gap = max_gap.max(gap);
            w.write_record([e.i.to_string(), e.j.to_string(), sig6(m), sig6(e.probability), sig6(gap)])?;
        }
        w.flush()?;
        let pass = max_gap <= ORACLE_TOLERANCE;
        log.info(format!(
            "oracle gap {} ({})",
            sig6(max_gap),
            if pass { "pass" } else { "FAIL" }
        ));
        Some(OracleGap {
            max_gap,
            tolerance: ORACLE_TOLERANCE,
            pass,
        })
    } else {
        None
    };
    let report = CompareReport {
        recovery,
        convergence: ConvergenceVerdict::from(&run.convergence),
        oracle,
    };
    write_json(&args.out.join("recovery.json"), &report)?;
    Ok(report)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

/// Machine-readable error record printed on failure.
pub fn error_json(e: &Error) -> String {
    serde_json::json!({ "error": { "kind": e.kind(), "message": e.to_string() } }).to_string()
}
