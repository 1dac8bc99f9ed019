//! The command surface behind the `mss` binary. Every command writes
//! `report.json` into its output directory, including on failure.

use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::config::{Comparison, Experiment, RunConfig};
use crate::diagnostics::{grid_tv_distance, summarize, DiagnosticsReport, Gate};
use crate::error::{Error, Result};
use crate::flow::train_flow;
use crate::hmc::{Chain, ChainStats, HmcConfig};
use crate::io;
use crate::model::TargetModel;
use crate::pipeline::{
    build_stage2_target, read_pooled, run_mss, sample_scheme, write_pooled, Artifacts, GateConfig, MarginalDensity,
    Scheme,
};
use crate::report::{Figure, FlowSummary, RunReport, Status};
use crate::sim::{export_csv, save_dataset, simulate_dataset};

#[derive(Debug, Clone)]
pub struct CommonArgs {
    pub config: PathBuf,
    /// Overrides the config's master seed.
    pub seed: Option<u64>,
    pub out: PathBuf,
}

#[derive(Debug, Clone)]
pub enum Command {
    Simulate,
    Sample { scheme: Option<Scheme> },
    Mss,
    FlowTrain { input: Option<PathBuf> },
    Diagnose { input: Option<PathBuf> },
    /// Overlay CSVs of several sample files against the oracle, or the
    /// figure tables of an existing report.
    Compare { inputs: Vec<PathBuf>, report: Option<PathBuf> },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Sample { .. } => "sample",
            Command::Mss => "mss",
            Command::FlowTrain { .. } => "flow-train",
            Command::Diagnose { .. } => "diagnose",
            Command::Compare { .. } => "compare",
        }
    }
}

/// Exit status: 0 success, 2 gate failure, 1 error.
pub fn exit_code(outcome: &Result<RunReport>) -> i32 {
    match outcome {
        Ok(r) if r.status == Status::Ok => 0,
        Ok(_) => 2,
        Err(e) if is_gate_failure(e) => 2,
        Err(_) => 1,
    }
}

fn is_gate_failure(e: &Error) -> bool {
    match e {
        Error::ConvergenceGateFailed(_) => true,
        Error::Stage { source, .. } => is_gate_failure(source),
        _ => false,
    }
}

/// Runs `cmd`; on error, writes a report carrying the message unless the
/// pipeline already wrote one for a gate failure.
pub fn execute(cmd: &Command, args: &CommonArgs) -> Result<RunReport> {
    let report_path = args.out.join("report.json");
    if report_path.exists() {
        std::fs::remove_file(&report_path)?;
    }
    let result = dispatch(cmd, args);
    if let Err(e) = &result {
        if !report_path.exists() {
            let mut r = RunReport::new(cmd.name(), "unknown", args.seed.unwrap_or(0));
            r.status = if is_gate_failure(e) { Status::GateFailed } else { Status::Error };
            r.error = Some(e.to_string());
            std::fs::create_dir_all(&args.out)?;
            r.write(&report_path)?;
        }
    }
    result
}

fn dispatch(cmd: &Command, args: &CommonArgs) -> Result<RunReport> {
    let mut cfg = RunConfig::load(&args.config)?;
    let seed = args.seed.unwrap_or(cfg.seed);
    cfg = cfg.with_seed(seed);
    std::fs::create_dir_all(&args.out)?;
    let start = Instant::now();
    let mut report = match cmd {
        Command::Simulate => simulate(&cfg, args),
        Command::Sample { scheme } => sample(&cfg, args, *scheme),
        Command::Mss => mss(&cfg, args),
        Command::FlowTrain { input } => flow_train(&cfg, args, input.as_deref()),
        Command::Diagnose { input } => diagnose(&cfg, args, input.as_deref()),
        Command::Compare { inputs, report } => compare(&cfg, args, inputs, report.as_deref()),
    }?;
    report.timing.insert("total".into(), start.elapsed().as_secs_f64());
    report.write(&args.out.join("report.json"))?;
    Ok(report)
}

fn simulate(cfg: &RunConfig, args: &CommonArgs) -> Result<RunReport> {
    let crate::config::ModelConfig::Pta { data, power_law, .. } = &cfg.model else {
        return Err(Error::InvalidConfig("`simulate` needs a pta config".into()));
    };
    let crate::config::DataSource::Simulate(sim) = data else {
        return Err(Error::InvalidConfig("`simulate` needs `model.data.simulate` settings".into()));
    };
    let mut sim = sim.clone();
    if let Some(s) = args.seed {
        sim.seed = s;
    }
    sim.validate_against(power_law)?;
    let ds = simulate_dataset(&sim)?;
    save_dataset(&ds, &args.out.join("dataset.json"))?;
    export_csv(&ds, &args.out.join("dataset.csv"))?;
    let mut r = RunReport::new("simulate", "pta", sim.seed);
    r.comparisons.insert("true_log10_A".into(), sim.true_log10_a);
    r.comparisons.insert("true_gamma".into(), sim.true_gamma);
    r.comparisons.insert("n_samples".into(), ds.len() as f64);
    r.figures.push(Figure {
        name: "dataset".into(),
        columns: vec!["t".into(), "d".into()],
        rows: ds.times().iter().zip(ds.data()).map(|(t, d)| vec![*t, *d]).collect(),
    });
    Ok(r)
}

fn hyper_draws(chains: &[Chain], cols: &[usize]) -> Vec<Vec<f64>> {
    chains
        .iter()
        .flat_map(|c| c.draws.iter().map(|d| cols.iter().map(|&j| d[j]).collect()))
        .collect()
}

fn divergence_gate(n: usize, gates: &GateConfig) -> Gate {
    Gate::below("divergences", n as f64, gates.divergences_max as f64 + 0.5)
}

fn merge(d: &mut DiagnosticsReport, report: &mut RunReport, c: Comparison) {
    d.ks.extend(c.ks);
    d.tv.extend(c.tv);
    d.gates.extend(c.gates);
    report.comparisons.extend(c.values);
    report.figures.extend(c.figures);
}

fn sample(cfg: &RunConfig, args: &CommonArgs, scheme: Option<Scheme>) -> Result<RunReport> {
    let exp = Experiment::build(cfg)?;
    let scheme = scheme.unwrap_or_else(|| exp.default_scheme());
    let t = Instant::now();
    let chains = sample_scheme(&exp.original, scheme, &cfg.baseline.hmc, cfg.baseline.n_chains)?;
    let mut report = RunReport::new("sample", cfg.kind(), cfg.seed);
    report.scheme = Some(scheme.name().into());
    report.timing.insert("sampling".into(), t.elapsed().as_secs_f64());
    let dir = args.out.join("chains");
    for (k, c) in chains.iter().enumerate() {
        c.write(&dir, &format!("chain_{k}"))?;
    }
    write_pooled(&args.out.join("samples.csv"), &chains)?;

    let cols = exp.hyper_columns();
    let divergences = chains.iter().map(|c| c.stats.divergences).sum();
    let mut d = DiagnosticsReport {
        coords: summarize(&chains, &cols),
        divergences,
        ..Default::default()
    };
    if chains.len() > 1 {
        d.add_convergence_gates(cfg.gates.rhat_max, cfg.gates.ess_min);
    }
    d.gates.push(divergence_gate(divergences, &cfg.gates));
    let grad_evals: u64 = chains.iter().map(|c| c.stats.grad_evals).sum();
    report.comparisons.insert(format!("{}:grad_evals", scheme.name()), grad_evals as f64);
    let c = exp
        .oracle
        .compare(scheme.name(), &exp.hyper_names(), &hyper_draws(&chains, &cols), &cfg.oracle, &cfg.gates)?;
    merge(&mut d, &mut report, c);
    report.result = Some(d);
    report.status = if report.passed() { Status::Ok } else { Status::GateFailed };
    Ok(report)
}

fn mss(cfg: &RunConfig, args: &CommonArgs) -> Result<RunReport> {
    let exp = Experiment::build(cfg)?;
    let run = exp.mss_run(
        cfg,
        Some(Artifacts {
            dir: args.out.clone(),
            config_echo: cfg.to_value()?,
        }),
    );
    let out = run_mss(&run)?;
    let mut report = out.report.clone();
    let draws = out.stage2_draws();
    let names = exp.hyper_names();
    let mut d = report.result.take().unwrap_or_default();
    d.gates.push(divergence_gate(d.divergences, &cfg.gates));
    let c = exp.oracle.compare("mss", &names, &draws, &cfg.oracle, &cfg.gates)?;
    merge(&mut d, &mut report, c);

    // Dense-grid cross-check of the stage-2 draws against the stage-2 density itself.
    if let MarginalDensity::Flow(flow, _) = &out.density {
        let target = build_stage2_target(flow.clone(), exp.constraint.clone(), exp.prior.clone())?;
        let grid = exp.oracle.comparison_grid(&cfg.oracle)?;
        let logp = |y: &[f64]| target.log_density(y);
        match grid_tv_distance(&draws, logp, &grid) {
            Ok(v) => {
                d.tv.insert("mss:stage2_grid_tv".into(), v);
            }
            Err(Error::Coverage { fraction }) => {
                report.comparisons.insert("mss:stage2_grid_outside".into(), fraction);
            }
            Err(e) => return Err(e),
        }
        report.figures.push(crate::config::histogram_figure("stage2_target", &names, &draws, &grid, logp));
    }
    report.result = Some(d);
    report.status = if report.passed() { Status::Ok } else { Status::GateFailed };
    Ok(report)
}

fn flow_train(cfg: &RunConfig, args: &CommonArgs, input: Option<&Path>) -> Result<RunReport> {
    let path = input.map(Path::to_path_buf).unwrap_or_else(|| args.out.join("marginal.csv"));
    let table = io::read_csv(&path)?;
    let t = Instant::now();
    let (flow, tr) = train_flow(&table.rows, &cfg.flow)?;
    flow.save(&args.out.join("flow.json"))?;
    let mut report = RunReport::new("flow-train", cfg.kind(), cfg.seed);
    report.timing.insert("training".into(), t.elapsed().as_secs_f64());
    report.flow = Some(FlowSummary::from(&tr));
    report.figures.push(Figure {
        name: "flow_training".into(),
        columns: vec!["epoch".into(), "train_logp".into(), "val_logp".into()],
        rows: tr
            .train_logp
            .iter()
            .zip(&tr.val_logp)
            .enumerate()
            .map(|(e, (a, b))| vec![e as f64, *a, *b])
            .collect(),
    });
    Ok(report)
}

/// Loads draws from a pooled CSV, a single chain CSV, or a run directory.
pub fn load_draws(path: &Path) -> Result<(Vec<String>, Vec<Vec<Vec<f64>>>)> {
    if path.is_dir() {
        for f in ["stage2.csv", "samples.csv"] {
            if path.join(f).exists() {
                return load_draws(&path.join(f));
            }
        }
        for sub in ["chains", "stage1"] {
            let d = path.join(sub);
            if d.is_dir() {
                let mut files: Vec<PathBuf> = std::fs::read_dir(&d)?
                    .filter_map(|e| e.ok().map(|e| e.path()))
                    .filter(|p| p.extension().is_some_and(|x| x == "csv"))
                    .collect();
                files.sort();
                let mut names = Vec::new();
                let mut chains = Vec::new();
                for f in files {
                    let (n, mut c) = load_draws(&f)?;
                    names = n;
                    chains.append(&mut c);
                }
                if !chains.is_empty() {
                    return Ok((names, chains));
                }
            }
        }
        return Err(Error::format(path.display().to_string(), None, "no sample files found"));
    }
    let table = io::read_csv(path)?;
    if table.header.first().map(String::as_str) == Some("chain") {
        return read_pooled(path);
    }
    let keep: Vec<usize> = (0..table.header.len()).filter(|&j| table.header[j] != "logp").collect();
    let names = keep.iter().map(|&j| table.header[j].clone()).collect();
    let draws = table.rows.iter().map(|r| keep.iter().map(|&j| r[j]).collect()).collect();
    Ok((names, vec![draws]))
}

fn as_chains(names: &[String], draws: Vec<Vec<Vec<f64>>>) -> Vec<Chain> {
    draws
        .into_iter()
        .map(|d| Chain {
            names: names.to_vec(),
            logp: vec![0.0; d.len()],
            draws: d,
            stats: ChainStats {
                accept_rate: f64::NAN,
                step_size: f64::NAN,
                mass_diag: vec![],
                divergences: 0,
                warmup_divergences: 0,
                grad_evals: 0,
                seed: 0,
                config: HmcConfig::default(),
            },
        })
        .collect()
}

fn oracle_columns(names: &[String], hyper: &[String], path: &Path) -> Result<Vec<usize>> {
    hyper
        .iter()
        .map(|h| {
            names
                .iter()
                .position(|n| n == h)
                .ok_or_else(|| Error::format(path.display().to_string(), Some(1), format!("missing column `{h}`")))
        })
        .collect()
}

fn diagnose(cfg: &RunConfig, args: &CommonArgs, input: Option<&Path>) -> Result<RunReport> {
    let path = input.map(Path::to_path_buf).unwrap_or_else(|| args.out.clone());
    let (names, draws) = load_draws(&path)?;
    let chains = as_chains(&names, draws);
    let exp = Experiment::build(cfg)?;
    let hyper = exp.hyper_names();
    let mut report = RunReport::new("diagnose", cfg.kind(), cfg.seed);
    let all: Vec<usize> = (0..names.len()).collect();
    let mut d = DiagnosticsReport {
        coords: summarize(&chains, &all),
        ..Default::default()
    };
    if let Ok(cols) = oracle_columns(&names, &hyper, &path) {
        if chains.len() > 1 {
            let mut g = DiagnosticsReport {
                coords: summarize(&chains, &cols),
                ..Default::default()
            };
            g.add_convergence_gates(cfg.gates.rhat_max, cfg.gates.ess_min);
            d.gates.extend(g.gates);
        }
        let c = exp.oracle.compare("input", &hyper, &hyper_draws(&chains, &cols), &cfg.oracle, &cfg.gates)?;
        merge(&mut d, &mut report, c);
    } else {
        report
            .warnings
            .push(format!("input has no {hyper:?} columns; oracle comparison skipped"));
    }
    report.result = Some(d);
    report.status = if report.passed() { Status::Ok } else { Status::GateFailed };
    Ok(report)
}

fn label_of(p: &Path) -> String {
    let stem = p.file_stem().map(|s| s.to_string_lossy().to_string()).unwrap_or_default();
    match p.parent().and_then(|d| d.file_name()) {
        Some(d) if stem == "samples" || stem == "stage2" => d.to_string_lossy().to_string(),
        _ => stem,
    }
}

fn compare(cfg: &RunConfig, args: &CommonArgs, inputs: &[PathBuf], from_report: Option<&Path>) -> Result<RunReport> {
    let mut report = RunReport::new("compare", cfg.kind(), cfg.seed);
    if let Some(rp) = from_report {
        let old = RunReport::read(rp)?;
        let files = old.write_figures(&args.out)?;
        report.warnings.push(format!("regenerated {} figure table(s) from {}", files.len(), rp.display()));
        report.figures = old.figures;
    }
    if inputs.is_empty() {
        return Ok(report);
    }
    let exp = Experiment::build(cfg)?;
    let hyper = exp.hyper_names();
    let grid = exp.oracle.comparison_grid(&cfg.oracle)?;
    let q = grid.oracle_probabilities(|x| exp.oracle.log_density(x));
    let cell: f64 = (0..grid.dim())
        .map(|a| (grid.upper[a] - grid.lower[a]) / grid.bins[a] as f64)
        .product();
    let mut columns: Vec<String> = hyper.clone();
    columns.push("oracle_density".into());
    let mut rows: Vec<Vec<f64>> = grid
        .centers()
        .into_iter()
        .zip(&q)
        .map(|(mut c, p)| {
            c.push(p / cell);
            c
        })
        .collect();
    let mut d = DiagnosticsReport::default();
    for p in inputs {
        let label = label_of(p);
        let (names, draws) = load_draws(p)?;
        let cols = oracle_columns(&names, &hyper, p)?;
        let pooled: Vec<Vec<f64>> = draws.iter().flatten().map(|r| cols.iter().map(|&j| r[j]).collect()).collect();
        let hist = grid.histogram(&pooled).unwrap_or_else(|_| vec![f64::NAN; q.len()]);
        columns.push(format!("{label}_density"));
        for (row, h) in rows.iter_mut().zip(&hist) {
            row.push(h / cell);
        }
        let c = exp.oracle.compare(&label, &hyper, &pooled, &cfg.oracle, &cfg.gates)?;
        d.ks.extend(c.ks);
        d.tv.extend(c.tv);
        d.gates.extend(c.gates);
        report.comparisons.extend(c.values);
    }
    let header: Vec<&str> = columns.iter().map(String::as_str).collect();
    io::write_csv(&args.out.join("overlay.csv"), &header, rows.iter().cloned())?;
    report.figures.push(Figure {
        name: "overlay".into(),
        columns,
        rows,
    });
    report.result = Some(d);
    report.status = if report.passed() { Status::Ok } else { Status::GateFailed };
    Ok(report)
}
