//! Multi-stage sampling: sample a generalized hierarchical model, estimate the
//! marginal density of its hyper block, and resample that density on the
//! surface that embeds the original hyper-model.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, RngCore};
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::diagnostics::{summarize, DiagnosticsReport, GridSpec};
use crate::error::{Error, Result};
use crate::flow::{train_flow, FlowModel, KdeModel, TrainConfig, TrainReport};
use crate::hmc::{sample_chains, Chain, HmcConfig};
use crate::io;
use crate::model::{Block, Bound, ParameterSpace, TargetModel};
use crate::models::constraint::ConstraintMap;
use crate::models::HierarchicalModel;
use crate::report::{Figure, RunReport, Status};
use crate::reparam::{cprs_for, prs_target, sample_reparam};
use crate::rng::seeded;
use crate::special::{ndtr, normal_logpdf};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    Ns,
    Prs,
    Cprs,
}

impl Scheme {
    pub fn name(self) -> &'static str {
        match self {
            Scheme::Ns => "ns",
            Scheme::Prs => "prs",
            Scheme::Cprs => "cprs",
        }
    }
}

impl std::str::FromStr for Scheme {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ns" => Ok(Scheme::Ns),
            "prs" => Ok(Scheme::Prs),
            "cprs" => Ok(Scheme::Cprs),
            other => Err(Error::InvalidConfig(format!("unknown scheme `{other}` (ns, prs, cprs)"))),
        }
    }
}

/// Samples `model` with the chosen scheme; draws come back in native coordinates.
pub fn sample_scheme(model: &HierarchicalModel, scheme: Scheme, cfg: &HmcConfig, n_chains: usize) -> Result<Vec<Chain>> {
    match scheme {
        Scheme::Ns => sample_chains(model, cfg, n_chains),
        Scheme::Prs => sample_reparam(prs_target(model)?.as_ref(), cfg, n_chains),
        Scheme::Cprs => sample_reparam(cprs_for(model)?.as_ref(), cfg, n_chains),
    }
}

/// Independent prior over the original hyper-parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum HyperPrior {
    Normal { mean: Vec<f64>, sd: Vec<f64> },
    Uniform { lower: Vec<f64>, upper: Vec<f64> },
}

impl HyperPrior {
    pub fn dim(&self) -> usize {
        match self {
            HyperPrior::Normal { mean, .. } => mean.len(),
            HyperPrior::Uniform { lower, .. } => lower.len(),
        }
    }

    /// Uniform over the bounded box of `space`.
    pub fn uniform_over(space: &ParameterSpace) -> Result<Self> {
        let mut lower = Vec::new();
        let mut upper = Vec::new();
        for e in space.entries() {
            match e.bound {
                Bound::Interval { lower: a, upper: b } => {
                    lower.push(a);
                    upper.push(b);
                }
                Bound::Unbounded => {
                    return Err(Error::InvalidConfig(format!("uniform prior needs a bounded `{}`", e.name)));
                }
            }
        }
        Ok(HyperPrior::Uniform { lower, upper })
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match self {
            HyperPrior::Normal { mean, sd } => {
                mean.len() == sd.len() && sd.iter().all(|s| *s > 0.0 && s.is_finite()) && mean.iter().all(|m| m.is_finite())
            }
            HyperPrior::Uniform { lower, upper } => {
                lower.len() == upper.len() && lower.iter().zip(upper).all(|(a, b)| a.is_finite() && b.is_finite() && a < b)
            }
        };
        if ok && self.dim() > 0 {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("invalid hyper-prior {self:?}")))
        }
    }

    /// Log-density; `grad` receives its gradient (zero inside a uniform box).
    pub fn log_density_grad(&self, y: &[f64], grad: &mut [f64]) -> f64 {
        match self {
            HyperPrior::Normal { mean, sd } => {
                let mut lp = 0.0;
                for j in 0..y.len() {
                    lp += normal_logpdf(y[j], mean[j], sd[j]);
                    grad[j] = -(y[j] - mean[j]) / (sd[j] * sd[j]);
                }
                lp
            }
            HyperPrior::Uniform { lower, upper } => {
                grad.iter_mut().for_each(|g| *g = 0.0);
                if y.iter().zip(lower.iter().zip(upper)).all(|(v, (a, b))| v > a && v < b) {
                    -lower.iter().zip(upper).map(|(a, b)| (b - a).ln()).sum::<f64>()
                } else {
                    f64::NEG_INFINITY
                }
            }
        }
    }

    pub fn log_density(&self, y: &[f64]) -> f64 {
        let mut g = vec![0.0; y.len()];
        self.log_density_grad(y, &mut g)
    }

    /// Marginal CDF of coordinate `j`.
    pub fn cdf(&self, j: usize, x: f64) -> f64 {
        match self {
            HyperPrior::Normal { mean, sd } => ndtr((x - mean[j]) / sd[j]),
            HyperPrior::Uniform { lower, upper } => ((x - lower[j]) / (upper[j] - lower[j])).clamp(0.0, 1.0),
        }
    }

    pub fn draw(&self, rng: &mut dyn RngCore) -> Vec<f64> {
        match self {
            HyperPrior::Normal { mean, sd } => mean
                .iter()
                .zip(sd)
                .map(|(m, s)| m + s * rng.sample::<f64, _>(StandardNormal))
                .collect(),
            HyperPrior::Uniform { lower, upper } => lower
                .iter()
                .zip(upper)
                .map(|(a, b)| a + (b - a) * rng.random::<f64>())
                .collect(),
        }
    }

    /// A box holding essentially all prior mass: `mean +- 6 sd` or the uniform box.
    pub fn default_grid(&self, bins: usize) -> Result<GridSpec> {
        let (lower, upper) = match self {
            HyperPrior::Normal { mean, sd } => (
                mean.iter().zip(sd).map(|(m, s)| m - 6.0 * s).collect(),
                mean.iter().zip(sd).map(|(m, s)| m + 6.0 * s).collect(),
            ),
            HyperPrior::Uniform { lower, upper } => (lower.clone(), upper.clone()),
        };
        GridSpec::new(lower, upper, vec![bins; self.dim()])
    }
}

/// `flow(constraint(y)) + log prior(y)` over the original hyper space.
/// The density is evaluated on the constraint surface as is; no surface
/// measure factor enters.
#[derive(Debug, Clone)]
pub struct Stage2Target {
    flow: FlowModel,
    constraint: ConstraintMap,
    prior: HyperPrior,
    space: ParameterSpace,
}

impl Stage2Target {
    pub fn flow(&self) -> &FlowModel {
        &self.flow
    }
    pub fn constraint(&self) -> &ConstraintMap {
        &self.constraint
    }
    pub fn prior(&self) -> &HyperPrior {
        &self.prior
    }
}

pub fn build_stage2_target(flow: FlowModel, constraint: ConstraintMap, prior: HyperPrior) -> Result<Stage2Target> {
    if flow.dim() != constraint.out_dim() {
        return Err(Error::DimensionMismatch {
            expected: constraint.out_dim(),
            found: flow.dim(),
        });
    }
    if prior.dim() != constraint.in_dim() {
        return Err(Error::DimensionMismatch {
            expected: constraint.in_dim(),
            found: prior.dim(),
        });
    }
    prior.validate()?;
    let space = constraint.hyper_in().clone();
    Ok(Stage2Target {
        flow,
        constraint,
        prior,
        space,
    })
}

impl TargetModel for Stage2Target {
    fn space(&self) -> &ParameterSpace {
        &self.space
    }

    fn log_density_grad(&self, y: &[f64], grad: &mut [f64]) -> f64 {
        let lp_prior = self.prior.log_density_grad(y, grad);
        if !lp_prior.is_finite() {
            return f64::NEG_INFINITY;
        }
        match self.flow.log_density_grad(&self.constraint.apply(y)) {
            Ok((lp, gz)) => {
                for (g, p) in grad.iter_mut().zip(self.constraint.pullback(&gz)) {
                    *g += p;
                }
                lp + lp_prior
            }
            Err(_) => f64::NEG_INFINITY,
        }
    }

    fn prior_draw(&self, rng: &mut dyn RngCore) -> Option<Vec<f64>> {
        Some(self.prior.draw(rng))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Estimator {
    Flow,
    Kde,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Stage1Config {
    pub scheme: Scheme,
    pub n_chains: usize,
    pub hmc: HmcConfig,
}

impl Default for Stage1Config {
    fn default() -> Self {
        Self {
            scheme: Scheme::Prs,
            n_chains: 4,
            hmc: HmcConfig {
                n_warmup: 1000,
                n_samples: 5000,
                ..HmcConfig::default()
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Stage2Config {
    pub n_chains: usize,
    pub hmc: HmcConfig,
    pub estimator: Estimator,
    /// Grid for the dense evaluator; defaults to the prior's box.
    pub grid: Option<GridSpec>,
    pub grid_bins: usize,
}

impl Default for Stage2Config {
    fn default() -> Self {
        Self {
            n_chains: 4,
            hmc: HmcConfig {
                n_warmup: 1000,
                n_samples: 2500,
                ..HmcConfig::default()
            },
            estimator: Estimator::Flow,
            grid: None,
            grid_bins: 200,
        }
    }
}

/// Pass/fail thresholds shared by every command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GateConfig {
    pub rhat_max: f64,
    pub ess_min: f64,
    pub ks_max: f64,
    pub tv_max: f64,
    pub tv2d_max: f64,
    /// Mean offset in units of the oracle standard deviation.
    pub mean_offset_max: f64,
    /// Relative error of the standard deviation.
    pub std_rel_max: f64,
    /// Divergent transitions tolerated after warmup.
    pub divergences_max: usize,
}

impl Default for GateConfig {
    fn default() -> Self {
        Self {
            rhat_max: 1.01,
            ess_min: 400.0,
            ks_max: 0.05,
            tv_max: 0.05,
            tv2d_max: 0.08,
            mean_offset_max: 0.1,
            std_rel_max: 0.15,
            divergences_max: 0,
        }
    }
}

/// Where a run writes its files, and the config document echoed as `config.json`.
#[derive(Debug, Clone)]
pub struct Artifacts {
    pub dir: PathBuf,
    pub config_echo: serde_json::Value,
}

#[derive(Debug, Clone)]
pub struct MssRun {
    pub generalized: HierarchicalModel,
    pub constraint: ConstraintMap,
    pub hyper_prior: HyperPrior,
    pub stage1: Stage1Config,
    pub stage2: Stage2Config,
    pub flow: TrainConfig,
    pub gates: GateConfig,
    pub artifacts: Option<Artifacts>,
    pub seed: u64,
}

impl MssRun {
    /// Checks that the constraint lands on the generalized model's hyper block.
    pub fn validate(&self) -> Result<()> {
        let space = self.generalized.space();
        let hyper: Vec<&str> = space
            .block_indices(Block::Hyper)
            .into_iter()
            .map(|j| space.entries()[j].name.as_str())
            .collect();
        let out = self.constraint.hyper_out().names();
        if hyper != out {
            return Err(Error::InvalidConfig(format!(
                "constraint output {out:?} does not match the hyper block {hyper:?}"
            )));
        }
        if self.hyper_prior.dim() != self.constraint.in_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.constraint.in_dim(),
                found: self.hyper_prior.dim(),
            });
        }
        self.hyper_prior.validate()?;
        if self.stage1.n_chains < 2 {
            return Err(Error::InvalidConfig("stage 1 needs at least 2 chains for R-hat".into()));
        }
        if self.stage2.n_chains == 0 {
            return Err(Error::InvalidConfig("stage 2 needs at least 1 chain".into()));
        }
        self.stage1.hmc.validate()?;
        self.stage2.hmc.validate()?;
        self.flow.validate()
    }

    /// Prior-box corners (normal priors probed at 6 sd) whose constraint
    /// image leaves the generalized hyper box.
    pub fn corner_warnings(&self) -> Vec<String> {
        corner_points(&self.hyper_prior)
            .into_iter()
            .filter_map(|c| {
                let z = self.constraint.apply(&c);
                (!self.constraint.hyper_out().contains(&z)).then(|| {
                    format!("constraint image of prior corner {c:?} leaves the generalized hyper box")
                })
            })
            .collect()
    }
}

fn corner_points(prior: &HyperPrior) -> Vec<Vec<f64>> {
    let ranges: Vec<(f64, f64)> = match prior {
        HyperPrior::Normal { mean, sd } => mean.iter().zip(sd).map(|(m, s)| (m - 6.0 * s, m + 6.0 * s)).collect(),
        HyperPrior::Uniform { lower, upper } => lower.iter().cloned().zip(upper.iter().cloned()).collect(),
    };
    let m = ranges.len();
    (0..1usize << m)
        .map(|mask| (0..m).map(|j| if mask >> j & 1 == 0 { ranges[j].0 } else { ranges[j].1 }).collect())
        .collect()
}

#[derive(Debug, Clone)]
pub struct Stage1Output {
    pub chains: Vec<Chain>,
    pub names: Vec<String>,
    /// Pooled post-warmup draws projected onto the hyper block.
    pub marginal: Vec<Vec<f64>>,
    pub diagnostics: DiagnosticsReport,
}

fn stage1_run(run: &MssRun) -> Result<Stage1Output> {
    let chains = sample_scheme(&run.generalized, run.stage1.scheme, &run.stage1.hmc, run.stage1.n_chains)?;
    let hyper = run.generalized.space().block_indices(Block::Hyper);
    let names = hyper.iter().map(|&j| chains[0].names[j].clone()).collect();
    let marginal = chains
        .iter()
        .flat_map(|c| c.draws.iter().map(|d| hyper.iter().map(|&j| d[j]).collect::<Vec<f64>>()))
        .collect();
    let mut diagnostics = DiagnosticsReport {
        coords: summarize(&chains, &hyper),
        divergences: chains.iter().map(|c| c.stats.divergences).sum(),
        ..Default::default()
    };
    diagnostics.add_convergence_gates(run.gates.rhat_max, run.gates.ess_min);
    Ok(Stage1Output {
        chains,
        names,
        marginal,
        diagnostics,
    })
}

fn gate_failure(d: &DiagnosticsReport) -> Error {
    let failed: Vec<String> = d
        .gates
        .iter()
        .filter(|g| !g.pass)
        .map(|g| format!("{} = {:.4} (need {} {})", g.name, g.value, g.relation, g.threshold))
        .collect();
    Error::ConvergenceGateFailed(failed.join("; "))
}

/// Stage-1 draws of the hyper block, pooled over chains. Fails unless every
/// hyper coordinate passes the R-hat and ESS gates.
pub fn stage1_marginal_samples(run: &MssRun) -> Result<Stage1Output> {
    run.validate()?;
    let out = stage1_run(run)?;
    if !out.diagnostics.passed() {
        return Err(gate_failure(&out.diagnostics));
    }
    Ok(out)
}

/// Dense-grid probabilities of `logp` (dims 1 and 2).
pub fn grid_probabilities(grid: &GridSpec, logp: impl Fn(&[f64]) -> f64) -> Vec<f64> {
    grid.oracle_probabilities(logp)
}

/// Draws from a grid density: pick a cell by its probability, then a
/// uniform point inside it.
pub fn grid_draws(grid: &GridSpec, probs: &[f64], n: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = seeded(seed);
    let centers = grid.centers();
    let widths: Vec<f64> = (0..grid.dim())
        .map(|a| (grid.upper[a] - grid.lower[a]) / grid.bins[a] as f64)
        .collect();
    let mut cum = Vec::with_capacity(probs.len());
    let mut acc = 0.0;
    for p in probs {
        acc += p;
        cum.push(acc);
    }
    (0..n)
        .map(|_| {
            let u = rng.random::<f64>() * acc;
            let k = cum.partition_point(|c| *c <= u).min(probs.len() - 1);
            centers[k]
                .iter()
                .zip(&widths)
                .map(|(c, w)| c + (rng.random::<f64>() - 0.5) * w)
                .collect()
        })
        .collect()
}

/// The estimated density of the hyper block.
#[derive(Debug, Clone)]
pub enum MarginalDensity {
    Flow(FlowModel, TrainReport),
    Kde(KdeModel),
}

#[derive(Debug, Clone)]
pub struct MssOutput {
    pub stage1: Stage1Output,
    pub density: MarginalDensity,
    /// Stage-2 chains (one pseudo-chain on the grid path).
    pub stage2: Vec<Chain>,
    pub report: RunReport,
}

impl MssOutput {
    pub fn stage2_draws(&self) -> Vec<Vec<f64>> {
        self.stage2.iter().flat_map(|c| c.draws.iter().cloned()).collect()
    }
}

fn stage2_grid(run: &MssRun) -> Result<GridSpec> {
    match &run.stage2.grid {
        Some(g) => Ok(g.clone()),
        None => run.hyper_prior.default_grid(run.stage2.grid_bins),
    }
}

fn kde_stage2(run: &MssRun, kde: &KdeModel) -> Result<Vec<Chain>> {
    let grid = stage2_grid(run)?;
    if grid.dim() != run.constraint.in_dim() {
        return Err(Error::DimensionMismatch {
            expected: run.constraint.in_dim(),
            found: grid.dim(),
        });
    }
    let logp = |y: &[f64]| {
        let lp = run.hyper_prior.log_density(y);
        if lp.is_finite() {
            lp + kde.log_density(&run.constraint.apply(y)).unwrap_or(f64::NEG_INFINITY)
        } else {
            lp
        }
    };
    let probs = grid_probabilities(&grid, logp);
    let n = run.stage2.n_chains * run.stage2.hmc.n_samples;
    let draws = grid_draws(&grid, &probs, n, run.stage2.hmc.seed);
    let lp = draws.iter().map(|d| logp(d)).collect();
    Ok(vec![Chain {
        names: run.constraint.hyper_in().names().iter().map(|s| s.to_string()).collect(),
        draws,
        logp: lp,
        stats: crate::hmc::ChainStats {
            accept_rate: 1.0,
            step_size: 0.0,
            mass_diag: vec![],
            divergences: 0,
            warmup_divergences: 0,
            grad_evals: 0,
            seed: run.stage2.hmc.seed,
            config: run.stage2.hmc.clone(),
        },
    }])
}

/// Writes chains as one CSV with a leading `chain` column, plus a JSON
/// sidecar of per-chain sampler statistics.
pub fn write_pooled(path: &Path, chains: &[Chain]) -> Result<()> {
    let mut header: Vec<&str> = vec!["chain"];
    header.extend(chains[0].names.iter().map(String::as_str));
    header.push("logp");
    io::write_csv(
        path,
        &header,
        chains.iter().enumerate().flat_map(|(k, c)| {
            c.draws.iter().zip(&c.logp).map(move |(d, lp)| {
                let mut row = vec![k as f64];
                row.extend(d);
                row.push(*lp);
                row
            })
        }),
    )?;
    let stats: Vec<&crate::hmc::ChainStats> = chains.iter().map(|c| &c.stats).collect();
    io::write_json(&path.with_extension("json"), &stats)
}

/// Reads a file written by [`write_pooled`] back into per-chain draws.
pub fn read_pooled(path: &Path) -> Result<(Vec<String>, Vec<Vec<Vec<f64>>>)> {
    let t = io::read_csv(path)?;
    let ctx = path.display().to_string();
    if t.header.first().map(String::as_str) != Some("chain") || t.header.last().map(String::as_str) != Some("logp") {
        return Err(Error::format(ctx, Some(1), "expected `chain, ..., logp` columns"));
    }
    let names = t.header[1..t.header.len() - 1].to_vec();
    let mut chains: Vec<Vec<Vec<f64>>> = Vec::new();
    for row in t.rows {
        let k = row[0] as usize;
        if chains.len() <= k {
            chains.resize(k + 1, Vec::new());
        }
        chains[k].push(row[1..row.len() - 1].to_vec());
    }
    Ok((names, chains))
}

fn flow_figure(tr: &TrainReport) -> Figure {
    Figure {
        name: "flow_training".into(),
        columns: vec!["epoch".into(), "train_logp".into(), "val_logp".into()],
        rows: tr
            .train_logp
            .iter()
            .zip(&tr.val_logp)
            .enumerate()
            .map(|(e, (a, b))| vec![e as f64, *a, *b])
            .collect(),
    }
}

/// Runs stage 1, density estimation and stage 2, writing every artifact
/// when `run.artifacts` is set. A stage-1 gate failure still writes the
/// stage-1 artifacts and a report before returning the error.
pub fn run_mss(run: &MssRun) -> Result<MssOutput> {
    run.validate()?;
    let dir = run.artifacts.as_ref().map(|a| a.dir.clone());
    let mut report = RunReport::new("mss", run.generalized.kind(), run.seed);
    report.scheme = Some(run.stage1.scheme.name().into());
    report.warnings = run.corner_warnings();
    if let Some(a) = &run.artifacts {
        std::fs::create_dir_all(&a.dir)?;
        io::write_json(&a.dir.join("config.json"), &a.config_echo)?;
    }

    let t0 = Instant::now();
    let stage1 = stage1_run(run).map_err(|e| e.in_stage("stage1"))?;
    report.timing.insert("stage1".into(), t0.elapsed().as_secs_f64());
    report.stage1 = Some(stage1.diagnostics.clone());
    if let Some(d) = &dir {
        let s1 = d.join("stage1");
        for (k, c) in stage1.chains.iter().enumerate() {
            c.write(&s1, &format!("chain_{k}"))?;
        }
        let header: Vec<&str> = stage1.names.iter().map(String::as_str).collect();
        io::write_csv(&d.join("marginal.csv"), &header, stage1.marginal.iter().cloned())?;
    }
    warn_outside_support(run, &stage1, &mut report.warnings);
    if !stage1.diagnostics.passed() {
        report.status = Status::GateFailed;
        let err = gate_failure(&stage1.diagnostics);
        report.error = Some(err.to_string());
        if let Some(d) = &dir {
            report.write(&d.join("report.json"))?;
        }
        return Err(err.in_stage("stage1"));
    }

    let t1 = Instant::now();
    let density = match run.stage2.estimator {
        Estimator::Flow => {
            let (flow, tr) = train_flow(&stage1.marginal, &run.flow).map_err(|e| e.in_stage("flow"))?;
            if let Some(d) = &dir {
                flow.save(&d.join("flow.json"))?;
            }
            report.flow = Some(crate::report::FlowSummary::from(&tr));
            report.figures.push(flow_figure(&tr));
            MarginalDensity::Flow(flow, tr)
        }
        Estimator::Kde => {
            let kde = KdeModel::scott(stage1.marginal.clone()).map_err(|e| e.in_stage("kde"))?;
            if let Some(d) = &dir {
                io::write_json(&d.join("kde.json"), &kde)?;
            }
            MarginalDensity::Kde(kde)
        }
    };
    report.timing.insert("density".into(), t1.elapsed().as_secs_f64());

    let t2 = Instant::now();
    let stage2 = match &density {
        MarginalDensity::Flow(flow, _) => {
            let target = build_stage2_target(flow.clone(), run.constraint.clone(), run.hyper_prior.clone())
                .map_err(|e| e.in_stage("stage2"))?;
            sample_chains(&target, &run.stage2.hmc, run.stage2.n_chains).map_err(|e| e.in_stage("stage2"))?
        }
        MarginalDensity::Kde(kde) => kde_stage2(run, kde).map_err(|e| e.in_stage("stage2"))?,
    };
    report.timing.insert("stage2".into(), t2.elapsed().as_secs_f64());

    let cols: Vec<usize> = (0..run.constraint.in_dim()).collect();
    let mut d2 = DiagnosticsReport {
        coords: summarize(&stage2, &cols),
        divergences: stage2.iter().map(|c| c.stats.divergences).sum(),
        ..Default::default()
    };
    if matches!(density, MarginalDensity::Flow(..)) {
        d2.add_convergence_gates(run.gates.rhat_max, run.gates.ess_min);
    }
    report.result = Some(d2);
    report.status = if report.passed() { Status::Ok } else { Status::GateFailed };
    if let Some(d) = &dir {
        write_pooled(&d.join("stage2.csv"), &stage2)?;
        report.write(&d.join("report.json"))?;
    }
    Ok(MssOutput {
        stage1,
        density,
        stage2,
        report,
    })
}

fn warn_outside_support(run: &MssRun, s1: &Stage1Output, warnings: &mut Vec<String>) {
    let m = s1.names.len();
    let lo: Vec<f64> = (0..m).map(|j| s1.marginal.iter().map(|r| r[j]).fold(f64::INFINITY, f64::min)).collect();
    let hi: Vec<f64> = (0..m).map(|j| s1.marginal.iter().map(|r| r[j]).fold(f64::NEG_INFINITY, f64::max)).collect();
    let mut n = 0;
    for c in corner_points(&run.hyper_prior) {
        let z = run.constraint.apply(&c);
        if z.iter().enumerate().any(|(j, v)| *v < lo[j] || *v > hi[j]) {
            n += 1;
        }
    }
    if n > 0 {
        warnings.push(format!(
            "{n} prior-box corner(s) map outside the range of the stage-1 samples; the density there is a tail extrapolation"
        ));
    }
}

/// Per-seed RNG labels used to derive stage seeds from a master seed.
pub fn stage_seeds(master: u64) -> BTreeMap<&'static str, u64> {
    ["stage1", "flow", "stage2"]
        .into_iter()
        .map(|l| (l, crate::rng::labeled_seed(master, l)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diagnostics::{ks_statistic, ks_two_sample};
    use crate::flow::FlowModel;
    use crate::model::check_gradient;
    use crate::models::funnel::{GeneralizedFunnel, GeneralizedFunnelSpec};

    fn funnel_run(seed: u64, n_samples: usize) -> MssRun {
        let spec = GeneralizedFunnelSpec::default();
        MssRun {
            generalized: HierarchicalModel::Generalized(GeneralizedFunnel::new(spec, None).unwrap()),
            constraint: ConstraintMap::funnel(&spec).unwrap(),
            hyper_prior: HyperPrior::Normal {
                mean: vec![0.0],
                sd: vec![3.0],
            },
            stage1: Stage1Config {
                hmc: HmcConfig {
                    n_warmup: 500,
                    n_samples,
                    seed,
                    ..HmcConfig::default()
                },
                ..Stage1Config::default()
            },
            stage2: Stage2Config::default(),
            flow: TrainConfig::default(),
            gates: GateConfig::default(),
            artifacts: None,
            seed,
        }
    }

    /// A flow whose density is exactly uniform on `(-a, a)^M` would need a
    /// hard edge; this stand-in has constant density on the box, which is
    /// what the reduction uses.
    struct Flat {
        space: ParameterSpace,
        constraint: ConstraintMap,
        prior: HyperPrior,
    }

    impl TargetModel for Flat {
        fn space(&self) -> &ParameterSpace {
            &self.space
        }
        fn log_density_grad(&self, y: &[f64], grad: &mut [f64]) -> f64 {
            let lp = self.prior.log_density_grad(y, grad);
            if self.constraint.image_in_bounds(y) {
                lp - self.constraint.out_dim() as f64 * 8f64.ln()
            } else {
                f64::NEG_INFINITY
            }
        }
        fn prior_draw(&self, rng: &mut dyn RngCore) -> Option<Vec<f64>> {
            Some(self.prior.draw(rng))
        }
    }

    #[test]
    fn stage1_marginals_are_uniform_and_seed_stable() {
        let a = stage1_marginal_samples(&funnel_run(1, 2500)).unwrap();
        let b = stage1_marginal_samples(&funnel_run(2, 2500)).unwrap();
        assert_eq!(a.names[0], "log10_z_1");
        assert_eq!(a.marginal[0].len(), 9);
        assert_eq!(a.marginal.len(), 4 * 2500);
        for j in 0..9 {
            let xa: Vec<f64> = a.marginal.iter().map(|r| r[j]).collect();
            let xb: Vec<f64> = b.marginal.iter().map(|r| r[j]).collect();
            let ks = ks_statistic(&xa, |x| ((x + 4.0) / 8.0).clamp(0.0, 1.0));
            assert!(ks < 0.03, "coord {j}: {ks}");
            assert!(ks_two_sample(&xa, &xb) < 0.05);
        }
    }

    #[test]
    fn projection_keeps_exactly_the_hyper_columns() {
        let run = funnel_run(3, 300);
        let out = stage1_run(&run).unwrap();
        for (c, row) in out.chains[0].draws.iter().zip(&out.marginal) {
            assert_eq!(&c[9..], row.as_slice());
        }
    }

    #[test]
    fn gate_failure_reports_coordinates() {
        let mut run = funnel_run(4, 150);
        run.gates.ess_min = 1e9;
        match stage1_marginal_samples(&run) {
            Err(Error::ConvergenceGateFailed(msg)) => assert!(msg.contains("ess[log10_z_1]"), "{msg}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn stage2_dimension_checks() {
        let spec = GeneralizedFunnelSpec::default();
        let c = ConstraintMap::funnel(&spec).unwrap();
        let prior = HyperPrior::Normal {
            mean: vec![0.0],
            sd: vec![3.0],
        };
        let bad = build_stage2_target(FlowModel::identity(3, 2, 4), c.clone(), prior.clone());
        assert!(matches!(bad, Err(Error::DimensionMismatch { expected: 9, found: 3 })));
        assert!(build_stage2_target(FlowModel::identity(9, 2, 4), c, prior).is_ok());
    }

    #[test]
    fn stage2_gradient_and_tails() {
        let spec = GeneralizedFunnelSpec::default();
        let samples: Vec<Vec<f64>> = {
            let mut rng = seeded(5);
            (0..3000).map(|_| (0..9).map(|_| -4.0 + 8.0 * rng.random::<f64>()).collect()).collect()
        };
        let cfg = TrainConfig {
            max_epochs: 3,
            n_layers: 2,
            hidden_width: 8,
            ..TrainConfig::default()
        };
        let (flow, _) = train_flow(&samples, &cfg).unwrap();
        let prior = HyperPrior::Normal {
            mean: vec![0.0],
            sd: vec![3.0],
        };
        let t = build_stage2_target(flow, ConstraintMap::funnel(&spec).unwrap(), prior).unwrap();
        for y in [-10.0, -3.0, 0.0, 1.5, 12.0] {
            let err = check_gradient(&t, &[y], 1e-5).unwrap();
            assert!(err < 1e-4, "y = {y}: {err}");
        }
        let inside = t.log_density(&[0.0]);
        for y in [40.0, -60.0, 300.0] {
            let lp = t.log_density(&[y]);
            assert!(lp.is_finite() && lp < inside - 20.0, "y = {y}: {lp}");
        }
    }

    #[test]
    fn flat_density_reproduces_the_prior() {
        let spec = GeneralizedFunnelSpec::default();
        let constraint = ConstraintMap::funnel(&spec).unwrap();
        let prior = HyperPrior::Normal {
            mean: vec![0.0],
            sd: vec![3.0],
        };
        let flat = Flat {
            space: constraint.hyper_in().clone(),
            constraint,
            prior: prior.clone(),
        };
        let cfg = HmcConfig {
            n_warmup: 500,
            n_samples: 2500,
            seed: 6,
            ..HmcConfig::default()
        };
        let chains = sample_chains(&flat, &cfg, 4).unwrap();
        let y: Vec<f64> = chains.iter().flat_map(|c| c.column(0)).collect();
        let ks = ks_statistic(&y, |x| prior.cdf(0, x));
        assert!(ks < 0.03, "{ks}");
    }

    #[test]
    fn identity_flow_gives_the_gaussian_product() {
        let spec = GeneralizedFunnelSpec::default();
        let prior = HyperPrior::Normal {
            mean: vec![0.0],
            sd: vec![3.0],
        };
        let t = build_stage2_target(FlowModel::identity(9, 2, 4), ConstraintMap::funnel(&spec).unwrap(), prior).unwrap();
        let c = 0.5 * std::f64::consts::LOG10_E;
        let sd = (1.0 / 9.0 + 9.0 * c * c).powf(-0.5);
        let cfg = HmcConfig {
            n_warmup: 500,
            n_samples: 2500,
            seed: 8,
            ..HmcConfig::default()
        };
        let y: Vec<f64> = sample_chains(&t, &cfg, 4).unwrap().iter().flat_map(|c| c.column(0)).collect();
        let ks = ks_statistic(&y, |x| ndtr(x / sd));
        assert!(ks < 0.03, "{ks}");
    }

    #[test]
    fn grid_draws_follow_the_grid() {
        let grid = GridSpec::new(vec![-5.0], vec![5.0], vec![100]).unwrap();
        let probs = grid_probabilities(&grid, |x| -0.5 * x[0] * x[0]);
        let draws = grid_draws(&grid, &probs, 20_000, 7);
        let xs: Vec<f64> = draws.iter().map(|d| d[0]).collect();
        assert!(ks_statistic(&xs, ndtr) < 0.015);
    }

    #[test]
    fn prior_box_corner_warnings() {
        let run = funnel_run(0, 100);
        assert!(run.corner_warnings().is_empty());
        let mut wide = run.clone();
        wide.hyper_prior = HyperPrior::Normal {
            mean: vec![0.0],
            sd: vec![10.0],
        };
        assert_eq!(wide.corner_warnings().len(), 2);
    }
}
