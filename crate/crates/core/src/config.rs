//! Run configuration: one JSON document selecting the experiment and every
//! stage setting, plus the analytic oracles each experiment is checked against.
//!
//! Keys named `"//"` are comments and are removed before parsing.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::diagnostics::{grid_moments, grid_tv_distance, ks_statistic, Gate, GridSpec};
use crate::error::{Error, Result};
use crate::flow::TrainConfig;
use crate::hmc::HmcConfig;
use crate::model::{Block, TargetModel};
use crate::models::constraint::ConstraintMap;
use crate::models::funnel::{
    likelihood_funnel_analytic_marginal, ClassicFunnelSpec, GeneralizedFunnel, GeneralizedFunnelSpec,
    LikelihoodFunnelSpec, NealFunnel,
};
use crate::models::pta::{FreeSpectralModel, FreeSpectralSpec, PowerLawMarginal, PowerLawModel, PowerLawSpec};
use crate::models::HierarchicalModel;
use crate::pipeline::{Artifacts, GateConfig, HyperPrior, MssRun, Scheme, Stage1Config, Stage2Config};
use crate::report::Figure;
use crate::rng::labeled_seed;
use crate::sim::{load_dataset, simulate_dataset, PtaDataset, SimConfig};
use crate::special::ndtr;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelConfig {
    ClassicFunnel {
        #[serde(default)]
        funnel: ClassicFunnelSpec,
        /// `log10 z` bound of the generalized model.
        #[serde(default = "default_a_bound")]
        a_bound: f64,
    },
    LikelihoodFunnel {
        #[serde(default)]
        funnel: LikelihoodFunnelSpec,
        #[serde(default = "default_a_bound")]
        a_bound: f64,
    },
    Pta {
        #[serde(default)]
        data: DataSource,
        #[serde(default)]
        power_law: PowerLawSpec,
        /// `n_freq` is taken from the dataset.
        #[serde(default)]
        free_spectral: FreeSpectralSpec,
    },
}

fn default_a_bound() -> f64 {
    GeneralizedFunnelSpec::default().a_bound
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    Simulate(SimConfig),
    /// A dataset file written by `simulate`; relative to the config file.
    Path(PathBuf),
}

impl Default for DataSource {
    fn default() -> Self {
        DataSource::Simulate(SimConfig::default())
    }
}

/// Settings for sampling the original model directly (`sample`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineConfig {
    pub n_chains: usize,
    pub hmc: HmcConfig,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            n_chains: 4,
            hmc: HmcConfig {
                n_warmup: 1000,
                n_samples: 2500,
                ..HmcConfig::default()
            },
        }
    }
}

/// Grid resolution of the oracle comparisons.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleConfig {
    pub bins_1d: usize,
    pub bins_2d: usize,
    /// The comparison box spans the oracle mean +- this many oracle sd.
    pub span_sd: f64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            bins_1d: 30,
            bins_2d: 30,
            span_sd: 5.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub stage1: Stage1Config,
    #[serde(default)]
    pub stage2: Stage2Config,
    #[serde(default)]
    pub flow: TrainConfig,
    #[serde(default)]
    pub baseline: BaselineConfig,
    #[serde(default)]
    pub gates: GateConfig,
    #[serde(default)]
    pub oracle: OracleConfig,
    /// Directory that relative data paths resolve against; not serialized.
    #[serde(skip)]
    pub base_dir: Option<PathBuf>,
}

fn strip_comments(v: Value) -> Value {
    match v {
        Value::Object(map) => Value::Object(
            map.into_iter()
                .filter(|(k, _)| k != "//")
                .map(|(k, v)| (k, strip_comments(v)))
                .collect(),
        ),
        Value::Array(items) => Value::Array(items.into_iter().map(strip_comments).collect()),
        other => other,
    }
}

impl RunConfig {
    pub fn from_json(text: &str, context: &str) -> Result<Self> {
        let raw: Value = serde_json::from_str(text).map_err(|e| Error::format(context, Some(e.line()), e.to_string()))?;
        let mut raw = strip_comments(raw);
        // Models with a Gaussian conditional default to a CPRS stage 1.
        let kind = raw.pointer("/model/kind").and_then(Value::as_str);
        if matches!(kind, Some("pta" | "likelihood_funnel")) && raw.pointer("/stage1/scheme").is_none() {
            let obj = raw.as_object_mut().expect("top level is an object");
            let s1 = obj.entry("stage1").or_insert_with(|| Value::Object(Default::default()));
            if let Some(m) = s1.as_object_mut() {
                m.insert("scheme".into(), Value::String("cprs".into()));
            }
        }
        let cfg: RunConfig = serde_json::from_value(raw).map_err(|e| Error::format(context, None, e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::InvalidConfig(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::from_json(&text, &path.display().to_string())?;
        cfg.base_dir = path.parent().map(Path::to_path_buf);
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        match &self.model {
            ModelConfig::ClassicFunnel { funnel, a_bound } => {
                funnel.validate()?;
                check_a_bound(*a_bound)?;
            }
            ModelConfig::LikelihoodFunnel { funnel, a_bound } => {
                funnel.validate()?;
                check_a_bound(*a_bound)?;
            }
            ModelConfig::Pta {
                data,
                power_law,
                free_spectral,
            } => {
                power_law.validate()?;
                free_spectral.validate()?;
                if let DataSource::Simulate(s) = data {
                    s.validate()?;
                }
            }
        }
        self.stage1.hmc.validate()?;
        self.stage2.hmc.validate()?;
        self.baseline.hmc.validate()?;
        self.flow.validate()?;
        if self.oracle.bins_1d == 0 || self.oracle.bins_2d == 0 || !(self.oracle.span_sd > 0.0) {
            return Err(Error::InvalidConfig("oracle grid settings must be positive".into()));
        }
        Ok(())
    }

    /// Replaces the master seed and derives every stage seed from it.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.stage1.hmc.seed = labeled_seed(seed, "stage1");
        self.flow.seed = labeled_seed(seed, "flow");
        self.stage2.hmc.seed = labeled_seed(seed, "stage2");
        self.baseline.hmc.seed = labeled_seed(seed, "baseline");
        self
    }

    pub fn kind(&self) -> &'static str {
        match self.model {
            ModelConfig::ClassicFunnel { .. } => "classic_funnel",
            ModelConfig::LikelihoodFunnel { .. } => "likelihood_funnel",
            ModelConfig::Pta { .. } => "pta",
        }
    }

    pub fn to_value(&self) -> Result<Value> {
        Ok(serde_json::to_value(self)?)
    }

    /// The dataset of a PTA config, simulated or loaded.
    pub fn dataset(&self) -> Result<Option<PtaDataset>> {
        match &self.model {
            ModelConfig::Pta { data, power_law, .. } => Ok(Some(match data {
                DataSource::Simulate(s) => {
                    s.validate_against(power_law)?;
                    simulate_dataset(s)?
                }
                DataSource::Path(p) => {
                    let full = match &self.base_dir {
                        Some(b) if p.is_relative() => b.join(p),
                        _ => p.clone(),
                    };
                    load_dataset(&full)?
                }
            })),
            _ => Ok(None),
        }
    }
}

fn check_a_bound(a: f64) -> Result<()> {
    if a > 0.0 && a.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!("a_bound must be positive, got {a}")))
    }
}

/// Everything a run needs once the config has been resolved.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub original: HierarchicalModel,
    pub generalized: HierarchicalModel,
    pub constraint: ConstraintMap,
    pub prior: HyperPrior,
    pub oracle: Oracle,
    pub dataset: Option<PtaDataset>,
}

impl Experiment {
    pub fn build(cfg: &RunConfig) -> Result<Self> {
        match &cfg.model {
            ModelConfig::ClassicFunnel { funnel, a_bound } => {
                let g = GeneralizedFunnelSpec {
                    n_local: funnel.n_local,
                    a_bound: *a_bound,
                };
                Ok(Self {
                    original: HierarchicalModel::Funnel(NealFunnel::classic(*funnel)?),
                    generalized: HierarchicalModel::Generalized(GeneralizedFunnel::new(g, None)?),
                    constraint: ConstraintMap::funnel(&g)?,
                    prior: HyperPrior::Normal {
                        mean: vec![0.0],
                        sd: vec![funnel.hyper_sigma],
                    },
                    oracle: Oracle::Normal { sd: funnel.hyper_sigma },
                    dataset: None,
                })
            }
            ModelConfig::LikelihoodFunnel { funnel, a_bound } => {
                let g = GeneralizedFunnelSpec {
                    n_local: funnel.funnel.n_local,
                    a_bound: *a_bound,
                };
                Ok(Self {
                    original: HierarchicalModel::Funnel(NealFunnel::with_likelihood(*funnel)?),
                    generalized: HierarchicalModel::Generalized(GeneralizedFunnel::new(g, Some(funnel.likelihood()))?),
                    constraint: ConstraintMap::funnel(&g)?,
                    prior: HyperPrior::Normal {
                        mean: vec![0.0],
                        sd: vec![funnel.funnel.hyper_sigma],
                    },
                    oracle: Oracle::LikelihoodFunnel(*funnel),
                    dataset: None,
                })
            }
            ModelConfig::Pta {
                power_law,
                free_spectral,
                ..
            } => {
                let ds = cfg.dataset()?.expect("pta config has a dataset");
                let fs = FreeSpectralSpec {
                    n_freq: ds.n_freq(),
                    ..*free_spectral
                };
                let constraint = ConstraintMap::power_law(power_law, &fs, ds.freqs(), power_law.f_ref_for(&ds))?;
                Ok(Self {
                    original: HierarchicalModel::PowerLaw(PowerLawModel::new(&ds, *power_law)?),
                    generalized: HierarchicalModel::FreeSpectral(FreeSpectralModel::new(&ds, fs)?),
                    prior: HyperPrior::uniform_over(constraint.hyper_in())?,
                    constraint,
                    oracle: Oracle::PowerLaw(Box::new(PowerLawMarginal::new(&ds, *power_law)?)),
                    dataset: Some(ds),
                })
            }
        }
    }

    pub fn mss_run(&self, cfg: &RunConfig, artifacts: Option<Artifacts>) -> MssRun {
        MssRun {
            generalized: self.generalized.clone(),
            constraint: self.constraint.clone(),
            hyper_prior: self.prior.clone(),
            stage1: cfg.stage1.clone(),
            stage2: cfg.stage2.clone(),
            flow: cfg.flow.clone(),
            gates: cfg.gates.clone(),
            artifacts,
            seed: cfg.seed,
        }
    }

    /// Column indices of the original model's hyper-parameters.
    pub fn hyper_columns(&self) -> Vec<usize> {
        self.original.space().block_indices(Block::Hyper)
    }

    pub fn hyper_names(&self) -> Vec<String> {
        let space = self.original.space();
        self.hyper_columns().iter().map(|&j| space.entries()[j].name.clone()).collect()
    }

    pub fn default_scheme(&self) -> Scheme {
        match self.original {
            HierarchicalModel::PowerLaw(_) | HierarchicalModel::FreeSpectral(_) => Scheme::Cprs,
            _ => Scheme::Prs,
        }
    }
}

/// Analytic marginal of the original hyper-parameters.
#[derive(Debug, Clone)]
pub enum Oracle {
    /// The classic funnel: `y ~ N(0, sd)`.
    Normal { sd: f64 },
    LikelihoodFunnel(LikelihoodFunnelSpec),
    PowerLaw(Box<PowerLawMarginal>),
}

/// Oracle statistics of one set of draws.
#[derive(Debug, Clone, Default)]
pub struct Comparison {
    pub ks: BTreeMap<String, f64>,
    pub tv: BTreeMap<String, f64>,
    pub values: BTreeMap<String, f64>,
    pub gates: Vec<Gate>,
    pub figures: Vec<Figure>,
}

impl Oracle {
    pub fn dim(&self) -> usize {
        match self {
            Oracle::PowerLaw(_) => 2,
            _ => 1,
        }
    }

    pub fn log_density(&self, x: &[f64]) -> f64 {
        match self {
            Oracle::Normal { sd } => -0.5 * (x[0] / sd).powi(2),
            Oracle::LikelihoodFunnel(spec) => likelihood_funnel_analytic_marginal(x[0], spec),
            Oracle::PowerLaw(m) => m.log_density(x),
        }
    }

    /// The box holding the oracle's mass at the resolution of the comparison.
    pub fn comparison_grid(&self, cfg: &OracleConfig) -> Result<GridSpec> {
        let (lower, upper, bins) = match self {
            Oracle::Normal { sd } => (vec![-cfg.span_sd * sd], vec![cfg.span_sd * sd], vec![cfg.bins_1d]),
            Oracle::LikelihoodFunnel(_) => {
                let wide = GridSpec::new(vec![-60.0], vec![60.0], vec![4000])?;
                let (m, s) = grid_moments(&wide, |x| self.log_density(x));
                let q = wide.oracle_probabilities(|x| self.log_density(x));
                let centers = wide.centers();
                let (lo, hi) = mass_interval(&q, &centers, 1e-4);
                let lo = lo.min(m[0] - cfg.span_sd * s[0]).max(-60.0);
                let hi = hi.max(m[0] + cfg.span_sd * s[0]).min(60.0);
                (vec![lo], vec![hi], vec![cfg.bins_1d])
            }
            Oracle::PowerLaw(model) => {
                let spec = model.model().spec();
                let boxed = GridSpec::new(
                    vec![spec.log10_a_bounds.0, spec.gamma_bounds.0],
                    vec![spec.log10_a_bounds.1, spec.gamma_bounds.1],
                    vec![200, 200],
                )?;
                let (m, s) = grid_moments(&boxed, |x| self.log_density(x));
                let lo = (0..2).map(|a| (m[a] - cfg.span_sd * s[a]).max(boxed.lower[a])).collect();
                let hi = (0..2).map(|a| (m[a] + cfg.span_sd * s[a]).min(boxed.upper[a])).collect();
                (lo, hi, vec![cfg.bins_2d; 2])
            }
        };
        GridSpec::new(lower, upper, bins)
    }

    /// Oracle mean and sd per axis, from a fine grid over the comparison box.
    pub fn moments(&self, cfg: &OracleConfig) -> Result<(Vec<f64>, Vec<f64>)> {
        let g = self.comparison_grid(cfg)?;
        let fine = GridSpec::new(g.lower.clone(), g.upper.clone(), vec![if g.dim() == 1 { 4000 } else { 200 }; g.dim()])?;
        Ok(grid_moments(&fine, |x| self.log_density(x)))
    }

    /// KS (1-D), grid TV and moment comparisons of `draws` (hyper coordinates
    /// of the original model), with gates from `gates`.
    pub fn compare(&self, label: &str, names: &[String], draws: &[Vec<f64>], cfg: &OracleConfig, gates: &GateConfig) -> Result<Comparison> {
        let mut c = Comparison::default();
        let grid = self.comparison_grid(cfg)?;
        let (mean, sd) = self.moments(cfg)?;
        let tv = grid_tv_distance(draws, |x| self.log_density(x), &grid);
        let tv_name = format!("{label}:tv");
        let tv_max = if self.dim() == 2 { gates.tv2d_max } else { gates.tv_max };
        match tv {
            Ok(v) => {
                c.tv.insert(tv_name.clone(), v);
                if !matches!(self, Oracle::Normal { .. }) {
                    c.gates.push(Gate::below(tv_name, v, tv_max));
                }
            }
            Err(Error::Coverage { fraction }) => {
                c.values.insert(format!("{label}:outside_grid"), fraction);
                c.gates.push(Gate::below(format!("{label}:outside_grid"), fraction, 0.01));
            }
            Err(e) => return Err(e),
        }
        if let Oracle::Normal { sd } = self {
            let y: Vec<f64> = draws.iter().map(|d| d[0]).collect();
            let ks = ks_statistic(&y, |x| ndtr(x / sd));
            let name = format!("{label}:ks[{}]", names[0]);
            c.ks.insert(name.clone(), ks);
            c.gates.push(Gate::below(name, ks, gates.ks_max));
        }
        let n = draws.len() as f64;
        for a in 0..self.dim() {
            let m = draws.iter().map(|d| d[a]).sum::<f64>() / n;
            let s = (draws.iter().map(|d| (d[a] - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
            let off = (m - mean[a]).abs() / sd[a];
            let rel = (s / sd[a] - 1.0).abs();
            c.values.insert(format!("{label}:mean[{}]", names[a]), m);
            c.values.insert(format!("{label}:sd[{}]", names[a]), s);
            c.values.insert(format!("oracle:mean[{}]", names[a]), mean[a]);
            c.values.insert(format!("oracle:sd[{}]", names[a]), sd[a]);
            if self.dim() == 2 {
                c.gates.push(Gate::below(format!("{label}:mean_offset[{}]", names[a]), off, gates.mean_offset_max));
                c.gates.push(Gate::below(format!("{label}:sd_rel_error[{}]", names[a]), rel, gates.std_rel_max));
            }
        }
        c.figures.push(histogram_figure(label, names, draws, &grid, |x| self.log_density(x)));
        Ok(c)
    }
}

fn mass_interval(q: &[f64], centers: &[Vec<f64>], tail: f64) -> (f64, f64) {
    let mut acc = 0.0;
    let mut lo = centers[0][0];
    for (p, c) in q.iter().zip(centers) {
        acc += p;
        if acc >= tail {
            lo = c[0];
            break;
        }
    }
    acc = 0.0;
    let mut hi = centers[centers.len() - 1][0];
    for (p, c) in q.iter().zip(centers).rev() {
        acc += p;
        if acc >= tail {
            hi = c[0];
            break;
        }
    }
    (lo, hi)
}

/// Sample histogram and oracle cell probabilities as densities on `grid`.
pub fn histogram_figure(label: &str, names: &[String], draws: &[Vec<f64>], grid: &GridSpec, logp: impl Fn(&[f64]) -> f64) -> Figure {
    let q = grid.oracle_probabilities(&logp);
    let cell: f64 = (0..grid.dim())
        .map(|a| (grid.upper[a] - grid.lower[a]) / grid.bins[a] as f64)
        .product();
    let p = grid.histogram(draws).unwrap_or_else(|_| vec![f64::NAN; q.len()]);
    let mut columns: Vec<String> = names[..grid.dim()].to_vec();
    columns.push(format!("{label}_density"));
    columns.push("oracle_density".into());
    Figure {
        name: format!("{label}_marginal"),
        columns,
        rows: grid
            .centers()
            .into_iter()
            .zip(p.iter().zip(&q))
            .map(|(mut c, (a, b))| {
                c.push(a / cell);
                c.push(b / cell);
                c
            })
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn comments_are_stripped_and_unknown_keys_rejected() {
        let text = r#"{"//": "top", "model": {"kind": "classic_funnel", "//": "x"}, "seed": 4}"#;
        let cfg = RunConfig::from_json(text, "t").unwrap();
        assert_eq!(cfg.seed, 4);
        assert_eq!(cfg.kind(), "classic_funnel");
        assert_eq!(cfg.stage1.scheme, Scheme::Prs);
        let bad = r#"{"model": {"kind": "classic_funnel"}, "sed": 4}"#;
        assert!(matches!(RunConfig::from_json(bad, "t"), Err(Error::Format { .. })));
    }

    #[test]
    fn conditional_models_default_to_cprs_stage1() {
        let cfg = RunConfig::from_json(r#"{"model": {"kind": "pta"}}"#, "t").unwrap();
        assert_eq!(cfg.stage1.scheme, Scheme::Cprs);
        let cfg = RunConfig::from_json(r#"{"model": {"kind": "likelihood_funnel"}}"#, "t").unwrap();
        assert_eq!(cfg.stage1.scheme, Scheme::Cprs);
        let cfg = RunConfig::from_json(r#"{"model": {"kind": "pta"}, "stage1": {"scheme": "prs"}}"#, "t").unwrap();
        assert_eq!(cfg.stage1.scheme, Scheme::Prs);
    }

    #[test]
    fn seeds_are_derived_per_stage() {
        let cfg = RunConfig::from_json(r#"{"model": {"kind": "classic_funnel"}}"#, "t").unwrap().with_seed(9);
        let seeds = [cfg.stage1.hmc.seed, cfg.flow.seed, cfg.stage2.hmc.seed, cfg.baseline.hmc.seed];
        for i in 0..4 {
            for j in 0..i {
                assert_ne!(seeds[i], seeds[j]);
            }
        }
        assert_eq!(cfg.clone().with_seed(9), cfg);
    }

    #[test]
    fn funnel_experiment_wiring() {
        let cfg = RunConfig::from_json(r#"{"model": {"kind": "likelihood_funnel"}}"#, "t").unwrap();
        let e = Experiment::build(&cfg).unwrap();
        assert_eq!(e.hyper_names(), vec!["y".to_string()]);
        assert_eq!(e.constraint.out_dim(), 9);
        e.mss_run(&cfg, None).validate().unwrap();
        let g = e.oracle.comparison_grid(&cfg.oracle).unwrap();
        let q = g.oracle_probabilities(|x| e.oracle.log_density(x));
        assert!(q[0] < 1e-3 && q[q.len() - 1] < 1e-3);
    }

    #[test]
    fn normal_oracle_moments() {
        let o = Oracle::Normal { sd: 3.0 };
        let (m, s) = o.moments(&OracleConfig::default()).unwrap();
        assert!(m[0].abs() < 1e-9);
        assert!((s[0] - 3.0).abs() < 3e-3, "{}", s[0]);
    }
}
