use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parameter `{name}` = {value} is on or outside its bound ({lower}, {upper})")]
    BoundViolation {
        name: String,
        value: f64,
        lower: f64,
        upper: f64,
    },

    #[error("log-density is not finite at {context}")]
    NonFiniteDensity { context: String },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("invalid parameter space: {0}")]
    InvalidSpace(String),

    #[error("prior variance must be strictly positive (entry {index} = {value})")]
    NonPositiveVariance { index: usize, value: f64 },

    #[error("power-law amplitude must be strictly positive, got {0}")]
    NonPositiveAmplitude(f64),

    #[error("constraint map is not injective: {0}")]
    DegenerateFrequencies(String),

    #[error("numerically singular matrix: {0}")]
    NumericalSingular(String),

    #[error("jittered time stamps collided after {attempts} attempts")]
    JitterCollision { attempts: usize },

    #[error("time span is zero; the design matrix is undefined")]
    DegenerateSpan,

    #[error("format error in {context}{}: {message}", .line.map(|l| format!(" (line {l})")).unwrap_or_default())]
    Format {
        context: String,
        line: Option<usize>,
        message: String,
    },

    #[error("unsupported format version {found} (expected {expected})")]
    VersionMismatch { found: u64, expected: u64 },

    #[error("trajectory diverged (|dH| = {energy_error})")]
    Divergence { energy_error: f64 },

    #[error("{divergent} of {total} warmup trajectories diverged")]
    AllDivergent { divergent: usize, total: usize },

    #[error("initial point is outside the support of the target")]
    InitOutOfSupport,

    #[error("unsupported model for this scheme: {0}")]
    UnsupportedModel(String),

    #[error("degenerate chain: {0}")]
    DegenerateChain(String),

    #[error("non-finite training loss at epoch {epoch}: {detail}")]
    NonFiniteLoss { epoch: usize, detail: String },

    #[error("too few samples: need at least {needed}, got {got}")]
    TooFewSamples { needed: usize, got: usize },

    #[error("{fraction:.4} of samples fall outside the grid (max 0.01)")]
    Coverage { fraction: f64 },

    #[error("convergence gate failed: {0}")]
    ConvergenceGateFailed(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn format(context: impl Into<String>, line: Option<usize>, message: impl Into<String>) -> Self {
        Error::Format {
            context: context.into(),
            line,
            message: message.into(),
        }
    }

    pub fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }
}
