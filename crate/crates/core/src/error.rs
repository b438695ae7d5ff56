use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Every failure mode of the construction. Guards report the offending
/// location (node index, sweep, step) so that runs can be diagnosed offline.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("direction {nu:?} has |nu.e1| = {dot:e} below threshold {threshold:e}")]
    Direction {
        nu: Vec<f64>,
        dot: f64,
        threshold: f64,
    },

    #[error("resolution error: {0}")]
    Resolution(String),

    #[error("domain too small: {0}")]
    DomainTooSmall(String),

    #[error("sub-domain is not node-aligned with its parent: {0}")]
    Alignment(String),

    #[error("profile index {0} out of range (expected 1..=4)")]
    Index(usize),

    #[error("profile mean {mean:e} exceeds tolerance {tolerance:e}")]
    Mean { mean: f64, tolerance: f64 },

    #[error("|H - h0| = {distance:e} exceeds nearness threshold {threshold:e}")]
    NearH0Violation { distance: f64, threshold: f64 },

    #[error("negative coefficient L_{index}(H - p) = {value:e} at node {node} in sweep {sweep}")]
    NegativeCoefficient {
        sweep: usize,
        index: usize,
        node: usize,
        value: f64,
    },

    #[error("Du^t Du has eigenvalue {eigenvalue:e} below immersion threshold at node {node}")]
    NonImmersion { node: usize, eigenvalue: f64 },

    #[error("parameter error: {0}")]
    Param(String),

    #[error("deficit {deficit:e} exceeds r * delta = {bound:e}")]
    DeficitTooLarge { deficit: f64, bound: f64 },

    #[error(
        "negative adjusted amplitude for direction {index} at node {node}: a^2 = {amplitude_sq:e}, L(F)/delta = {correction:e}"
    )]
    NegativeAmplitude {
        index: usize,
        node: usize,
        amplitude_sq: f64,
        correction: f64,
    },

    #[error("unknown preset '{0}'")]
    UnknownPreset(String),

    #[error("stage {stage}: {source}")]
    Stage {
        stage: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(String),

    #[error("field contains non-finite value at node {0}")]
    NonFinite(usize),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
