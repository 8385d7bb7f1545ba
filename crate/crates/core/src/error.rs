use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("newton iteration did not converge: residual {residual:.3e} after {iterations} iterations")]
    NewtonDivergence { residual: f64, iterations: usize },

    #[error("singular linear system at pivot {pivot}")]
    Singular { pivot: usize },

    #[error("propagation failed at substep {substep}: {source}")]
    Propagation {
        substep: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("window {window}: {source}")]
    Window {
        window: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("all weights are degenerate (every log-weight is -inf or NaN)")]
    DegenerateWeights,

    #[error("no sign change on bracket [{a}, {b}]: f(a) = {fa:.3e}, f(b) = {fb:.3e}")]
    NoBracket { a: f64, b: f64, fa: f64, fb: f64 },

    #[error("undefined metric: {0}")]
    UndefinedMetric(&'static str),

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn in_window(window: usize) -> impl FnOnce(Error) -> Error {
        move |e| Error::Window {
            window,
            source: Box::new(e),
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
