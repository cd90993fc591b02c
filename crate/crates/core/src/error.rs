use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    /// A value lies outside the domain of the object evaluating it.
    #[error("value {value} outside domain [{lo}, {hi}]")]
    Domain { value: f64, lo: f64, hi: f64 },

    /// Same as [`Error::Domain`] but for the `index`-th element of a batch.
    #[error("value {value} at index {index} outside domain [{lo}, {hi}]")]
    DomainAt {
        index: usize,
        value: f64,
        lo: f64,
        hi: f64,
    },

    /// Caller violated a documented precondition.
    #[error("{0}")]
    Contract(String),

    /// The objective could not be evaluated at the starting point.
    #[error("objective is not finite at the starting point")]
    NonFiniteStart,

    /// No model in a selection grid could be fitted.
    #[error("no model in the grid was fitted successfully")]
    EmptyGrid,
}

macro_rules! contract {
    ($($arg:tt)*) => {
        $crate::error::Error::Contract(alloc::format!($($arg)*))
    };
}
pub(crate) use contract;
