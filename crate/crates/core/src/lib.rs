pub mod adjust;
pub mod baselines;
pub mod cli;
pub mod error;
pub mod groupsolve;
pub mod linalg;
pub mod model;
pub mod oracle;
pub mod posterior;
pub mod sampler;
pub mod simlab;

pub use error::{Error, Result};
