pub mod acquisition;
pub mod benchmarks;
pub mod bilevel;
pub mod dual;
pub mod error;
pub mod gp;
pub mod linalg;
pub mod normal;
pub mod optim;
pub mod path;
pub mod regret;
pub mod runner;
pub mod rng;

pub use error::{Error, Result};
