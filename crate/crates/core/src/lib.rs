pub mod cli;
pub mod cohorts;
pub mod error;
pub mod estimation;
pub mod io;
pub mod model;
pub mod optim;
pub mod seeding;
pub mod simulator;

pub use error::{Error, Result};
