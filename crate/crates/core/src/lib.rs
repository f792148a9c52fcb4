pub mod error;
pub mod gridworld;
pub mod grounding;
pub mod hindsight;
pub mod metrics;
pub mod nn;
pub mod refgame;
pub mod replay;
pub mod runner;
pub mod seeding;
pub mod trainer;
pub mod vocab;

pub use error::{EtherError, Result};
