pub mod cli;
pub mod config;
pub mod contour;
pub mod dynamics;
pub mod error;
pub mod fdm;
pub mod grid;
pub mod io;
pub mod gradcheck;
pub mod losses;
pub mod net;
pub mod rng;
pub mod rollout;
pub mod sampling;
pub mod trainer;

pub use error::{Result, ZubovError};
