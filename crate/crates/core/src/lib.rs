//! Reactive motion planning for serial manipulators among moving obstacles.

pub mod bubbles;
pub mod cli;
pub mod config;
pub mod cspace;
pub mod drgbt;
pub mod error;
pub mod geometry;
pub mod kinematics;
pub mod replanner;
pub mod scheduler;
pub mod sim;
pub mod trajectory;

pub use error::{Error, Result};
