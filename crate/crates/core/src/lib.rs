//! Long/short diffeomorphic motion for ultrasound landmark tracking.

pub mod config;
pub mod diffeo;
pub mod emma;
pub mod error;
pub mod eval;
pub mod grid;
pub mod io;
pub mod motion;
pub mod synth;
pub mod tracker;

pub use error::{Error, Result};
