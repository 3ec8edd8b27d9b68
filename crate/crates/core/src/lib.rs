//! Confusion labeling, confusion prediction and adaptive explanation-level
//! control for robot failure episodes, plus a synthetic study generator.

pub mod controller;
pub mod domain;
pub mod error;
pub mod features;
pub mod forest;
pub mod io;
pub mod labeler;
pub mod pipeline;
pub mod simulate;
pub mod stats;

pub use error::{Error, Result};
