//! Synthetic evaluation harness: procedural shape banks, scene
//! generation, dataset and prediction schemas, file formats, scoring
//! reports, and numeric self-checks backing the command line tools.

pub mod bank;
pub mod config;
pub mod dataset;
pub mod eval;
pub mod gradcheck;
pub mod io;
pub mod pipeline;
pub mod scene;
