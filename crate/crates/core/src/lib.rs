//! Landmark-guided instruction-following navigation on panoramic viewpoint
//! graphs, with learned cooccurrence scoring.

pub mod embedding;
pub mod math;
pub mod priors;
pub mod discovery;
pub mod shifting;
pub mod scoring;
pub mod tensorfile;
pub mod sim;
pub mod agent;
pub mod plot;
pub mod cli;
