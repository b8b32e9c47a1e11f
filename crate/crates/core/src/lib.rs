pub mod cli;
pub mod config;
pub mod dataset;
pub mod features;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod purify;
pub mod recommend;
pub mod synth;
pub mod training;
pub mod types;
