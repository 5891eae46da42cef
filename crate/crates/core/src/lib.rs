pub mod checkpoint;
pub mod cnn;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod ladder;
pub mod layers;
pub mod metrics;
pub mod network;
pub mod numerics;
pub mod optimizer;
pub mod params;
pub mod train;
