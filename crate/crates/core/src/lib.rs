pub mod assignment;
pub mod cli;
pub mod geometry;
pub mod io;
pub mod losses;
pub mod metrics;
pub mod motion;
pub mod rng;
pub mod synth;
pub mod tracker;
pub mod toynet;
