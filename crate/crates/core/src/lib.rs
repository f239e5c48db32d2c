pub mod augment;
pub mod capture;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod evasion;
pub mod features;
pub mod flow;
pub mod model;
pub mod nn;
pub mod packet;
pub mod pipeline;
pub mod rng;
pub mod sequence;
pub mod synth;

pub use error::Error;
