pub mod model;
pub mod synth;
pub mod detect;
pub mod characterize;
pub mod classify;
pub mod pipeline;
pub mod spectral;
pub mod coherence;
pub mod accel;
pub mod cli;
