//! Synthetic relaxation datasets with known burst content.

pub mod config;
pub mod generate;
pub mod profile;

pub use config::{flat_pairs, ConfigError, PulseTubeConfig, ScenarioConfig, ENV_PREFIX, KEYS};
pub use generate::{
    baseline_record, gen_baseline, gen_dataset, inject_pt_train, inject_radiation_event, record_file_name,
    stream_rng, Dataset, SynthError,
};
pub use profile::{BurstProfile, BurstShape, PulseTubeShape};
