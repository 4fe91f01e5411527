//! Experiment driver for `mgpg-core`: experiment files, campaigns, file
//! formats, plot data and the finite-difference checks behind `mgpg gradcheck`.

pub mod campaign;
pub mod config;
pub mod error;
pub mod formats;
pub mod gradcheck;
pub mod plots;

pub use campaign::{run_campaign, CampaignReport};
pub use config::{load_experiment, parse_experiment, ExperimentSpec};
pub use error::{HarnessError, Result};
pub use plots::emit_plot_data;
