//! Test-data synthesis and the benchmark harness.
//!
//! A benchmark is described by a [`DatasetManifest`] (JSON):
//!
//! ```json
//! {
//!   "version": 1,
//!   "cases": [
//!     {"name": "im0_k0", "ground_truth": "image0.png", "kernel": "kernel0.txt", "noise": 0.01},
//!     {"blurred": "real.png", "kernel": "psf.png"}
//!   ]
//! }
//! ```
//!
//! Paths are relative to the manifest. Cases without a `blurred` image get
//! one synthesized from the ground truth with circular blur and Gaussian
//! noise of standard deviation `noise` (default 0.01). [`run_benchmark`]
//! writes `restored/*.png`, `cases/*.json`, `aggregate.csv`, `metrics.csv`
//! and `report.json` into the output directory.

mod dataset;
mod manifest;
mod run;
mod synth;

pub use dataset::{kernel_to_text, write_synthetic_dataset, SyntheticDataset};
pub use manifest::{CaseSpec, DatasetManifest, DEFAULT_NOISE, MANIFEST_VERSION};
pub use run::{
    aggregate, prepare_case, restore, run_benchmark, validate_report, Aggregate, BenchConfig,
    BenchReport, CaseRecord, CaseStatus, Method, REPORT_SCHEMA_VERSION, WORKERS_ENV,
};
pub use synth::{blur_with_noise, motion_kernel, procedural_scene, synth_blur};
