//! Deterministic 3D volume augmentation and a small from-scratch 3D CNN
//! training stack for binary classification of neuroimaging derivatives.
//!
//! Everything downstream of a seed is reproducible bit-for-bit: the RNG
//! is counter-based (no shared mutable state), parallel reductions are
//! ordered, and all floating-point accumulation is f64 regardless of the
//! storage type.

pub mod augment;
pub mod data;
pub mod error;
pub mod nn;
pub mod report;
pub mod rng;
pub mod sampling;
pub mod train;
pub mod volume;

pub use augment::{apply_drawn, apply_pipeline, draw, AugmentSpec, DrawnParams};
pub use data::{
    fetch, load_dataset, load_manifest, parse_phenotype_csv, synth_generate, write_manifest,
    Dataset, FetchSpec, Label, ManifestEntry, PhenotypeSpec, SynthSpec,
};
pub use error::{Error, Result};
pub use report::{
    collect_summaries, combine_summaries, load_fold_json, read_folds_csv, read_history_csv,
    read_summary_csv, save_fold_json, write_folds_csv, write_history_csv, write_summary_csv,
    FoldRow, HistoryRow, SummaryRow,
};
pub use rng::RngStream;
pub use sampling::{
    bspline_upsample, trilinear_sample, warp_affine, warp_displacement, Affine4, ControlGrid,
    DisplacementField,
};
pub use train::{
    compare_to_baseline, cross_validate, mean_std, run_fold, run_fold_full, stratified_split, tta_evaluate,
    EarlyStopper, EpochStats, ExperimentReport, FoldResult, Split, SplitSpec, StopDecision,
    TrainMode, TrainParams, TrainSetup,
};
pub use volume::{read_nifti, write_nifti, Volume3};
