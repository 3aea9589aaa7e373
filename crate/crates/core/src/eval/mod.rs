//! Synthetic scenes, metrics, benchmark adapters and evaluation runners.

mod metrics;
mod report;
mod synthetic;
mod vos;

pub use metrics::{boundary, correlation_metric, default_tolerance, f_metric, j_metric, video_jf, JfScore};
pub use report::{
    ablation_csv, alpha_sweep, components_ablation, evaluate, evaluate_ground_truth, np_sweep, report_from_candidates,
    score_run, suite_candidates, AblationRow, EvalItem, EvalReport, VideoResult,
};
pub use synthetic::{generate_scenes, Color, Instance, SceneSpec, Shape, SyntheticScene};
pub use vos::{
    load_vos_directory, read_mask_dir, write_mask_dir, write_vos_directory, VosDataset, VosEntry, VosSample,
    EXPRESSIONS_FILE, FRAMES_DIR, MASKS_DIR,
};
