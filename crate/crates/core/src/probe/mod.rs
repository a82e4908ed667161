//! Downstream evaluation: linear probes on frozen representations,
//! utterance splits, data-efficiency sweeps and the ablation harness.

mod ablation;
mod cache;
mod extract;
mod finetune;
mod linear;
mod split;
mod task;

pub use ablation::{ablation_csv, ablation_suite, AblationRow, ABLATION_HEADER, ABLATION_TASKS};
pub use cache::{cache_path, decode_array, encode_array, read_array, write_array, ARRAY_MAGIC};
pub use extract::{checkpoint_id, extract_representations, model_fingerprint};
pub use finetune::{
    data_efficiency_sweep, finetune_frame_classifier, frame_accuracy, select_frames, sweep_csv,
    FinetuneConfig, FrameSelection, SweepConfig, SweepMode, SweepRow, SWEEP_HEADER,
};
pub use linear::{train_linear_probe, LabeledSet, LinearProbe, ProbeConfig, ProbeResult};
pub use split::{one_shot_split, stratified_subsample, utterance_split, Split};
pub use task::{
    frame_set, pooled_set, probe_representations, run_probe, task_sets, task_split, ProbeKind,
    ProbeTask,
};
