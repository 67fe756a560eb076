//! Training and evaluation: the anchor loss, sample preparation, the
//! optimizer loop, metrics, baselines and the observability sweep.

mod loss;
mod metrics;
mod sample;
mod trainer;

pub use loss::{gmm_step_nll, graph_loss, hard_assign, scene_loss, Balance, LossBreakdown};
pub use metrics::{
    evaluate, min_ade_fde, reports_to_csv, reports_to_text, sweep, sweep_label, sweep_regime, ConstantVelocity,
    Displacement, MetricReport, ModelPredictor, OccupancyPrior, Predictor, DEFAULT_THRESHOLD,
};
pub use sample::{build_sample, build_samples, occluder_of_interest, scene_seed, Sample, SampleSpec};
pub use trainer::{LogRecord, TrainConfig, Trainer};
