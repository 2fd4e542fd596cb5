mod config;
mod fewshot;
mod losses;
mod trainer;

pub use config::{CrossLoss, TrainConfig};
pub use fewshot::{extend_few_shot, FewShotSample};
pub use losses::{erode_mask, fbc_loss, l1, loss_forward, loss_inverse, mean_abs_error, warped_l1_loss, FbcSettings, FbcTerms};
pub use trainer::{
    evaluate, nrr_loss, read_metrics, train, CameraEval, CrossInstrumentation, CrossSample, EvalReport, LossBreakdown, MetricsRow, RunOptions, SelfSample,
    TrainOutcome, Trainer, BEST_CHECKPOINT, LAST_CHECKPOINT, LAST_GOOD_CHECKPOINT, METRICS_FILE, METRICS_HEADER,
};
