//! Initialization, optimization, the epoch loop, cross-validation and
//! weight files.

pub mod cv;
pub mod fit;
pub mod init;
pub mod sgd;
pub mod weights;

pub use cv::{cross_validate, fold_splits, mean_std, CvConfig, CvProtocol, CvReport, FoldReport};
pub use fit::{evaluate, train, Control, EpochMetrics, Evaluation, TrainConfig, TrainOutcome};
pub use init::{calibrate, init_params, InitConfig, InitDraw, SigmaScale, CALIBRATION_SAMPLES};
pub use sgd::{sgd_step, OptimizerState, SgdConfig};
pub use weights::{decode_model, encode_model, load_model, load_model_as, save_model};
