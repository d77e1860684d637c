//! Margin loss, optimizer, gradient checking and the training loop.

mod aam;
mod gradcheck;
mod optim;
mod trainer;

pub use aam::{aam_loss, accuracy, AamHead, AAM_WEIGHT};
pub use gradcheck::{family_of, finite_diff_check, GradCheckOptions, GradCheckReport, GradSample};
pub use optim::{Adam, LrSchedule};
pub use trainer::{
    random_crop, train, train_from, write_metrics, Dataset, EpochMetrics, FineTune, TrainOutcome, TrainSchedule,
    FRAME_HOP, FRAME_WIN,
};
