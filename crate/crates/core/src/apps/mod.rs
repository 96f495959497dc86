//! Downstream products of the inference pipeline: pass annotation,
//! region-of-interest accuracy for automated zoom-in, possession-split
//! running metrics, and masked-trajectory imputation evaluation.

mod imputation;
mod passes;
mod roi;
mod running;

pub use imputation::{evaluate_imputation, ImputationReport};
pub use passes::{detect_passes, match_passes, PassEvent, PassMatchReport};
pub use roi::{roi_accuracy, Homography};
pub use running::{
    random_possession_baseline, rp_compare, rp_metrics, PhaseSplit, RpErrorSummary, RpReport,
    HSR_THRESHOLD_KMH,
};
