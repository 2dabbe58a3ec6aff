//! Detector training and evaluation: stratified folds, logistic regression,
//! exact ROC-AUC with bootstrap intervals, and the control experiments.

mod auc;
pub mod controls;
mod cv;
mod folds;
mod logreg;
pub mod table;

pub use auc::{bootstrap_ci, roc_auc};
pub use controls::{
    delta_auc_report, layer_sweep, loo_ablation, pc_rank_sweep, pca_dim_sweep, permutation_control,
    random_pairing_similarity, same_topic_pairs, same_topic_subset, DeltaRow, DeltaTable, LooRow,
    LooTable, RankRow, SweepRow, TopicMatching,
};
pub use cv::{
    cross_validate, cross_validate_with, BlockPca, CvConfig, EvaluationReport, FoldTransform,
    Identity, PcaProjection,
};
pub use folds::{make_folds, FoldPlan};
pub use logreg::{train_lr, LinearModel, TrainerConfig};
pub use table::Table;
