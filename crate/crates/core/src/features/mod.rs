//! Feature computation over paired traces: layer selection, projection
//! directions, latent trajectory shifts (L3), semantic delta (L1), KL
//! statistics (L2), likelihood baselines and interpretation helpers.

mod artifact;
mod baselines;
mod direction;
mod extract;
mod interpret;
mod layers;
mod levels;

pub use artifact::{calibrate, CalibrationArtifact, CalibrationConfig, DirectionSpec};
pub use baselines::{likelihood_baselines, raw_probe_matrix, RawProbe};
pub use direction::{
    lts_project, pc1_direction, pc_rank_direction, project_displacement, supervised_direction,
    DirectionKind, LayerDirection,
};
pub use extract::{
    extract_features, FeatureConfig, FeatureLayout, FeatureSlot, FeatureTable, FeatureVector,
    L2Mode, Level,
};
pub use interpret::{vocab_backproject, TokenScore};
pub use layers::{select_target_layers, LayerScore, LayerSelection};
pub use levels::{kl_statistics, semantic_delta, KlStats, DEFAULT_EARLY_WINDOW};
