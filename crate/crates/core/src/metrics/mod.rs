//! PD scoring, ranking into quality tiers, and Fréchet distance between
//! feature statistics.

mod features;
mod frechet;
mod heatmap;
mod pd;
mod rank;
mod report;
mod stats;

pub use features::{
    read_features, write_features, ConvEncoder, EncoderTraining, FeatureExtractor, FEATURE_MAGIC,
};
pub use frechet::{frechet_distance, gaussian_stats, GaussianStats, PSD_TOLERANCE};
pub use heatmap::{error_color, heatmap_overlay};
pub use pd::{class_means, class_offset_pd, pd_score, region_pd, PdScore};
pub use rank::{rank_and_split, Split};
pub use report::{
    evaluate_split_images, evaluate_splits, read_scores, write_scores, SplitEntry, SplitReport,
};
pub use stats::{auc, average_ranks, spearman};
