//! Construction of the labelled collage distribution: Perlin blend masks,
//! circular copy artifacts, and a procedural toy world standing in for real
//! and generated image sources.

mod collage;
mod dataset;
mod mask;
mod perlin;
mod toy;
mod toyset;

pub use collage::{
    apply_circular_artifact, collage, disc_offsets, paste_rotated_disc, CollageSample, Provenance,
};
pub use dataset::{
    load_labelled, load_sources, manifest_path, read_manifest, synthesize_collages,
    synthesize_training_set, write_collage_set, write_manifest, CollageParams, LabelledImage,
    ManifestRecord, SourceImage, Tag,
};
pub use mask::field_to_alpha;
pub use perlin::{normalize, perlin_field, perlin_octaves, perlin_raw, PerlinParams};
pub use toy::{
    canonical_layout, generated_layout, make_toy_generated, make_toy_pair, make_toy_real, Layout,
    Shape, ShapeKind, ToyWorldConfig,
};
pub use toyset::{class_name, derive_seed, toy_sources, write_toy_set, ToySetConfig};
