//! Impression decomposition: regions of a card and their feature vectors.

pub mod extractor;
pub mod regions;

pub use extractor::{
    pooled_grid, CueMemory, FeatureExtractor, FeatureFile, FrozenProjection, GlobalImpression, NewsFeatures,
};
pub use regions::{cue_tags, grid_3x3, split_regions, split_regions_raster, CueTag, Region, RegionSet};
