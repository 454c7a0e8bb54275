//! Building blocks for a desk-scale pancreatic lesion screening harness:
//! voxel volumes, procedural abdominal phantoms, a three-stage detection
//! cascade driven by a corrupted-oracle segmenter, patient- and lesion-level
//! decision rules, and screening statistics.

pub mod cascade;
pub mod decision;
pub mod phantom;
pub mod quantile;
pub mod rng;
pub mod stats;
pub mod volume;
