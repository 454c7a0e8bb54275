//! Dense 3D voxel grids and the geometric algorithms the rest of the
//! pipeline is built on.
//!
//! Voxels are stored x-fastest (`index = x + nx * (y + ny * z)`), which is
//! also the on-disk order of NIfTI-1. Physical coordinates place the center
//! of voxel `(x, y, z)` at `(x * sx, y * sy, z * sz)` millimetres.

mod components;
mod distance;
mod morphology;
pub mod nifti;
mod shape;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use components::{connected_components, Component, ComponentSet, Connectivity};
pub use distance::{hausdorff_percentile, hd95, surface_distances};
pub use morphology::{ball_offsets, dilate, erode, overlap_count, surface_voxels};
pub use shape::{component_stats, max_diameter_mm, ComponentStats, EXACT_DIAMETER_LIMIT};

pub(crate) use distance::squared_edt_in_place;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum VolumeError {
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),
    #[error("volume has {actual} values but geometry requires {expected}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("non-finite intensity at voxel {0}")]
    NonFinite(usize),
    #[error("label value {value} at voxel {index} is not a known anatomy label")]
    UnknownLabel { index: usize, value: u8 },
    #[error("volumes are not aligned: {a} vs {b}")]
    Misaligned { a: String, b: String },
    #[error("distance is undefined for an empty mask")]
    EmptyMask,
    #[error("component is empty")]
    EmptyComponent,
    #[error("component voxel {index} lies outside a volume of {len} voxels")]
    OutOfBounds { index: usize, len: usize },
}

/// Grid size and voxel spacing shared by every volume type.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VolumeGeometry {
    dims: [usize; 3],
    spacing: [f64; 3],
}

impl VolumeGeometry {
    pub fn new(dims: [usize; 3], spacing: [f64; 3]) -> Result<Self, VolumeError> {
        if dims.iter().any(|&d| d == 0) {
            return Err(VolumeError::InvalidGeometry(format!("dims {dims:?} must all be >= 1")));
        }
        if spacing.iter().any(|&s| !(s.is_finite() && s > 0.0)) {
            return Err(VolumeError::InvalidGeometry(format!(
                "spacing {spacing:?} must be finite and positive"
            )));
        }
        Ok(Self { dims, spacing })
    }

    /// Unit-spaced geometry, convenient in tests and voxel-space code.
    pub fn cube(n: usize) -> Self {
        Self::new([n, n, n], [1.0; 3]).expect("n >= 1")
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }

    pub fn len(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn voxel_volume(&self) -> f64 {
        self.spacing[0] * self.spacing[1] * self.spacing[2]
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.dims[0] * (y + self.dims[1] * z)
    }

    #[inline]
    pub fn coords(&self, index: usize) -> [usize; 3] {
        let x = index % self.dims[0];
        let rest = index / self.dims[0];
        [x, rest % self.dims[1], rest / self.dims[1]]
    }

    /// Index of a signed coordinate, or `None` when it falls outside the grid.
    #[inline]
    pub fn checked_index(&self, x: i64, y: i64, z: i64) -> Option<usize> {
        if x < 0 || y < 0 || z < 0 {
            return None;
        }
        let (x, y, z) = (x as usize, y as usize, z as usize);
        if x >= self.dims[0] || y >= self.dims[1] || z >= self.dims[2] {
            return None;
        }
        Some(self.index(x, y, z))
    }

    /// Physical position of a voxel center in millimetres.
    #[inline]
    pub fn center_mm(&self, index: usize) -> [f64; 3] {
        let c = self.coords(index);
        [
            c[0] as f64 * self.spacing[0],
            c[1] as f64 * self.spacing[1],
            c[2] as f64 * self.spacing[2],
        ]
    }

    pub fn is_aligned(&self, other: &VolumeGeometry) -> bool {
        self == other
    }

    pub fn ensure_aligned(&self, other: &VolumeGeometry) -> Result<(), VolumeError> {
        if self.is_aligned(other) {
            Ok(())
        } else {
            Err(VolumeError::Misaligned { a: self.describe(), b: other.describe() })
        }
    }

    fn describe(&self) -> String {
        format!("{:?} @ {:?} mm", self.dims, self.spacing)
    }
}

/// Anatomy labels produced by the phantom and by stage-1 segmentation.
///
/// "Pancreas" as a region always means head ∪ body ∪ tail.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
#[repr(u8)]
pub enum AnatomyLabel {
    Background = 0,
    PancreasHead = 1,
    PancreasBody = 2,
    PancreasTail = 3,
    Duct = 4,
    Artery = 5,
    Vein = 6,
    Lesion = 7,
}

impl AnatomyLabel {
    pub const ALL: [AnatomyLabel; 8] = [
        AnatomyLabel::Background,
        AnatomyLabel::PancreasHead,
        AnatomyLabel::PancreasBody,
        AnatomyLabel::PancreasTail,
        AnatomyLabel::Duct,
        AnatomyLabel::Artery,
        AnatomyLabel::Vein,
        AnatomyLabel::Lesion,
    ];

    pub fn from_u8(value: u8) -> Option<Self> {
        Self::ALL.get(value as usize).copied()
    }

    pub fn is_pancreas(self) -> bool {
        matches!(self, Self::PancreasHead | Self::PancreasBody | Self::PancreasTail)
    }

    pub fn segment(self) -> Option<Segment> {
        match self {
            Self::PancreasHead => Some(Segment::Head),
            Self::PancreasBody => Some(Segment::Body),
            Self::PancreasTail => Some(Segment::Tail),
            _ => None,
        }
    }
}

/// Pancreatic sub-segment, the unit of report-style localization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Segment {
    Head,
    Body,
    Tail,
}

impl Segment {
    pub const ALL: [Segment; 3] = [Segment::Head, Segment::Body, Segment::Tail];

    pub fn label(self) -> AnatomyLabel {
        match self {
            Segment::Head => AnatomyLabel::PancreasHead,
            Segment::Body => AnatomyLabel::PancreasBody,
            Segment::Tail => AnatomyLabel::PancreasTail,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Segment::Head => "head",
            Segment::Body => "body",
            Segment::Tail => "tail",
        }
    }

    pub fn ordinal(self) -> usize {
        self as usize
    }
}

impl std::fmt::Display for Segment {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Segment {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "head" => Ok(Segment::Head),
            "body" => Ok(Segment::Body),
            "tail" => Ok(Segment::Tail),
            other => Err(format!("unknown pancreas segment '{other}'")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalarVolume {
    geometry: VolumeGeometry,
    values: Vec<f32>,
}

impl ScalarVolume {
    pub fn new(geometry: VolumeGeometry, values: Vec<f32>) -> Result<Self, VolumeError> {
        if values.len() != geometry.len() {
            return Err(VolumeError::LengthMismatch { expected: geometry.len(), actual: values.len() });
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(VolumeError::NonFinite(i));
        }
        Ok(Self { geometry, values })
    }

    pub fn filled(geometry: VolumeGeometry, value: f32) -> Self {
        Self { geometry, values: vec![value; geometry.len()] }
    }

    pub fn geometry(&self) -> &VolumeGeometry {
        &self.geometry
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    #[inline]
    pub fn get(&self, index: usize) -> f32 {
        self.values[index]
    }

    pub(crate) fn values_mut(&mut self) -> &mut [f32] {
        &mut self.values
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabelVolume {
    geometry: VolumeGeometry,
    labels: Vec<AnatomyLabel>,
}

impl LabelVolume {
    pub fn new(geometry: VolumeGeometry, labels: Vec<AnatomyLabel>) -> Result<Self, VolumeError> {
        if labels.len() != geometry.len() {
            return Err(VolumeError::LengthMismatch { expected: geometry.len(), actual: labels.len() });
        }
        Ok(Self { geometry, labels })
    }

    pub fn background(geometry: VolumeGeometry) -> Self {
        Self { geometry, labels: vec![AnatomyLabel::Background; geometry.len()] }
    }

    pub fn from_raw(geometry: VolumeGeometry, raw: &[u8]) -> Result<Self, VolumeError> {
        if raw.len() != geometry.len() {
            return Err(VolumeError::LengthMismatch { expected: geometry.len(), actual: raw.len() });
        }
        let labels = raw
            .iter()
            .enumerate()
            .map(|(index, &value)| {
                AnatomyLabel::from_u8(value).ok_or(VolumeError::UnknownLabel { index, value })
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self { geometry, labels })
    }

    pub fn geometry(&self) -> &VolumeGeometry {
        &self.geometry
    }

    pub fn labels(&self) -> &[AnatomyLabel] {
        &self.labels
    }

    #[inline]
    pub fn get(&self, index: usize) -> AnatomyLabel {
        self.labels[index]
    }

    pub fn set(&mut self, index: usize, label: AnatomyLabel) {
        self.labels[index] = label;
    }

    pub fn count(&self, label: AnatomyLabel) -> usize {
        self.labels.iter().filter(|&&l| l == label).count()
    }

    pub fn histogram(&self) -> [usize; 8] {
        let mut h = [0usize; 8];
        for &l in &self.labels {
            h[l as usize] += 1;
        }
        h
    }

    pub fn mask_of(&self, label: AnatomyLabel) -> BinaryMask {
        self.mask_where(|l| l == label)
    }

    /// Union of head, body and tail.
    pub fn pancreas_mask(&self) -> BinaryMask {
        self.mask_where(AnatomyLabel::is_pancreas)
    }

    pub fn mask_where(&self, pred: impl Fn(AnatomyLabel) -> bool) -> BinaryMask {
        BinaryMask {
            geometry: self.geometry,
            bits: self.labels.iter().map(|&l| pred(l)).collect(),
        }
    }

    pub fn to_raw(&self) -> Vec<u8> {
        self.labels.iter().map(|&l| l as u8).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BinaryMask {
    geometry: VolumeGeometry,
    bits: Vec<bool>,
}

impl BinaryMask {
    pub fn empty(geometry: VolumeGeometry) -> Self {
        Self { geometry, bits: vec![false; geometry.len()] }
    }

    pub fn new(geometry: VolumeGeometry, bits: Vec<bool>) -> Result<Self, VolumeError> {
        if bits.len() != geometry.len() {
            return Err(VolumeError::LengthMismatch { expected: geometry.len(), actual: bits.len() });
        }
        Ok(Self { geometry, bits })
    }

    pub fn from_indices(geometry: VolumeGeometry, indices: impl IntoIterator<Item = usize>) -> Self {
        let mut mask = Self::empty(geometry);
        for i in indices {
            mask.bits[i] = true;
        }
        mask
    }

    pub fn from_fn(geometry: VolumeGeometry, f: impl Fn(usize, usize, usize) -> bool) -> Self {
        let [nx, ny, nz] = geometry.dims();
        let mut bits = Vec::with_capacity(geometry.len());
        for z in 0..nz {
            for y in 0..ny {
                for x in 0..nx {
                    bits.push(f(x, y, z));
                }
            }
        }
        Self { geometry, bits }
    }

    pub fn geometry(&self) -> &VolumeGeometry {
        &self.geometry
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    #[inline]
    pub fn get(&self, index: usize) -> bool {
        self.bits[index]
    }

    #[inline]
    pub fn set(&mut self, index: usize, value: bool) {
        self.bits[index] = value;
    }

    pub fn popcount(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    /// Foreground voxel indices in ascending order.
    pub fn indices(&self) -> Vec<usize> {
        self.bits.iter().enumerate().filter_map(|(i, &b)| b.then_some(i)).collect()
    }

    pub fn union(&self, other: &BinaryMask) -> Result<BinaryMask, VolumeError> {
        self.geometry.ensure_aligned(&other.geometry)?;
        let bits = self.bits.iter().zip(&other.bits).map(|(&a, &b)| a || b).collect();
        Ok(BinaryMask { geometry: self.geometry, bits })
    }

    pub fn intersection(&self, other: &BinaryMask) -> Result<BinaryMask, VolumeError> {
        self.geometry.ensure_aligned(&other.geometry)?;
        let bits = self.bits.iter().zip(&other.bits).map(|(&a, &b)| a && b).collect();
        Ok(BinaryMask { geometry: self.geometry, bits })
    }

    /// `true` when every foreground voxel of `self` is also set in `other`.
    pub fn is_subset_of(&self, other: &BinaryMask) -> Result<bool, VolumeError> {
        self.geometry.ensure_aligned(&other.geometry)?;
        Ok(self.bits.iter().zip(&other.bits).all(|(&a, &b)| !a || b))
    }

    /// Translate by an integer voxel offset; voxels leaving the grid are dropped.
    pub fn translated(&self, offset: [i64; 3]) -> BinaryMask {
        let mut out = BinaryMask::empty(self.geometry);
        for i in self.indices() {
            let c = self.geometry.coords(i);
            if let Some(j) = self.geometry.checked_index(
                c[0] as i64 + offset[0],
                c[1] as i64 + offset[1],
                c[2] as i64 + offset[2],
            ) {
                out.bits[j] = true;
            }
        }
        out
    }

    pub fn to_raw(&self) -> Vec<u8> {
        self.bits.iter().map(|&b| b as u8).collect()
    }
}

/// Per-voxel lesion probability in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityMap {
    geometry: VolumeGeometry,
    values: Vec<f32>,
}

impl ProbabilityMap {
    pub fn zeros(geometry: VolumeGeometry) -> Self {
        Self { geometry, values: vec![0.0; geometry.len()] }
    }

    pub fn new(geometry: VolumeGeometry, values: Vec<f32>) -> Result<Self, VolumeError> {
        if values.len() != geometry.len() {
            return Err(VolumeError::LengthMismatch { expected: geometry.len(), actual: values.len() });
        }
        if let Some(i) = values.iter().position(|v| !(0.0..=1.0).contains(v)) {
            return Err(VolumeError::InvalidGeometry(format!(
                "probability {} at voxel {i} outside [0, 1]",
                values[i]
            )));
        }
        Ok(Self { geometry, values })
    }

    pub fn geometry(&self) -> &VolumeGeometry {
        &self.geometry
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    #[inline]
    pub fn get(&self, index: usize) -> f32 {
        self.values[index]
    }

    /// Raise a voxel to `p` if it is currently lower. `p` is clamped to `[0, 1]`.
    #[inline]
    pub fn raise(&mut self, index: usize, p: f32) {
        let p = p.clamp(0.0, 1.0);
        if p > self.values[index] {
            self.values[index] = p;
        }
    }

    #[inline]
    pub fn set(&mut self, index: usize, p: f32) {
        self.values[index] = p.clamp(0.0, 1.0);
    }

    pub fn threshold(&self, min: f32) -> BinaryMask {
        BinaryMask { geometry: self.geometry, bits: self.values.iter().map(|&p| p >= min).collect() }
    }

    pub fn max(&self) -> f32 {
        self.values.iter().copied().fold(0.0, f32::max)
    }
}
