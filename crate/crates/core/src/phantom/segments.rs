//! Head/body/tail partition by arc-length thirds along a fitted centerline.
//!
//! The centerline is the cubic principal curve of the voxel cloud: voxel
//! coordinates are projected on the principal axis, and the two orthogonal
//! offsets are least-squares fitted as cubic polynomials of that projection.
//! Coordinates are taken relative to the mask's bounding-box corner, so the
//! result is exactly invariant to integer translations.

use nalgebra::{DMatrix, DVector, Matrix3, SymmetricEigen, Vector3};

use super::PhantomError;
use crate::volume::{AnatomyLabel, BinaryMask, LabelVolume};

const CURVE_SAMPLES: usize = 256;

/// Sampled centerline with cumulative arc length.
#[derive(Debug, Clone)]
pub struct Centerline {
    points: Vec<Vector3<f64>>,
    arc: Vec<f64>,
}

impl Centerline {
    pub fn length(&self) -> f64 {
        *self.arc.last().unwrap_or(&0.0)
    }

    /// Arc-length coordinate of the orthogonal projection of `p` onto the
    /// polyline.
    pub fn project(&self, p: Vector3<f64>) -> f64 {
        let mut best = (f64::INFINITY, 0.0);
        for k in 0..self.points.len().saturating_sub(1) {
            let a = self.points[k];
            let seg = self.points[k + 1] - a;
            let len2 = seg.norm_squared();
            let u = if len2 > 0.0 { ((p - a).dot(&seg) / len2).clamp(0.0, 1.0) } else { 0.0 };
            let q = a + seg * u;
            let d = (p - q).norm_squared();
            if d < best.0 {
                best = (d, self.arc[k] + u * (self.arc[k + 1] - self.arc[k]));
            }
        }
        if self.points.len() == 1 {
            return 0.0;
        }
        best.1
    }
}

struct Cloud {
    points: Vec<Vector3<f64>>,
}

fn cloud(mask: &BinaryMask) -> Cloud {
    let g = mask.geometry();
    let idx = mask.indices();
    let mut lo = [usize::MAX; 3];
    for &i in &idx {
        let c = g.coords(i);
        for a in 0..3 {
            lo[a] = lo[a].min(c[a]);
        }
    }
    let sp = g.spacing();
    let points = idx
        .iter()
        .map(|&i| {
            let c = g.coords(i);
            Vector3::new(
                (c[0] - lo[0]) as f64 * sp[0],
                (c[1] - lo[1]) as f64 * sp[1],
                (c[2] - lo[2]) as f64 * sp[2],
            )
        })
        .collect();
    Cloud { points }
}

/// Orient an axis so its largest-magnitude component is positive.
fn canonical(v: Vector3<f64>) -> Vector3<f64> {
    let k = v.iamax();
    if v[k] < 0.0 {
        -v
    } else {
        v
    }
}

fn fit_cubic(s: &[f64], y: &[f64]) -> [f64; 4] {
    let n = s.len();
    let a = DMatrix::from_fn(n, 4, |r, c| s[r].powi(c as i32));
    let b = DVector::from_column_slice(y);
    let svd = a.svd(true, true);
    match svd.solve(&b, 1e-10) {
        Ok(x) => [x[0], x[1], x[2], x[3]],
        Err(_) => [y.iter().sum::<f64>() / n as f64, 0.0, 0.0, 0.0],
    }
}

fn eval_cubic(c: &[f64; 4], s: f64) -> f64 {
    c[0] + s * (c[1] + s * (c[2] + s * c[3]))
}

fn fit_cloud(points: &[Vector3<f64>]) -> (Centerline, Vec<f64>) {
    let n = points.len() as f64;
    let mean = points.iter().fold(Vector3::zeros(), |acc, p| acc + p) / n;
    let mut cov = Matrix3::zeros();
    for p in points {
        let d = p - mean;
        cov += d * d.transpose();
    }
    cov /= n;
    let eig = SymmetricEigen::new(cov);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let axes: Vec<Vector3<f64>> = order.iter().map(|&k| canonical(eig.eigenvectors.column(k).into_owned())).collect();

    let s: Vec<f64> = points.iter().map(|p| (p - mean).dot(&axes[0])).collect();
    let (smin, smax) = s.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let half = 0.5 * (smax - smin);
    let mid = 0.5 * (smax + smin);
    let norm = |v: f64| if half > 0.0 { (v - mid) / half } else { 0.0 };
    let sn: Vec<f64> = s.iter().map(|&v| norm(v)).collect();
    let u: Vec<f64> = points.iter().map(|p| (p - mean).dot(&axes[1])).collect();
    let w: Vec<f64> = points.iter().map(|p| (p - mean).dot(&axes[2])).collect();
    let cu = fit_cubic(&sn, &u);
    let cw = fit_cubic(&sn, &w);

    let samples = if half > 0.0 { CURVE_SAMPLES } else { 1 };
    let mut curve = Vec::with_capacity(samples);
    for k in 0..samples {
        let sv = if samples == 1 { mid } else { smin + (smax - smin) * k as f64 / (samples - 1) as f64 };
        let snv = norm(sv);
        curve.push(mean + axes[0] * sv + axes[1] * eval_cubic(&cu, snv) + axes[2] * eval_cubic(&cw, snv));
    }
    let mut arc = vec![0.0; curve.len()];
    for k in 1..curve.len() {
        arc[k] = arc[k - 1] + (curve[k] - curve[k - 1]).norm();
    }
    let line = Centerline { points: curve, arc };
    let proj = points.iter().map(|&p| line.project(p)).collect();
    (line, proj)
}

/// Fit the centerline of a mask; also returns each foreground voxel's arc
/// coordinate (in `mask.indices()` order).
pub fn fit_centerline(mask: &BinaryMask) -> Result<(Centerline, Vec<f64>), PhantomError> {
    let c = cloud(mask);
    if c.points.is_empty() {
        return Err(PhantomError::EmptyPancreas);
    }
    Ok(fit_cloud(&c.points))
}

/// Label every foreground voxel as head, body or tail by arc-length thirds.
/// The head is the end third holding more voxels; on a tie it is the end in
/// the positive direction of the principal axis.
pub fn partition_segments(pancreas: &BinaryMask) -> Result<LabelVolume, PhantomError> {
    let (line, arcs) = fit_centerline(pancreas)?;
    let total = line.length();
    let thirds: Vec<usize> = arcs
        .iter()
        .map(|&a| if total > 0.0 { ((3.0 * a / total).floor() as usize).min(2) } else { 1 })
        .collect();
    let n_low = thirds.iter().filter(|&&t| t == 0).count();
    let n_high = thirds.iter().filter(|&&t| t == 2).count();
    let head_at_low = n_low > n_high;

    let mut out = LabelVolume::background(*pancreas.geometry());
    for (&i, &t) in pancreas.indices().iter().zip(&thirds) {
        let label = match (t, head_at_low) {
            (1, _) => AnatomyLabel::PancreasBody,
            (0, true) | (2, false) => AnatomyLabel::PancreasHead,
            _ => AnatomyLabel::PancreasTail,
        };
        out.set(i, label);
    }
    Ok(out)
}
