//! Pose-accuracy and diversity metrics on joint (or vertex) trajectories.
//!
//! Conventions:
//! - MPJPE is root-relative: each frame is translated so joint 0 sits at the
//!   origin, and the mean runs over the non-root joints.
//! - PA-MPJPE aligns every frame with its optimal similarity transform and
//!   averages over all joints.
//! - APD is the mean pairwise per-joint L2 distance; clip-APD treats the
//!   whole clip as one vector and divides by `sqrt(T * K)` so that a uniform
//!   offset gives the same value under both.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::body::Vec3;
use crate::error::{Result, VmpError};

/// `T x K x 3` point trajectories (joints or vertices).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointTrack {
    pub positions: Vec<Vec<Vec3>>,
}

impl JointTrack {
    pub fn new(positions: Vec<Vec<Vec3>>) -> Result<Self> {
        let t = JointTrack { positions };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.num_points();
        if self.positions.iter().any(|f| f.len() != k) {
            return Err(VmpError::Shape("frames have differing point counts".into()));
        }
        if self.positions.iter().flatten().flatten().any(|v| !v.is_finite()) {
            return Err(VmpError::Invalid("track has non-finite positions".into()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn num_points(&self) -> usize {
        self.positions.first().map_or(0, |f| f.len())
    }

    /// Every frame translated so that point 0 is at the origin.
    pub fn root_relative(&self) -> JointTrack {
        JointTrack {
            positions: self
                .positions
                .iter()
                .map(|f| {
                    let r = f[0];
                    f.iter().map(|p| [p[0] - r[0], p[1] - r[1], p[2] - r[2]]).collect()
                })
                .collect(),
        }
    }
}

fn dist(a: &Vec3, b: &Vec3) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

fn check_same(a: &JointTrack, b: &JointTrack) -> Result<()> {
    if a.len() != b.len() || a.num_points() != b.num_points() {
        return Err(VmpError::Shape(format!(
            "tracks differ in shape: {}x{} vs {}x{}",
            a.len(),
            a.num_points(),
            b.len(),
            b.num_points()
        )));
    }
    if a.is_empty() || a.num_points() == 0 {
        return Err(VmpError::Shape("empty track".into()));
    }
    Ok(())
}

fn mean_point_error(pred: &JointTrack, gt: &JointTrack, skip: usize) -> f64 {
    let mut sum = 0.0;
    let mut n = 0usize;
    for (fp, fg) in pred.positions.iter().zip(&gt.positions) {
        for (p, g) in fp.iter().zip(fg).skip(skip) {
            sum += dist(p, g);
            n += 1;
        }
    }
    sum / n as f64
}

/// Root-relative mean per-joint position error over non-root joints.
pub fn mpjpe(pred: &JointTrack, gt: &JointTrack) -> Result<f64> {
    check_same(pred, gt)?;
    if pred.num_points() < 2 {
        return Err(VmpError::Shape("mpjpe needs a root and at least one other joint".into()));
    }
    Ok(mean_point_error(&pred.root_relative(), &gt.root_relative(), 1))
}

/// Mean per-vertex error on tracks as given (align them first if needed).
pub fn mpvpe(pred: &JointTrack, gt: &JointTrack) -> Result<f64> {
    check_same(pred, gt)?;
    Ok(mean_point_error(pred, gt, 0))
}

/// MPVPE after subtracting each track's own per-frame root joint.
pub fn mpvpe_root_aligned(
    pred_verts: &JointTrack,
    gt_verts: &JointTrack,
    pred_root: &[Vec3],
    gt_root: &[Vec3],
) -> Result<f64> {
    check_same(pred_verts, gt_verts)?;
    if pred_root.len() != pred_verts.len() || gt_root.len() != gt_verts.len() {
        return Err(VmpError::Shape("root track length mismatch".into()));
    }
    let shift = |t: &JointTrack, r: &[Vec3]| JointTrack {
        positions: t
            .positions
            .iter()
            .zip(r)
            .map(|(f, r)| f.iter().map(|p| [p[0] - r[0], p[1] - r[1], p[2] - r[2]]).collect())
            .collect(),
    };
    mpvpe(&shift(pred_verts, pred_root), &shift(gt_verts, gt_root))
}

/// Similarity transform `y ~ s R x + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Similarity {
    pub rotation: Matrix3<f64>,
    pub scale: f64,
    pub translation: Vector3<f64>,
}

impl Similarity {
    pub fn apply(&self, p: &Vec3) -> Vec3 {
        let v = self.rotation * Vector3::from(*p) * self.scale + self.translation;
        [v.x, v.y, v.z]
    }
}

/// Closed-form least-squares similarity from `x` onto `y` (cross-covariance
/// SVD with a reflection guard).
pub fn procrustes_align(x: &[Vec3], y: &[Vec3]) -> Result<Similarity> {
    if x.len() != y.len() {
        return Err(VmpError::Shape("procrustes point sets differ in size".into()));
    }
    let k = x.len();
    if k < 3 {
        return Err(VmpError::Degenerate(format!("procrustes needs at least 3 points, got {k}")));
    }
    let mx = x.iter().fold(Vector3::zeros(), |a, p| a + Vector3::from(*p)) / k as f64;
    let my = y.iter().fold(Vector3::zeros(), |a, p| a + Vector3::from(*p)) / k as f64;
    let mut cov = Matrix3::zeros();
    let mut x_scatter = Matrix3::zeros();
    let mut var_x = 0.0;
    for (p, q) in x.iter().zip(y) {
        let xc = Vector3::from(*p) - mx;
        let yc = Vector3::from(*q) - my;
        cov += yc * xc.transpose();
        x_scatter += xc * xc.transpose();
        var_x += xc.norm_squared();
    }
    let sx = x_scatter.symmetric_eigenvalues();
    let mut ev: Vec<f64> = sx.iter().copied().collect();
    ev.sort_by(|a, b| b.total_cmp(a));
    if !(var_x > 1e-300) || ev[1] <= 1e-12 * ev[0] {
        return Err(VmpError::Degenerate(
            "source points are collinear or coincident".into(),
        ));
    }
    let svd = cov.svd(true, true);
    let (u, v_t) = (svd.u.expect("u"), svd.v_t.expect("v_t"));
    let mut d = Matrix3::identity();
    if (u * v_t).determinant() < 0.0 {
        d[(2, 2)] = -1.0;
    }
    let rotation = u * d * v_t;
    let scale = (svd.singular_values.component_mul(&d.diagonal())).sum() / var_x;
    let translation = my - rotation * mx * scale;
    Ok(Similarity {
        rotation,
        scale,
        translation,
    })
}

/// Per-frame Procrustes-aligned mean per-joint error.
pub fn pa_mpjpe(pred: &JointTrack, gt: &JointTrack) -> Result<f64> {
    check_same(pred, gt)?;
    let mut sum = 0.0;
    let mut n = 0usize;
    for (fp, fg) in pred.positions.iter().zip(&gt.positions) {
        if fp == fg {
            n += fp.len();
            continue;
        }
        let sim = procrustes_align(fp, fg)?;
        for (p, g) in fp.iter().zip(fg) {
            sum += dist(&sim.apply(p), g);
            n += 1;
        }
    }
    Ok(sum / n as f64)
}

/// Acceleration error in distance/s^2 over interior frames.
pub fn accel_error(pred: &JointTrack, gt: &JointTrack, fps: f64) -> Result<f64> {
    check_same(pred, gt)?;
    let t = pred.len();
    if t < 3 {
        return Err(VmpError::Shape(format!("acceleration needs at least 3 frames, got {t}")));
    }
    let k = pred.num_points();
    let mut sum = 0.0;
    for i in 1..t - 1 {
        for j in 0..k {
            let mut d = [0.0; 3];
            for (c, dc) in d.iter_mut().enumerate() {
                let ap = pred.positions[i + 1][j][c] - 2.0 * pred.positions[i][j][c] + pred.positions[i - 1][j][c];
                let ag = gt.positions[i + 1][j][c] - 2.0 * gt.positions[i][j][c] + gt.positions[i - 1][j][c];
                *dc = ap - ag;
            }
            sum += (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
        }
    }
    Ok(sum / ((t - 2) * k) as f64 * fps * fps)
}

fn check_samples(samples: &[JointTrack]) -> Result<()> {
    if samples.len() < 2 {
        return Err(VmpError::Invalid(format!(
            "diversity metrics need at least 2 samples, got {}",
            samples.len()
        )));
    }
    for s in &samples[1..] {
        check_same(&samples[0], s)?;
    }
    Ok(())
}

fn mean_over_pairs(samples: &[JointTrack], f: impl Fn(&JointTrack, &JointTrack) -> f64) -> f64 {
    let n = samples.len();
    let mut sum = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            sum += f(&samples[i], &samples[j]);
        }
    }
    sum / (n * (n - 1) / 2) as f64
}

/// Frame-level average pairwise distance.
pub fn apd(samples: &[JointTrack]) -> Result<f64> {
    check_samples(samples)?;
    Ok(mean_over_pairs(samples, |a, b| mean_point_error(a, b, 0)))
}

/// Clip-level average pairwise distance.
pub fn clip_apd(samples: &[JointTrack]) -> Result<f64> {
    check_samples(samples)?;
    let norm = ((samples[0].len() * samples[0].num_points()) as f64).sqrt();
    Ok(mean_over_pairs(samples, |a, b| {
        let sq: f64 = a
            .positions
            .iter()
            .flatten()
            .zip(b.positions.iter().flatten())
            .map(|(p, q)| dist(p, q).powi(2))
            .sum();
        sq.sqrt() / norm
    }))
}

/// APD after moving every clip's per-frame root to the origin.
pub fn local_apd(samples: &[JointTrack]) -> Result<f64> {
    check_samples(samples)?;
    let aligned: Vec<JointTrack> = samples.iter().map(JointTrack::root_relative).collect();
    apd(&aligned)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseReport {
    pub mpjpe: f64,
    pub pa_mpjpe: f64,
    pub mpvpe: f64,
    pub accel: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiversityReport {
    pub apd: f64,
    pub clip_apd: f64,
    pub local_apd_s1: f64,
    pub local_apd_s5: f64,
}
