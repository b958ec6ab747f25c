//! Training objectives: parameter, limb, vertex, KL and 2D keypoint losses
//! and their weighted compositions for the two training stages.
//!
//! Tensor functions take batches and return the mean over clips of the
//! per-clip loss, so a batch of one gives the per-clip value exactly.

use candle_core::{DType, Device, Tensor, D};
use serde::{Deserialize, Serialize};

use crate::batch::MotionBatch;
use crate::body::tensor::{project_weak_perspective, BodyTensors};
use crate::body::{CameraParams, MotionClip};
use crate::error::{Result, VmpError};
use crate::prior::{GaussianParams, GaussianTensors};

/// Confidence strictly above this enables a keypoint in the 2D loss.
pub const CONFIDENCE_THRESHOLD: f64 = 0.5;

// sqrt(s + eps) - sqrt(eps): exact zero at s = 0 with a finite gradient.
const NORM_EPS: f64 = 1e-30;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub lambda_kl: f64,
    pub lambda_lb: f64,
    #[serde(rename = "lambda_V")]
    pub lambda_v: f64,
    pub lambda_2d: f64,
    pub lambda_theta: f64,
    pub w_r: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_kl: 1e-5,
            lambda_lb: 100.0,
            lambda_v: 1.0,
            lambda_2d: 100.0,
            lambda_theta: 1.0,
            w_r: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.lambda_kl,
            self.lambda_lb,
            self.lambda_v,
            self.lambda_2d,
            self.lambda_theta,
            self.w_r,
        ];
        if all.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(VmpError::Invalid("loss weights must be finite and non-negative".into()));
        }
        Ok(())
    }
}

/// Per-frame 2D keypoints `T x N_J` with detection confidences.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Keypoints2D {
    pub points: Vec<Vec<[f64; 2]>>,
    pub confidence: Vec<Vec<f64>>,
}

impl Keypoints2D {
    pub fn validate(&self) -> Result<()> {
        if self.points.len() != self.confidence.len() {
            return Err(VmpError::Shape("keypoint and confidence frame counts differ".into()));
        }
        for (p, c) in self.points.iter().zip(&self.confidence) {
            if p.len() != c.len() {
                return Err(VmpError::Shape("keypoint and confidence joint counts differ".into()));
            }
            if c.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(VmpError::Invalid("confidences must lie in [0, 1]".into()));
            }
            if p.iter().flatten().any(|v| !v.is_finite()) {
                return Err(VmpError::Invalid("keypoints must be finite".into()));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn num_joints(&self) -> usize {
        self.points.first().map_or(0, |p| p.len())
    }
}

/// Keypoints for a batch: points `(B,T,J,2)`, confidence `(B,T,J)`.
#[derive(Debug, Clone)]
pub struct KeypointTensors {
    pub points: Tensor,
    pub confidence: Tensor,
}

impl KeypointTensors {
    pub fn from_keypoints(kps: &[&Keypoints2D], device: &Device, dtype: DType) -> Result<Self> {
        let b = kps.len();
        let t = kps.first().map_or(0, |k| k.len());
        let j = kps.first().map_or(0, |k| k.num_joints());
        for k in kps {
            k.validate()?;
            if k.len() != t || k.num_joints() != j {
                return Err(VmpError::Shape("keypoint sets in a batch must share T and N_J".into()));
            }
        }
        let pts: Vec<f64> = kps
            .iter()
            .flat_map(|k| k.points.iter().flatten().flatten().copied())
            .collect();
        let conf: Vec<f64> = kps
            .iter()
            .flat_map(|k| k.confidence.iter().flatten().copied())
            .collect();
        Ok(KeypointTensors {
            points: Tensor::from_vec(pts, (b, t, j, 2), device)?.to_dtype(dtype)?,
            confidence: Tensor::from_vec(conf, (b, t, j), device)?.to_dtype(dtype)?,
        })
    }
}

/// Camera per clip: scale `(B)`, center `(B,2)`.
#[derive(Debug, Clone)]
pub struct CameraTensors {
    pub scale: Tensor,
    pub center: Tensor,
}

impl CameraTensors {
    pub fn from_cameras(cams: &[CameraParams], device: &Device, dtype: DType) -> Result<Self> {
        let s: Vec<f64> = cams.iter().map(|c| c.s).collect();
        let c: Vec<f64> = cams.iter().flat_map(|c| c.c).collect();
        Ok(CameraTensors {
            scale: Tensor::from_vec(s, cams.len(), device)?.to_dtype(dtype)?,
            center: Tensor::from_vec(c, (cams.len(), 2), device)?.to_dtype(dtype)?,
        })
    }
}

/// L2 norm over the last axis, exactly zero for a zero vector.
pub fn safe_norm(x: &Tensor) -> Result<Tensor> {
    let s = x.sqr()?.sum(D::Minus1)?;
    Ok(((s + NORM_EPS)?.sqrt()? - NORM_EPS.sqrt())?)
}

fn check_pair(gt: &MotionBatch, pred: &MotionBatch) -> Result<()> {
    if gt.root.dims() != pred.root.dims() || gt.pose.dims() != pred.pose.dims() {
        return Err(VmpError::Shape(format!(
            "motion batches differ: {:?} vs {:?}",
            gt.pose.dims(),
            pred.pose.dims()
        )));
    }
    Ok(())
}

/// Parameter loss with global translation, per clip:
/// `w_r * sum_t |r - r^| + lambda_theta * sum_t |theta - theta^| + |beta - beta^|`.
/// The root term is further masked by each clip's `root_mask`.
pub fn loss_3d(gt: &MotionBatch, pred: &MotionBatch, w: &LossWeights) -> Result<Tensor> {
    check_pair(gt, pred)?;
    let (b, t) = (gt.batch_size()?, gt.clip_len()?);
    let root = safe_norm(&(&gt.root - &pred.root)?)?.sum(1)?;
    let root = (root * &gt.root_mask)?.affine(w.w_r, 0.0)?;
    let pose_diff = (&gt.pose - &pred.pose)?.reshape((b, t, ()))?;
    let pose = (safe_norm(&pose_diff)?.sum(1)? * w.lambda_theta)?;
    let shape = safe_norm(&(&gt.shape - &pred.shape)?)?;
    Ok(((root + pose)? + shape)?.mean(0)?)
}

/// Limb loss: `sum_t |J_lb(theta, beta) - J_lb(theta^, beta^)|`, root excluded.
pub fn loss_limb(gt: &MotionBatch, pred: &MotionBatch, body: &BodyTensors) -> Result<Tensor> {
    check_pair(gt, pred)?;
    let (b, t) = (gt.batch_size()?, gt.clip_len()?);
    let limbs = |m: &MotionBatch| -> Result<Tensor> {
        let (root, pose, shape) = m.frames()?;
        body.limb_joints(&root.zeros_like()?, &pose, &shape)
    };
    let diff = (limbs(gt)? - limbs(pred)?)?.reshape((b, t, ()))?;
    Ok(safe_norm(&diff)?.sum(1)?.mean(0)?)
}

/// Vertex reconstruction loss: `sum_t |V_t - M(p^_t)|^2` with roots as given.
pub fn loss_recon(gt: &MotionBatch, pred: &MotionBatch, body: &BodyTensors) -> Result<Tensor> {
    check_pair(gt, pred)?;
    let b = gt.batch_size()?;
    let verts = |m: &MotionBatch| -> Result<Tensor> {
        let (root, pose, shape) = m.frames()?;
        body.vertices(&root, &pose, &shape)
    };
    let diff = (verts(gt)? - verts(pred)?)?;
    Ok(diff.sqr()?.reshape((b, ()))?.sum(1)?.mean(0)?)
}

/// Closed-form diagonal Gaussian KL to the standard normal.
pub fn loss_kl(g: &GaussianTensors) -> Result<Tensor> {
    let terms = ((g.mu.sqr()? + g.log_var.exp()?)? - g.log_var.affine(1.0, 1.0)?)?;
    Ok((terms.sum(1)? * 0.5)?.mean(0)?)
}

/// Keypoint reprojection loss over joints whose confidence exceeds 0.5;
/// joints are posed with the root at the origin.
pub fn loss_2d(
    kp: &KeypointTensors,
    pred: &MotionBatch,
    cam: &CameraTensors,
    body: &BodyTensors,
) -> Result<Tensor> {
    let (b, t) = (pred.batch_size()?, pred.clip_len()?);
    let (root, pose, shape) = pred.frames()?;
    let joints = body.joints(&root.zeros_like()?, &pose, &shape)?;
    let nj = joints.dim(1)?;
    if kp.points.dims() != [b, t, nj, 2] {
        return Err(VmpError::Shape(format!(
            "keypoints {:?} do not match prediction ({b}, {t}, {nj}, 2)",
            kp.points.dims()
        )));
    }
    let frame_scale = cam.scale.unsqueeze(1)?.broadcast_as((b, t))?.contiguous()?.reshape(b * t)?;
    let frame_center = cam
        .center
        .unsqueeze(1)?
        .broadcast_as((b, t, 2))?
        .contiguous()?
        .reshape((b * t, 2))?;
    let projected = project_weak_perspective(&joints, &frame_scale, &frame_center)?.reshape((b, t, nj, 2))?;
    let dist = safe_norm(&(projected - &kp.points)?)?;
    let mask = kp.confidence.gt(CONFIDENCE_THRESHOLD)?.to_dtype(dist.dtype())?;
    Ok((dist * mask)?.reshape((b, ()))?.sum(1)?.mean(0)?)
}

/// Unweighted loss terms with their weighted total.
#[derive(Debug, Clone)]
pub struct LossTerms {
    pub l3d: Tensor,
    pub llb: Tensor,
    pub lv: Tensor,
    pub lkl: Tensor,
    pub l2d: Tensor,
    pub total: Tensor,
}

/// Scalar snapshot of [`LossTerms`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossValues {
    pub total: f64,
    pub l3d: f64,
    pub llb: f64,
    pub lv: f64,
    pub lkl: f64,
    pub l2d: f64,
}

impl LossTerms {
    pub fn values(&self) -> Result<LossValues> {
        let f = |t: &Tensor| -> Result<f64> { Ok(t.to_dtype(DType::F64)?.to_scalar::<f64>()?) };
        Ok(LossValues {
            total: f(&self.total)?,
            l3d: f(&self.l3d)?,
            llb: f(&self.llb)?,
            lv: f(&self.lv)?,
            lkl: f(&self.lkl)?,
            l2d: f(&self.l2d)?,
        })
    }
}

impl LossValues {
    /// Weighted sum of the individual terms.
    pub fn recombine(&self, w: &LossWeights) -> f64 {
        self.l3d + w.lambda_lb * self.llb + w.lambda_v * self.lv + w.lambda_kl * self.lkl + w.lambda_2d * self.l2d
    }

    pub fn is_finite(&self) -> bool {
        [self.total, self.l3d, self.llb, self.lv, self.lkl, self.l2d]
            .iter()
            .all(|v| v.is_finite())
    }
}

/// Motion prior objective `L_3D + lambda_lb L_lb + lambda_V L_V + lambda_kl L_kl`.
///
/// For clips without root translation (or `w_r = 0`) the vertex term is
/// evaluated with both roots zeroed, so unknown translation is never
/// supervised.
pub fn loss_vmp(
    gt: &MotionBatch,
    pred: &MotionBatch,
    g: &GaussianTensors,
    body: &BodyTensors,
    w: &LossWeights,
) -> Result<LossTerms> {
    let terms = vmp_terms(Some(gt), pred, g, body, w)?;
    let zero = terms.lkl.zeros_like()?;
    let total = weighted(&terms.l3d, &terms.llb, &terms.lv, &terms.lkl, &zero, w)?;
    Ok(LossTerms {
        l2d: zero,
        total,
        ..terms
    })
}

/// Stage-II objective `L_vmp + lambda_2D L_2D`. When `gt` is `None` the
/// 3D terms are dropped (2D-only supervision).
pub fn loss_cap(
    gt: Option<&MotionBatch>,
    pred: &MotionBatch,
    g: &GaussianTensors,
    kp: &KeypointTensors,
    cam: &CameraTensors,
    body: &BodyTensors,
    w: &LossWeights,
) -> Result<LossTerms> {
    let terms = vmp_terms(gt, pred, g, body, w)?;
    let l2d = loss_2d(kp, pred, cam, body)?;
    let total = weighted(&terms.l3d, &terms.llb, &terms.lv, &terms.lkl, &l2d, w)?;
    Ok(LossTerms { l2d, total, ..terms })
}

fn vmp_terms(
    gt: Option<&MotionBatch>,
    pred: &MotionBatch,
    g: &GaussianTensors,
    body: &BodyTensors,
    w: &LossWeights,
) -> Result<LossTerms> {
    let lkl = loss_kl(g)?;
    let zero = lkl.zeros_like()?;
    let (l3d, llb, lv) = match gt {
        Some(gt) => {
            let root_w = gt.root_mask.affine(w.w_r, 0.0)?.unsqueeze(1)?.unsqueeze(2)?;
            let gt_v = MotionBatch {
                root: gt.root.broadcast_mul(&root_w)?,
                ..gt.clone()
            };
            let pred_v = MotionBatch {
                root: pred.root.broadcast_mul(&root_w)?,
                ..pred.clone()
            };
            (
                loss_3d(gt, pred, w)?,
                loss_limb(gt, pred, body)?,
                loss_recon(&gt_v, &pred_v, body)?,
            )
        }
        None => (zero.clone(), zero.clone(), zero.clone()),
    };
    Ok(LossTerms {
        l3d,
        llb,
        lv,
        lkl,
        l2d: zero.clone(),
        total: zero,
    })
}

fn weighted(l3d: &Tensor, llb: &Tensor, lv: &Tensor, lkl: &Tensor, l2d: &Tensor, w: &LossWeights) -> Result<Tensor> {
    let sum = (l3d + (llb * w.lambda_lb)?)?;
    let sum = (sum + (lv * w.lambda_v)?)?;
    let sum = (sum + (lkl * w.lambda_kl)?)?;
    Ok((sum + (l2d * w.lambda_2d)?)?)
}

// Per-clip conveniences over plain values.

fn pair(gt: &MotionClip, pred: &MotionClip) -> Result<(MotionBatch, MotionBatch)> {
    if gt.len() != pred.len() {
        return Err(VmpError::Shape(format!("clip lengths differ: {} vs {}", gt.len(), pred.len())));
    }
    let d = Device::Cpu;
    Ok((
        MotionBatch::from_clips(std::slice::from_ref(gt), &d, DType::F64)?,
        MotionBatch::from_clips(std::slice::from_ref(pred), &d, DType::F64)?,
    ))
}

fn scalar(t: Tensor) -> Result<f64> {
    Ok(t.to_dtype(DType::F64)?.to_scalar::<f64>()?)
}

pub fn clip_loss_3d(gt: &MotionClip, pred: &MotionClip, w: &LossWeights) -> Result<f64> {
    let (a, b) = pair(gt, pred)?;
    scalar(loss_3d(&a, &b, w)?)
}

pub fn clip_loss_limb(gt: &MotionClip, pred: &MotionClip, body: &BodyTensors) -> Result<f64> {
    let (a, b) = pair(gt, pred)?;
    scalar(loss_limb(&a, &b, body)?)
}

pub fn clip_loss_recon(gt: &MotionClip, pred: &MotionClip, body: &BodyTensors) -> Result<f64> {
    let (a, b) = pair(gt, pred)?;
    scalar(loss_recon(&a, &b, body)?)
}

pub fn clip_loss_kl(g: &GaussianParams) -> Result<f64> {
    scalar(loss_kl(&GaussianTensors::from_params(std::slice::from_ref(g), &Device::Cpu, DType::F64)?)?)
}

pub fn clip_loss_2d(kp: &Keypoints2D, pred: &MotionClip, cam: &CameraParams, body: &BodyTensors) -> Result<f64> {
    let d = Device::Cpu;
    let kpt = KeypointTensors::from_keypoints(&[kp], &d, DType::F64)?;
    let camt = CameraTensors::from_cameras(std::slice::from_ref(cam), &d, DType::F64)?;
    let p = MotionBatch::from_clips(std::slice::from_ref(pred), &d, DType::F64)?;
    scalar(loss_2d(&kpt, &p, &camt, body)?)
}

pub fn clip_loss_vmp(
    gt: &MotionClip,
    pred: &MotionClip,
    g: &GaussianParams,
    body: &BodyTensors,
    w: &LossWeights,
) -> Result<LossValues> {
    let (a, b) = pair(gt, pred)?;
    let gt_g = GaussianTensors::from_params(std::slice::from_ref(g), &Device::Cpu, DType::F64)?;
    loss_vmp(&a, &b, &gt_g, body, w)?.values()
}

#[allow(clippy::too_many_arguments)]
pub fn clip_loss_cap(
    gt: Option<&MotionClip>,
    pred: &MotionClip,
    g: &GaussianParams,
    kp: &Keypoints2D,
    cam: &CameraParams,
    body: &BodyTensors,
    w: &LossWeights,
) -> Result<LossValues> {
    let d = Device::Cpu;
    let p = MotionBatch::from_clips(std::slice::from_ref(pred), &d, DType::F64)?;
    let gt_b = gt
        .map(|c| {
            if c.len() != pred.len() {
                return Err(VmpError::Shape("clip lengths differ".into()));
            }
            MotionBatch::from_clips(std::slice::from_ref(c), &d, DType::F64)
        })
        .transpose()?;
    let gt_g = GaussianTensors::from_params(std::slice::from_ref(g), &d, DType::F64)?;
    let kpt = KeypointTensors::from_keypoints(&[kp], &d, DType::F64)?;
    let camt = CameraTensors::from_cameras(std::slice::from_ref(cam), &d, DType::F64)?;
    loss_cap(gt_b.as_ref(), &p, &gt_g, &kpt, &camt, body, w)?.values()
}
