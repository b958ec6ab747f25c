//! Simplified articulated body with the SMPL parameter layout.
//!
//! Joint order and kinematic tree follow the 24-joint SMPL skeleton. The
//! template is procedural: rest offsets come from a fixed table, while ring
//! radii and the shape basis are drawn from a fixed seed.

mod spec_io;
pub mod tensor;

use nalgebra::{DMatrix, Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Result, VmpError};
use crate::rotation::{rot6d_to_matrix, Rot6, IDENTITY_6D};

pub use spec_io::{read_body_spec, write_body_spec, BODY_SPEC_VERSION};
pub use tensor::BodyTensors;

pub const NUM_JOINTS: usize = 24;
pub const NUM_BETAS: usize = 10;
pub const VERTS_PER_SEGMENT: usize = 18;
pub const NUM_VERTS: usize = NUM_JOINTS * VERTS_PER_SEGMENT;
/// Per-frame flattened parameter width: root (3) + pose (24 * 6) + shape (10).
pub const PARAM_DIM: usize = 3 + NUM_JOINTS * 6 + NUM_BETAS;

pub const TEMPLATE_SEED: u64 = 0x5eed_b0d1;
pub const SHAPE_SCALE: f64 = 0.03;

pub const JOINT_NAMES: [&str; NUM_JOINTS] = [
    "pelvis", "l_hip", "r_hip", "spine1", "l_knee", "r_knee", "spine2", "l_ankle", "r_ankle",
    "spine3", "l_foot", "r_foot", "neck", "l_collar", "r_collar", "head", "l_shoulder",
    "r_shoulder", "l_elbow", "r_elbow", "l_wrist", "r_wrist", "l_hand", "r_hand",
];

pub const SMPL_PARENTS: [Option<usize>; NUM_JOINTS] = [
    None,
    Some(0),
    Some(0),
    Some(0),
    Some(1),
    Some(2),
    Some(3),
    Some(4),
    Some(5),
    Some(6),
    Some(7),
    Some(8),
    Some(9),
    Some(9),
    Some(9),
    Some(12),
    Some(13),
    Some(14),
    Some(16),
    Some(17),
    Some(18),
    Some(19),
    Some(20),
    Some(21),
];

/// L-wrist, R-wrist, L-ankle, R-ankle.
pub const LIMB_INDICES: [usize; 4] = [20, 21, 7, 8];

// y up, +x is the body's left, +z forward; roughly 1.7 units tall.
const REST_OFFSETS: [[f64; 3]; NUM_JOINTS] = [
    [0.0, 0.0, 0.0],
    [0.07, -0.09, 0.0],
    [-0.07, -0.09, 0.0],
    [0.0, 0.11, -0.02],
    [0.04, -0.38, 0.0],
    [-0.04, -0.38, 0.0],
    [0.0, 0.13, 0.01],
    [-0.01, -0.40, -0.04],
    [0.01, -0.40, -0.04],
    [0.0, 0.05, 0.02],
    [0.04, -0.06, 0.12],
    [-0.04, -0.06, 0.12],
    [0.0, 0.21, -0.03],
    [0.08, 0.12, -0.01],
    [-0.08, 0.12, -0.01],
    [0.0, 0.09, 0.05],
    [0.12, 0.04, -0.02],
    [-0.12, 0.04, -0.02],
    [0.26, -0.01, -0.02],
    [-0.26, -0.01, -0.02],
    [0.25, 0.01, 0.0],
    [-0.25, 0.01, 0.0],
    [0.08, -0.01, -0.01],
    [-0.08, -0.01, -0.01],
];

pub type Vec3 = [f64; 3];

/// One frame of motion parameters: root translation, 24 joint rotations in
/// 6D form, and shape coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionFrame {
    pub root_trans: Vec3,
    pub pose: [Rot6; NUM_JOINTS],
    pub shape: [f64; NUM_BETAS],
}

impl MotionFrame {
    pub fn rest() -> Self {
        MotionFrame {
            root_trans: [0.0; 3],
            pose: [IDENTITY_6D; NUM_JOINTS],
            shape: [0.0; NUM_BETAS],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = self.root_trans.iter().all(|v| v.is_finite())
            && self.shape.iter().all(|v| v.is_finite())
            && self.pose.iter().flatten().all(|v| v.is_finite());
        if !finite {
            return Err(VmpError::Invalid("motion frame has non-finite values".into()));
        }
        Ok(())
    }
}

/// A motion clip with one shape vector shared by all frames.
///
/// `has_root` marks clips that carry real global translation; rootless
/// clips have their translation loss term masked during training.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionClip {
    pub root_trans: Vec<Vec3>,
    pub pose: Vec<[Rot6; NUM_JOINTS]>,
    pub shape: [f64; NUM_BETAS],
    pub fps: f64,
    pub has_root: bool,
}

impl MotionClip {
    pub fn new(
        root_trans: Vec<Vec3>,
        pose: Vec<[Rot6; NUM_JOINTS]>,
        shape: [f64; NUM_BETAS],
        fps: f64,
        has_root: bool,
    ) -> Result<Self> {
        let clip = MotionClip {
            root_trans,
            pose,
            shape,
            fps,
            has_root,
        };
        clip.validate()?;
        Ok(clip)
    }

    pub fn validate(&self) -> Result<()> {
        if self.pose.len() != self.root_trans.len() {
            return Err(VmpError::Shape(format!(
                "{} pose frames but {} root frames",
                self.pose.len(),
                self.root_trans.len()
            )));
        }
        if self.len() < 2 {
            return Err(VmpError::Invalid(format!(
                "motion clip needs at least 2 frames, got {}",
                self.len()
            )));
        }
        if !(self.fps > 0.0 && self.fps.is_finite()) {
            return Err(VmpError::Invalid(format!("fps must be positive, got {}", self.fps)));
        }
        let finite = self.root_trans.iter().flatten().all(|v| v.is_finite())
            && self.pose.iter().flatten().flatten().all(|v| v.is_finite())
            && self.shape.iter().all(|v| v.is_finite());
        if !finite {
            return Err(VmpError::Invalid("motion clip has non-finite values".into()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.pose.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pose.is_empty()
    }

    pub fn frame(&self, t: usize) -> MotionFrame {
        MotionFrame {
            root_trans: self.root_trans[t],
            pose: self.pose[t],
            shape: self.shape,
        }
    }

    pub fn frames(&self) -> impl Iterator<Item = MotionFrame> + '_ {
        (0..self.len()).map(|t| self.frame(t))
    }

    /// Flattens to `T x PARAM_DIM` rows of `[root, pose, shape]`.
    pub fn to_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.len() * PARAM_DIM);
        for t in 0..self.len() {
            out.extend_from_slice(&self.root_trans[t]);
            for r in &self.pose[t] {
                out.extend_from_slice(r);
            }
            out.extend_from_slice(&self.shape);
        }
        out
    }

    /// Inverse of [`MotionClip::to_params`]. Per-frame shape rows are averaged.
    pub fn from_params(params: &[f64], fps: f64, has_root: bool) -> Result<Self> {
        if params.len() % PARAM_DIM != 0 {
            return Err(VmpError::Shape(format!(
                "parameter buffer of length {} is not a multiple of {PARAM_DIM}",
                params.len()
            )));
        }
        let t_len = params.len() / PARAM_DIM;
        let mut root_trans = Vec::with_capacity(t_len);
        let mut pose = Vec::with_capacity(t_len);
        let mut shape = [0.0; NUM_BETAS];
        for row in params.chunks_exact(PARAM_DIM) {
            root_trans.push([row[0], row[1], row[2]]);
            let mut p = [[0.0; 6]; NUM_JOINTS];
            for (j, r) in p.iter_mut().enumerate() {
                r.copy_from_slice(&row[3 + 6 * j..9 + 6 * j]);
            }
            pose.push(p);
            for (s, v) in shape.iter_mut().zip(&row[3 + 6 * NUM_JOINTS..]) {
                *s += v;
            }
        }
        for s in shape.iter_mut() {
            *s /= t_len.max(1) as f64;
        }
        MotionClip::new(root_trans, pose, shape, fps, has_root)
    }

    /// Copy with every root translation set to zero.
    pub fn without_root(&self) -> MotionClip {
        let mut c = self.clone();
        c.root_trans.iter_mut().for_each(|r| *r = [0.0; 3]);
        c
    }
}

/// Weak-perspective camera: `uv = s * (x, y) + c`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct CameraParams {
    pub s: f64,
    pub c: [f64; 2],
}

impl CameraParams {
    pub fn new(s: f64, c: [f64; 2]) -> Result<Self> {
        let cam = CameraParams { s, c };
        cam.validate()?;
        Ok(cam)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.s > 0.0 && self.s.is_finite()) {
            return Err(VmpError::Invalid(format!("camera scale must be > 0, got {}", self.s)));
        }
        if !self.c.iter().all(|v| v.is_finite()) {
            return Err(VmpError::Invalid("camera center must be finite".into()));
        }
        Ok(())
    }
}

/// Kinematic tree, rest skeleton, shape basis and skinning data.
#[derive(Debug, Clone, PartialEq)]
pub struct BodySpec {
    pub parent: Vec<Option<usize>>,
    pub rest_offsets: Vec<Vec3>,
    /// `shape_basis[j][k][b]`: offset of joint `j` along axis `k` per unit of beta `b`.
    pub shape_basis: Vec<[[f64; NUM_BETAS]; 3]>,
    pub vertex_template: Vec<Vec3>,
    /// Dense `N_V x 24` skinning weights.
    pub skin_weights: Vec<Vec<f64>>,
    pub limb_indices: [usize; 4],
}

impl Default for BodySpec {
    fn default() -> Self {
        BodySpec::procedural(TEMPLATE_SEED)
    }
}

impl BodySpec {
    /// Builds the procedural humanoid. Same seed, same template.
    pub fn procedural(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let parent = SMPL_PARENTS.to_vec();
        let rest_offsets = REST_OFFSETS.to_vec();

        // Orthonormal columns over the non-root joint offsets.
        let dim = (NUM_JOINTS - 1) * 3;
        let gauss = DMatrix::<f64>::from_fn(dim, NUM_BETAS, |_, _| rng.sample(StandardNormal));
        let q = gauss.qr().q();
        let mut shape_basis = vec![[[0.0; NUM_BETAS]; 3]; NUM_JOINTS];
        for j in 1..NUM_JOINTS {
            for k in 0..3 {
                for b in 0..NUM_BETAS {
                    shape_basis[j][k][b] = SHAPE_SCALE * q[((j - 1) * 3 + k, b)];
                }
            }
        }

        let rest_joints = accumulate_rest(&parent, &rest_offsets);
        let mut vertex_template = Vec::with_capacity(NUM_VERTS);
        let mut skin_weights = Vec::with_capacity(NUM_VERTS);
        for j in 0..NUM_JOINTS {
            let radius: f64 = rng.random_range(0.03..0.07);
            match parent[j] {
                None => {
                    let axis = Vector3::y();
                    for dy in [-0.05, 0.0, 0.05] {
                        let center = Vector3::from(rest_joints[j]) + axis * dy;
                        for p in ring(center, axis, 0.12) {
                            vertex_template.push(p);
                            let mut w = vec![0.0; NUM_JOINTS];
                            w[j] = 1.0;
                            skin_weights.push(w);
                        }
                    }
                }
                Some(p) => {
                    let a = Vector3::from(rest_joints[p]);
                    let b = Vector3::from(rest_joints[j]);
                    let axis = (b - a).normalize();
                    for (f, w_child) in [(0.2, 0.0), (0.5, 0.25), (0.8, 0.5)] {
                        let center = a + (b - a) * f;
                        for v in ring(center, axis, radius) {
                            vertex_template.push(v);
                            let mut w = vec![0.0; NUM_JOINTS];
                            w[p] = 1.0 - w_child;
                            w[j] += w_child;
                            skin_weights.push(w);
                        }
                    }
                }
            }
        }

        BodySpec {
            parent,
            rest_offsets,
            shape_basis,
            vertex_template,
            skin_weights,
            limb_indices: LIMB_INDICES,
        }
    }

    pub fn num_joints(&self) -> usize {
        self.parent.len()
    }

    pub fn num_verts(&self) -> usize {
        self.vertex_template.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.parent.len();
        if n == 0 || self.parent[0].is_some() {
            return Err(VmpError::Invalid("joint 0 must be the root".into()));
        }
        for (j, p) in self.parent.iter().enumerate().skip(1) {
            match p {
                Some(p) if *p < j => {}
                _ => {
                    return Err(VmpError::Invalid(format!(
                        "joint {j} must have a parent with a smaller index"
                    )))
                }
            }
        }
        if self.rest_offsets.len() != n || self.shape_basis.len() != n {
            return Err(VmpError::Shape("offsets/basis do not match joint count".into()));
        }
        if self.skin_weights.len() != self.vertex_template.len() {
            return Err(VmpError::Shape("skin weights do not match vertex count".into()));
        }
        for (v, row) in self.skin_weights.iter().enumerate() {
            if row.len() != n {
                return Err(VmpError::Shape(format!("skin weight row {v} has wrong width")));
            }
            let nnz = row.iter().filter(|w| **w != 0.0).count();
            let sum: f64 = row.iter().sum();
            if nnz > 2 || (sum - 1.0).abs() > 1e-9 || row.iter().any(|w| *w < 0.0) {
                return Err(VmpError::Invalid(format!(
                    "skin weight row {v} must be non-negative, sum to 1, with at most 2 nonzeros"
                )));
            }
        }
        let l = self.limb_indices;
        for i in 0..4 {
            if l[i] >= n || l[..i].contains(&l[i]) {
                return Err(VmpError::Invalid("limb indices must be distinct joints".into()));
            }
        }
        Ok(())
    }

    /// Joint offsets after applying shape coefficients.
    pub fn shaped_offsets(&self, shape: &[f64; NUM_BETAS]) -> Vec<Vector3<f64>> {
        self.rest_offsets
            .iter()
            .zip(&self.shape_basis)
            .map(|(o, basis)| {
                let mut v = Vector3::from(*o);
                for k in 0..3 {
                    v[k] += basis[k].iter().zip(shape).map(|(b, s)| b * s).sum::<f64>();
                }
                v
            })
            .collect()
    }

    /// Rest-pose joint positions for the given shape (no root translation).
    pub fn rest_joints(&self, shape: &[f64; NUM_BETAS]) -> Vec<Vector3<f64>> {
        let offsets = self.shaped_offsets(shape);
        let mut out: Vec<Vector3<f64>> = Vec::with_capacity(offsets.len());
        for (j, o) in offsets.iter().enumerate() {
            let base = self.parent[j].map_or(Vector3::zeros(), |p| out[p]);
            out.push(base + o);
        }
        out
    }

    /// Edges of the kinematic tree as `(parent, child)` pairs.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.parent
            .iter()
            .enumerate()
            .filter_map(|(j, p)| p.map(|p| (p, j)))
    }
}

fn accumulate_rest(parent: &[Option<usize>], offsets: &[Vec3]) -> Vec<Vec3> {
    let mut out: Vec<Vec3> = Vec::with_capacity(offsets.len());
    for (j, o) in offsets.iter().enumerate() {
        let base = parent[j].map_or([0.0; 3], |p| out[p]);
        out.push([base[0] + o[0], base[1] + o[1], base[2] + o[2]]);
    }
    out
}

fn ring(center: Vector3<f64>, axis: Vector3<f64>, radius: f64) -> Vec<Vec3> {
    let helper = if axis.x.abs() < 0.9 { Vector3::x() } else { Vector3::z() };
    let u = axis.cross(&helper).normalize();
    let v = axis.cross(&u);
    (0..VERTS_PER_SEGMENT / 3)
        .map(|i| {
            let phi = std::f64::consts::TAU * i as f64 / (VERTS_PER_SEGMENT / 3) as f64;
            let p = center + (u * phi.cos() + v * phi.sin()) * radius;
            [p.x, p.y, p.z]
        })
        .collect()
}

/// World rotation and position of every joint.
#[derive(Debug, Clone)]
pub struct JointTransforms {
    pub rotations: Vec<Matrix3<f64>>,
    pub positions: Vec<Vector3<f64>>,
}

pub fn joint_transforms(frame: &MotionFrame, spec: &BodySpec) -> Result<JointTransforms> {
    let mut tf = rootless_transforms(frame, spec)?;
    let root = Vector3::from(frame.root_trans);
    tf.positions.iter_mut().for_each(|p| *p += root);
    Ok(tf)
}

/// Transforms with the root translation left out. Adding it as the final
/// step keeps outputs exactly equivariant to root shifts.
fn rootless_transforms(frame: &MotionFrame, spec: &BodySpec) -> Result<JointTransforms> {
    frame.validate()?;
    let offsets = spec.shaped_offsets(&frame.shape);
    let n = spec.num_joints();
    let mut rotations: Vec<Matrix3<f64>> = Vec::with_capacity(n);
    let mut positions: Vec<Vector3<f64>> = Vec::with_capacity(n);
    for j in 0..n {
        let local = rot6d_to_matrix(&frame.pose[j])?;
        match spec.parent[j] {
            None => {
                rotations.push(local);
                positions.push(offsets[j]);
            }
            Some(p) => {
                let g = rotations[p];
                positions.push(positions[p] + g * offsets[j]);
                rotations.push(g * local);
            }
        }
    }
    Ok(JointTransforms {
        rotations,
        positions,
    })
}

/// Joint positions, `24 x 3`.
pub fn forward_kinematics(frame: &MotionFrame, spec: &BodySpec) -> Result<Vec<Vec3>> {
    Ok(joint_transforms(frame, spec)?
        .positions
        .iter()
        .map(|p| [p.x, p.y, p.z])
        .collect())
}

/// Linear blend skinning of the vertex template. Rest-shape vertices follow
/// the shape-induced displacement of the joints they are bound to.
pub fn skin_vertices(frame: &MotionFrame, spec: &BodySpec) -> Result<Vec<Vec3>> {
    let tf = rootless_transforms(frame, spec)?;
    let root = Vector3::from(frame.root_trans);
    let rest = spec.rest_joints(&frame.shape);
    let rest0 = spec.rest_joints(&[0.0; NUM_BETAS]);
    let out = spec
        .vertex_template
        .iter()
        .zip(&spec.skin_weights)
        .map(|(v, w)| {
            let mut shaped = Vector3::from(*v);
            for (j, wj) in w.iter().enumerate() {
                if *wj != 0.0 {
                    shaped += (rest[j] - rest0[j]) * *wj;
                }
            }
            let mut acc = Vector3::zeros();
            for (j, wj) in w.iter().enumerate() {
                if *wj != 0.0 {
                    acc += (tf.rotations[j] * (shaped - rest[j]) + tf.positions[j]) * *wj;
                }
            }
            acc += root;
            [acc.x, acc.y, acc.z]
        })
        .collect();
    Ok(out)
}

/// Wrist and ankle positions in `limb_indices` order.
pub fn limb_joints(frame: &MotionFrame, spec: &BodySpec) -> Result<[Vec3; 4]> {
    let joints = forward_kinematics(frame, spec)?;
    Ok(spec.limb_indices.map(|j| joints[j]))
}

pub fn project_weak_perspective(points: &[Vec3], cam: &CameraParams) -> Vec<[f64; 2]> {
    points
        .iter()
        .map(|p| [cam.s * p[0] + cam.c[0], cam.s * p[1] + cam.c[1]])
        .collect()
}

/// Joint trajectories of a whole clip, `T x 24 x 3`.
pub fn clip_joints(clip: &MotionClip, spec: &BodySpec) -> Result<Vec<Vec<Vec3>>> {
    clip.frames().map(|f| forward_kinematics(&f, spec)).collect()
}

pub fn clip_vertices(clip: &MotionClip, spec: &BodySpec) -> Result<Vec<Vec<Vec3>>> {
    clip.frames().map(|f| skin_vertices(&f, spec)).collect()
}
