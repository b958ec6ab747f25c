//! Batched, differentiable body model on candle tensors.
//!
//! Frames are flattened to a leading batch axis `N`. Every operation is
//! built from primitive tensor ops, so gradients flow to root translation,
//! pose and shape.

use candle_core::{DType, Device, IndexOp, Tensor, D};

use super::{BodySpec, NUM_BETAS};
use crate::error::{Result, VmpError};
use crate::rotation::DEGENERATE_EPS;

/// Decodes `(..., 6)` into `(..., 3, 3)` rotation matrices (columns a, b, c).
pub fn rot6d_to_matrix(x: &Tensor) -> Result<Tensor> {
    let last = x.dims().len() - 1;
    let a = x.narrow(last, 0, 3)?;
    let b = x.narrow(last, 3, 3)?;
    let na = a.sqr()?.sum_keepdim(last)?.sqrt()?;
    check_min(&na, "first column norm")?;
    let a = a.broadcast_div(&na)?;
    let proj = (&a * &b)?.sum_keepdim(last)?;
    let b = (b - a.broadcast_mul(&proj)?)?;
    let nb = b.sqr()?.sum_keepdim(last)?.sqrt()?;
    check_min(&nb, "orthogonalized second column norm")?;
    let b = b.broadcast_div(&nb)?;
    let c = cross(&a, &b)?;
    Ok(Tensor::stack(&[a, b, c], D::Minus1)?)
}

fn check_min(norms: &Tensor, what: &str) -> Result<()> {
    if norms.elem_count() == 0 {
        return Ok(());
    }
    let min = norms
        .flatten_all()?
        .to_dtype(DType::F64)?
        .min(0)?
        .to_scalar::<f64>()?;
    if !(min > DEGENERATE_EPS) {
        return Err(VmpError::DegenerateRotation(format!("{what} {min:e}")));
    }
    Ok(())
}

/// Cross product over the last axis of two `(..., 3)` tensors.
pub fn cross(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let last = a.dims().len() - 1;
    let c = |t: &Tensor, i: usize| t.narrow(last, i, 1);
    let (a0, a1, a2) = (c(a, 0)?, c(a, 1)?, c(a, 2)?);
    let (b0, b1, b2) = (c(b, 0)?, c(b, 1)?, c(b, 2)?);
    let x = ((&a1 * &b2)? - (&a2 * &b1)?)?;
    let y = ((&a2 * &b0)? - (&a0 * &b2)?)?;
    let z = ((&a0 * &b1)? - (&a1 * &b0)?)?;
    Ok(Tensor::cat(&[x, y, z], last)?)
}

/// `(..., 3, 3) x (..., 3) -> (..., 3)` without a batched matmul.
fn mat_vec(m: &Tensor, v: &Tensor) -> Result<Tensor> {
    Ok(m.broadcast_mul(&v.unsqueeze(D::Minus2)?)?.sum(D::Minus1)?)
}

/// Posed skeleton: world rotations `(N, J, 3, 3)` and positions `(N, J, 3)`.
pub struct Posed {
    pub rotations: Tensor,
    pub positions: Tensor,
}

/// Constant tensors of a [`BodySpec`] placed on a device.
#[derive(Clone)]
pub struct BodyTensors {
    parent: Vec<Option<usize>>,
    rest_offsets: Tensor,
    shape_basis: Tensor,
    ancestors: Tensor,
    skin_weights: Tensor,
    template: Tensor,
    limb_indices: Tensor,
    num_joints: usize,
}

impl BodyTensors {
    pub fn new(spec: &BodySpec, device: &Device, dtype: DType) -> Result<Self> {
        spec.validate()?;
        let n = spec.num_joints();
        let nv = spec.num_verts();
        let flat = |v: Vec<f64>, shape: &[usize]| -> Result<Tensor> {
            Ok(Tensor::from_vec(v, shape, device)?.to_dtype(dtype)?)
        };
        let rest_offsets = flat(spec.rest_offsets.iter().flatten().copied().collect(), &[n, 3])?;
        let shape_basis = flat(
            spec.shape_basis
                .iter()
                .flat_map(|j| j.iter().flatten().copied())
                .collect(),
            &[n * 3, NUM_BETAS],
        )?;
        let mut anc = vec![0.0; n * n];
        for j in 0..n {
            let mut k = Some(j);
            while let Some(i) = k {
                anc[j * n + i] = 1.0;
                k = spec.parent[i];
            }
        }
        let ancestors = flat(anc, &[n, n])?;
        let skin_weights = flat(spec.skin_weights.iter().flatten().copied().collect(), &[nv, n])?;
        let template = flat(spec.vertex_template.iter().flatten().copied().collect(), &[nv, 3])?;
        let limb_indices = Tensor::new(&spec.limb_indices.map(|i| i as u32), device)?;
        Ok(BodyTensors {
            parent: spec.parent.clone(),
            rest_offsets,
            shape_basis,
            ancestors,
            skin_weights,
            template,
            limb_indices,
            num_joints: n,
        })
    }

    /// Shaped joint offsets `(N, J, 3)` for shapes `(N, 10)`.
    pub fn shaped_offsets(&self, shape: &Tensor) -> Result<Tensor> {
        let n = shape.dim(0)?;
        let delta = shape.matmul(&self.shape_basis.t()?)?.reshape((n, self.num_joints, 3))?;
        Ok(delta.broadcast_add(&self.rest_offsets)?)
    }

    fn rest_joints_from_offsets(&self, offsets: &Tensor) -> Result<Tensor> {
        Ok(self.ancestors.broadcast_matmul(offsets)?)
    }

    /// Forward kinematics for `root (N,3)`, `pose (N,J,6)`, `shape (N,10)`.
    pub fn pose(&self, root: &Tensor, pose: &Tensor, shape: &Tensor) -> Result<Posed> {
        let local = rot6d_to_matrix(pose)?;
        let offsets = self.shaped_offsets(shape)?;
        let mut rots: Vec<Tensor> = Vec::with_capacity(self.num_joints);
        let mut pos: Vec<Tensor> = Vec::with_capacity(self.num_joints);
        for j in 0..self.num_joints {
            let r = local.i((.., j))?;
            let o = offsets.i((.., j))?;
            match self.parent[j] {
                None => {
                    pos.push((root + o)?);
                    rots.push(r);
                }
                Some(p) => {
                    pos.push((&pos[p] + mat_vec(&rots[p], &o)?)?);
                    rots.push(rots[p].matmul(&r)?);
                }
            }
        }
        Ok(Posed {
            rotations: Tensor::stack(&rots, 1)?,
            positions: Tensor::stack(&pos, 1)?,
        })
    }

    pub fn joints(&self, root: &Tensor, pose: &Tensor, shape: &Tensor) -> Result<Tensor> {
        Ok(self.pose(root, pose, shape)?.positions)
    }

    pub fn limb_joints(&self, root: &Tensor, pose: &Tensor, shape: &Tensor) -> Result<Tensor> {
        let j = self.joints(root, pose, shape)?;
        Ok(j.index_select(&self.limb_indices, 1)?)
    }

    /// Skinned vertices `(N, V, 3)`.
    pub fn vertices(&self, root: &Tensor, pose: &Tensor, shape: &Tensor) -> Result<Tensor> {
        let posed = self.pose(root, pose, shape)?;
        let n = root.dim(0)?;
        let offsets = self.shaped_offsets(shape)?;
        let rest = self.rest_joints_from_offsets(&offsets)?;
        let zero = Tensor::zeros((1, NUM_BETAS), shape.dtype(), shape.device())?;
        let rest0 = self.rest_joints_from_offsets(&self.shaped_offsets(&zero)?)?;
        let shaped_template = self
            .skin_weights
            .broadcast_matmul(&rest.broadcast_sub(&rest0)?)?
            .broadcast_add(&self.template)?;
        // Per-joint affine map x -> G x + (p - G rest).
        let trans = (&posed.positions - mat_vec(&posed.rotations, &rest)?)?;
        let affine = Tensor::cat(
            &[
                posed.rotations.reshape((n, self.num_joints, 9))?,
                trans,
            ],
            2,
        )?;
        let blended = self.skin_weights.broadcast_matmul(&affine)?;
        let nv = blended.dim(1)?;
        let m = blended.narrow(2, 0, 9)?.reshape((n, nv, 3, 3))?;
        let t = blended.narrow(2, 9, 3)?;
        Ok((mat_vec(&m, &shaped_template)? + t)?)
    }
}

/// Weak perspective for `points (N,K,3)`, scale `(N)`, center `(N,2)`.
pub fn project_weak_perspective(points: &Tensor, scale: &Tensor, center: &Tensor) -> Result<Tensor> {
    let xy = points.narrow(D::Minus1, 0, 2)?;
    let s = scale.unsqueeze(1)?.unsqueeze(2)?;
    Ok(xy.broadcast_mul(&s)?.broadcast_add(&center.unsqueeze(1)?)?)
}
