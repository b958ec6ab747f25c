//! Procedural motion families.

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::body::{MotionClip, NUM_BETAS, NUM_JOINTS};
use crate::error::{Result, VmpError};
use crate::rotation::{axis_angle_to_rot6d, Rot6};

pub const KEYFRAMES: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MotionFamily {
    Oscillate,
    KeyframeSpline,
    DriftStatic,
}

impl MotionFamily {
    pub const ALL: [MotionFamily; 3] = [
        MotionFamily::Oscillate,
        MotionFamily::KeyframeSpline,
        MotionFamily::DriftStatic,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            MotionFamily::Oscillate => "oscillate",
            MotionFamily::KeyframeSpline => "keyframe_spline",
            MotionFamily::DriftStatic => "drift_static",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotionFamilySpec {
    pub family: MotionFamily,
    pub seed: u64,
    pub clip_len: usize,
    pub fps: f64,
    /// Joint rotation amplitude range in radians.
    pub amplitude: (f64, f64),
    /// Oscillation frequency range in Hz (root sway for `drift_static`).
    pub frequency: (f64, f64),
    /// Root speed range in units per second (`drift_static` only).
    pub speed: (f64, f64),
}

impl MotionFamilySpec {
    pub fn new(family: MotionFamily, seed: u64) -> Self {
        let amplitude = match family {
            MotionFamily::Oscillate => (0.1, 0.6),
            MotionFamily::KeyframeSpline => (0.0, 0.6),
            MotionFamily::DriftStatic => (0.0, 0.3),
        };
        MotionFamilySpec {
            family,
            seed,
            clip_len: 16,
            fps: 25.0,
            amplitude,
            frequency: (0.5, 2.0),
            speed: (0.2, 1.0),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.clip_len < 2 || !(self.fps > 0.0) {
            return Err(VmpError::Invalid("family spec needs clip_len >= 2 and fps > 0".into()));
        }
        for (lo, hi) in [self.amplitude, self.frequency, self.speed] {
            if !(lo <= hi) || !lo.is_finite() || !hi.is_finite() || lo < 0.0 {
                return Err(VmpError::Invalid(format!("bad range ({lo}, {hi})")));
            }
        }
        Ok(())
    }
}

fn uniform(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

fn random_pose(rng: &mut ChaCha8Rng, amplitude: (f64, f64)) -> [Vector3<f64>; NUM_JOINTS] {
    std::array::from_fn(|_| {
        let a = uniform(rng, amplitude);
        Vector3::new(
            rng.random_range(-1.0..=1.0) * a,
            rng.random_range(-1.0..=1.0) * a,
            rng.random_range(-1.0..=1.0) * a,
        )
    })
}

fn to_rot6(pose: &[Vector3<f64>; NUM_JOINTS]) -> [Rot6; NUM_JOINTS] {
    std::array::from_fn(|j| axis_angle_to_rot6d(&pose[j]))
}

fn random_shape(rng: &mut ChaCha8Rng) -> [f64; NUM_BETAS] {
    std::array::from_fn(|_| rng.random_range(-1.0..=1.0))
}

/// Keyframe rotation vectors of a `keyframe_spline` clip, in time order.
pub fn keyframe_poses(spec: &MotionFamilySpec) -> Vec<[Vector3<f64>; NUM_JOINTS]> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let _shape = random_shape(&mut rng);
    (0..KEYFRAMES).map(|_| random_pose(&mut rng, spec.amplitude)).collect()
}

/// Frame indices the keyframes are pinned to.
pub fn keyframe_times(clip_len: usize) -> [f64; KEYFRAMES] {
    let last = (clip_len - 1) as f64;
    std::array::from_fn(|k| last * k as f64 / (KEYFRAMES - 1) as f64)
}

/// Catmull-Rom interpolation through `values` at evenly spaced `knots`.
fn catmull_rom(knots: &[f64; KEYFRAMES], values: &[f64; KEYFRAMES], t: f64) -> f64 {
    let seg = knots.windows(2).position(|w| t <= w[1]).unwrap_or(KEYFRAMES - 2);
    let (t0, t1) = (knots[seg], knots[seg + 1]);
    let h = t1 - t0;
    let u = (t - t0) / h;
    let tangent = |i: usize| -> f64 {
        if i == 0 {
            values[1] - values[0]
        } else if i == KEYFRAMES - 1 {
            values[i] - values[i - 1]
        } else {
            0.5 * (values[i + 1] - values[i - 1])
        }
    };
    let (p0, p1, m0, m1) = (values[seg], values[seg + 1], tangent(seg), tangent(seg + 1));
    let (u2, u3) = (u * u, u * u * u);
    (2.0 * u3 - 3.0 * u2 + 1.0) * p0 + (u3 - 2.0 * u2 + u) * m0 + (-2.0 * u3 + 3.0 * u2) * p1 + (u3 - u2) * m1
}

/// Generates one clip. Identical specs give bit-identical clips.
pub fn gen_motion_clip(spec: &MotionFamilySpec) -> Result<MotionClip> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let shape = random_shape(&mut rng);
    let t_len = spec.clip_len;
    let dt = 1.0 / spec.fps;
    let mut root_trans = vec![[0.0; 3]; t_len];
    let mut pose = Vec::with_capacity(t_len);
    match spec.family {
        MotionFamily::Oscillate => {
            let params: Vec<([f64; 3], f64, [f64; 3])> = (0..NUM_JOINTS)
                .map(|_| {
                    let a = uniform(&mut rng, spec.amplitude);
                    let amp = [
                        rng.random_range(-1.0..=1.0) * a,
                        rng.random_range(-1.0..=1.0) * a,
                        rng.random_range(-1.0..=1.0) * a,
                    ];
                    let freq = uniform(&mut rng, spec.frequency);
                    let phase = [
                        rng.random_range(0.0..std::f64::consts::TAU),
                        rng.random_range(0.0..std::f64::consts::TAU),
                        rng.random_range(0.0..std::f64::consts::TAU),
                    ];
                    (amp, freq, phase)
                })
                .collect();
            for t in 0..t_len {
                let time = t as f64 * dt;
                let frame: [Vector3<f64>; NUM_JOINTS] = std::array::from_fn(|j| {
                    let (amp, freq, phase) = params[j];
                    Vector3::from_fn(|k, _| {
                        amp[k] * (std::f64::consts::TAU * freq * time + phase[k]).sin()
                    })
                });
                pose.push(to_rot6(&frame));
            }
        }
        MotionFamily::KeyframeSpline => {
            let keys: Vec<[Vector3<f64>; NUM_JOINTS]> =
                (0..KEYFRAMES).map(|_| random_pose(&mut rng, spec.amplitude)).collect();
            let knots = keyframe_times(t_len);
            for t in 0..t_len {
                let frame: [Vector3<f64>; NUM_JOINTS] = std::array::from_fn(|j| {
                    Vector3::from_fn(|k, _| {
                        let vals: [f64; KEYFRAMES] = std::array::from_fn(|i| keys[i][j][k]);
                        catmull_rom(&knots, &vals, t as f64)
                    })
                });
                pose.push(to_rot6(&frame));
            }
        }
        MotionFamily::DriftStatic => {
            let fixed = to_rot6(&random_pose(&mut rng, spec.amplitude));
            let speed = uniform(&mut rng, spec.speed);
            let heading = rng.random_range(0.0..std::f64::consts::TAU);
            let freq = uniform(&mut rng, spec.frequency);
            let phase = rng.random_range(0.0..std::f64::consts::TAU);
            let sway = rng.random_range(0.0..0.05);
            for (t, r) in root_trans.iter_mut().enumerate() {
                let time = t as f64 * dt;
                let bob = sway * (std::f64::consts::TAU * freq * time + phase).sin();
                *r = [
                    speed * heading.cos() * time,
                    bob,
                    speed * heading.sin() * time,
                ];
                pose.push(fixed);
            }
        }
    }
    MotionClip::new(root_trans, pose, shape, spec.fps, true)
}
