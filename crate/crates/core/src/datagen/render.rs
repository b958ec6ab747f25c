use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::body::{clip_joints, project_weak_perspective, BodySpec, CameraParams, MotionClip};
use crate::error::{Result, VmpError};
use crate::losses::Keypoints2D;
use crate::video::{GrayFrame, VideoClip};

/// Confidence given to joints hit by keypoint dropout.
pub const DROPOUT_CONFIDENCE: f64 = 0.3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RenderOptions {
    pub size: usize,
    /// Stroke width in pixels.
    pub line_width: f64,
    /// Probability that a joint's confidence is degraded.
    pub dropout: f64,
    pub dropout_seed: u64,
}

impl Default for RenderOptions {
    fn default() -> Self {
        RenderOptions {
            size: 64,
            line_width: 1.5,
            dropout: 0.0,
            dropout_seed: 0,
        }
    }
}

/// Normalized image coordinates to continuous pixel coordinates `(col, row)`.
pub fn to_pixel(uv: [f64; 2], width: usize, height: usize) -> [f64; 2] {
    [
        (uv[0] + 1.0) * 0.5 * width as f64,
        (1.0 - uv[1]) * 0.5 * height as f64,
    ]
}

fn segment_distance(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let d = [b[0] - a[0], b[1] - a[1]];
    let len2 = d[0] * d[0] + d[1] * d[1];
    let t = if len2 > 0.0 {
        (((p[0] - a[0]) * d[0] + (p[1] - a[1]) * d[1]) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let q = [a[0] + t * d[0] - p[0], a[1] + t * d[1] - p[1]];
    (q[0] * q[0] + q[1] * q[1]).sqrt()
}

fn draw_segment(frame: &mut GrayFrame, a: [f64; 2], b: [f64; 2], width: f64) {
    let reach = 0.5 * width + 1.0;
    let lo_c = (a[0].min(b[0]) - reach).floor().max(0.0);
    let hi_c = (a[0].max(b[0]) + reach).ceil().min(frame.width as f64 - 1.0);
    let lo_r = (a[1].min(b[1]) - reach).floor().max(0.0);
    let hi_r = (a[1].max(b[1]) + reach).ceil().min(frame.height as f64 - 1.0);
    if !(lo_c <= hi_c && lo_r <= hi_r) {
        return;
    }
    for row in lo_r as usize..=hi_r as usize {
        for col in lo_c as usize..=hi_c as usize {
            let center = [col as f64 + 0.5, row as f64 + 0.5];
            let coverage = (0.5 * width + 0.5 - segment_distance(center, a, b)).clamp(0.0, 1.0);
            let px = &mut frame.data[row * frame.width + col];
            *px = px.max(coverage);
        }
    }
}

/// Renders a stick figure per frame and records the projected joints.
pub fn render_clip(
    clip: &MotionClip,
    spec: &BodySpec,
    cam: &CameraParams,
    opts: &RenderOptions,
) -> Result<VideoClip> {
    clip.validate()?;
    cam.validate()?;
    if opts.size == 0 || !(opts.line_width > 0.0) || !(0.0..=1.0).contains(&opts.dropout) {
        return Err(VmpError::Invalid("render options out of range".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.dropout_seed);
    let joints = clip_joints(clip, spec)?;
    let mut frames = Vec::with_capacity(clip.len());
    let mut points = Vec::with_capacity(clip.len());
    let mut confidence = Vec::with_capacity(clip.len());
    for js in &joints {
        let uv = project_weak_perspective(js, cam);
        let mut frame = GrayFrame::zeros(opts.size, opts.size);
        for (parent, child) in spec.edges() {
            let a = to_pixel(uv[parent], opts.size, opts.size);
            let b = to_pixel(uv[child], opts.size, opts.size);
            draw_segment(&mut frame, a, b, opts.line_width);
        }
        frame.data.iter_mut().for_each(|v| *v = (*v * 255.0).round() / 255.0);
        let conf = uv
            .iter()
            .map(|_| {
                if opts.dropout > 0.0 && rng.random::<f64>() < opts.dropout {
                    DROPOUT_CONFIDENCE
                } else {
                    1.0
                }
            })
            .collect();
        frames.push(frame);
        points.push(uv);
        confidence.push(conf);
    }
    Ok(VideoClip {
        frames,
        keypoints: Keypoints2D { points, confidence },
        camera_gt: Some(*cam),
    })
}
