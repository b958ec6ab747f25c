//! `.mclip.json` motion clip files.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::body::{MotionClip, NUM_BETAS, NUM_JOINTS};
use crate::checkpoint::write_atomic;
use crate::error::{Result, VmpError};
use crate::rotation::Rot6;

pub const CLIP_FORMAT_VERSION: u64 = 1;
pub const CLIP_EXTENSION: &str = "mclip.json";

#[derive(Serialize, Deserialize)]
struct ClipFile {
    version: u64,
    fps: f64,
    #[serde(rename = "T")]
    t: usize,
    joints: usize,
    rep: String,
    has_root: bool,
    root_trans: Vec<[f64; 3]>,
    pose: Vec<Vec<Rot6>>,
    shape: Vec<f64>,
}

pub fn clip_to_json(clip: &MotionClip) -> Result<String> {
    clip.validate()?;
    let file = ClipFile {
        version: CLIP_FORMAT_VERSION,
        fps: clip.fps,
        t: clip.len(),
        joints: NUM_JOINTS,
        rep: "rot6d".into(),
        has_root: clip.has_root,
        root_trans: clip.root_trans.clone(),
        pose: clip.pose.iter().map(|p| p.to_vec()).collect(),
        shape: clip.shape.to_vec(),
    };
    Ok(serde_json::to_string(&file)?)
}

/// Parses a clip file body. `origin` names the source in error messages.
pub fn clip_from_json(text: &str, origin: &str) -> Result<MotionClip> {
    let parse_err = |msg: String| VmpError::Parse {
        path: origin.to_string(),
        msg,
    };
    let value: serde_json::Value = serde_json::from_str(text).map_err(|e| parse_err(e.to_string()))?;
    match value.get("version").and_then(|v| v.as_u64()) {
        Some(CLIP_FORMAT_VERSION) => {}
        Some(v) => {
            return Err(VmpError::Version {
                found: v.to_string(),
                expected: CLIP_FORMAT_VERSION.to_string(),
            })
        }
        None => return Err(parse_err("missing or non-integer \"version\"".into())),
    }
    // Re-parse from text so field errors keep their line context.
    let file: ClipFile = serde_json::from_str(text).map_err(|e| parse_err(e.to_string()))?;
    if file.rep != "rot6d" {
        return Err(parse_err(format!("unsupported rotation representation {:?}", file.rep)));
    }
    if file.joints != NUM_JOINTS {
        return Err(parse_err(format!("expected {NUM_JOINTS} joints, found {}", file.joints)));
    }
    if file.root_trans.len() != file.t || file.pose.len() != file.t {
        return Err(parse_err(format!(
            "T={} but root_trans has {} and pose has {} frames",
            file.t,
            file.root_trans.len(),
            file.pose.len()
        )));
    }
    let mut pose = Vec::with_capacity(file.t);
    for (t, p) in file.pose.into_iter().enumerate() {
        let frame: [Rot6; NUM_JOINTS] = p
            .try_into()
            .map_err(|_| parse_err(format!("pose frame {t} does not have {NUM_JOINTS} joints")))?;
        pose.push(frame);
    }
    let shape: [f64; NUM_BETAS] = file
        .shape
        .try_into()
        .map_err(|_| parse_err(format!("shape must have {NUM_BETAS} entries")))?;
    MotionClip::new(file.root_trans, pose, shape, file.fps, file.has_root)
}

pub fn write_clip(clip: &MotionClip, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path.as_ref(), clip_to_json(clip)?.as_bytes())
}

pub fn read_clip(path: impl AsRef<Path>) -> Result<MotionClip> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| VmpError::io(path, e))?;
    clip_from_json(&text, &path.display().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{gen_motion_clip, MotionFamily, MotionFamilySpec};

    #[test]
    fn round_trip_bit_exact() {
        for fam in MotionFamily::ALL {
            let clip = gen_motion_clip(&MotionFamilySpec::new(fam, 99)).unwrap();
            let back = clip_from_json(&clip_to_json(&clip).unwrap(), "mem").unwrap();
            assert_eq!(back, clip);
        }
    }

    #[test]
    fn truncated_text_is_parse_error() {
        let clip = gen_motion_clip(&MotionFamilySpec::new(MotionFamily::Oscillate, 1)).unwrap();
        let text = clip_to_json(&clip).unwrap();
        let err = clip_from_json(&text[..text.len() / 2], "mem").unwrap_err();
        assert!(matches!(err, VmpError::Parse { .. }));
        assert!(err.to_string().contains("line"));
    }

    #[test]
    fn unknown_version_rejected() {
        let clip = gen_motion_clip(&MotionFamilySpec::new(MotionFamily::Oscillate, 1)).unwrap();
        let text = clip_to_json(&clip).unwrap().replacen("\"version\":1", "\"version\":2", 1);
        assert!(matches!(clip_from_json(&text, "mem"), Err(VmpError::Version { .. })));
    }
}
