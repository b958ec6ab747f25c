use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::body::CameraParams;
use crate::error::{Result, VmpError};
use crate::losses::Keypoints2D;

/// Grayscale image with intensities in `[0, 1]`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayFrame {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl GrayFrame {
    pub fn zeros(width: usize, height: usize) -> Self {
        GrayFrame {
            width,
            height,
            data: vec![0.0; width * height],
        }
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.width + col]
    }
}

/// Rendered frames with their 2D keypoints and, for synthetic data, the
/// ground-truth camera. Keypoints live in normalized image coordinates:
/// `[-1, 1]` spans the image width and height, with `+y` pointing up.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoClip {
    pub frames: Vec<GrayFrame>,
    pub keypoints: Keypoints2D,
    pub camera_gt: Option<CameraParams>,
}

#[derive(Serialize, Deserialize)]
struct KeypointFile {
    points: Vec<Vec<[f64; 2]>>,
    confidence: Vec<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    camera: Option<CameraParams>,
}

impl VideoClip {
    pub fn validate(&self) -> Result<()> {
        if self.frames.is_empty() {
            return Err(VmpError::Invalid("video clip has no frames".into()));
        }
        let (w, h) = (self.frames[0].width, self.frames[0].height);
        for f in &self.frames {
            if f.width != w || f.height != h || f.data.len() != w * h {
                return Err(VmpError::Shape("frames differ in size".into()));
            }
            if f.data.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(VmpError::Invalid("pixel values must lie in [0, 1]".into()));
            }
        }
        self.keypoints.validate()?;
        if self.keypoints.len() != self.frames.len() {
            return Err(VmpError::Shape("keypoint frames do not match video frames".into()));
        }
        if let Some(cam) = &self.camera_gt {
            cam.validate()?;
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Writes `frame_%04d.pgm` files and `keypoints.json` into `dir`.
    pub fn write_dir(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| VmpError::io(dir, e))?;
        for (i, f) in self.frames.iter().enumerate() {
            let path = dir.join(format!("frame_{i:04}.pgm"));
            let bytes: Vec<u8> = f.data.iter().map(|v| (v * 255.0).round() as u8).collect();
            let img = image::GrayImage::from_raw(f.width as u32, f.height as u32, bytes)
                .ok_or_else(|| VmpError::Shape("frame buffer size".into()))?;
            img.save_with_format(&path, image::ImageFormat::Pnm)
                .map_err(|e| VmpError::io(&path, std::io::Error::other(e)))?;
        }
        let kp = KeypointFile {
            points: self.keypoints.points.clone(),
            confidence: self.keypoints.confidence.clone(),
            camera: self.camera_gt,
        };
        let path = dir.join("keypoints.json");
        std::fs::write(&path, serde_json::to_string(&kp)?).map_err(|e| VmpError::io(&path, e))
    }

    pub fn read_dir(dir: impl AsRef<Path>) -> Result<VideoClip> {
        let dir = dir.as_ref();
        let kp_path = dir.join("keypoints.json");
        let text = std::fs::read_to_string(&kp_path).map_err(|e| VmpError::io(&kp_path, e))?;
        let kp: KeypointFile = serde_json::from_str(&text).map_err(|e| VmpError::Parse {
            path: kp_path.display().to_string(),
            msg: e.to_string(),
        })?;
        let mut frames = Vec::new();
        loop {
            let path = dir.join(format!("frame_{:04}.pgm", frames.len()));
            if !path.exists() {
                break;
            }
            let img = image::open(&path)
                .map_err(|e| VmpError::Parse {
                    path: path.display().to_string(),
                    msg: e.to_string(),
                })?
                .into_luma8();
            frames.push(GrayFrame {
                width: img.width() as usize,
                height: img.height() as usize,
                data: img.as_raw().iter().map(|v| *v as f64 / 255.0).collect(),
            });
        }
        let clip = VideoClip {
            frames,
            keypoints: Keypoints2D {
                points: kp.points,
                confidence: kp.confidence,
            },
            camera_gt: kp.camera,
        };
        clip.validate()?;
        Ok(clip)
    }
}
