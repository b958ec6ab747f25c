use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::families::{gen_motion_clip, MotionFamily, MotionFamilySpec};
use super::format::{read_clip, write_clip};
use super::render::{render_clip, RenderOptions};
use crate::body::{BodySpec, CameraParams, MotionClip};
use crate::checkpoint::write_atomic;
use crate::error::{Result, VmpError};
use crate::normalize::Normalizer;
use crate::video::VideoClip;

pub const MANIFEST_VERSION: u64 = 1;
pub const MANIFEST_FILE: &str = "dataset.manifest.json";

/// One step of the splitmix64 sequence.
pub fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Independent per-item seed derived from a master seed.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    let mut state = master ^ index.wrapping_mul(0xd1b5_4a32_d192_ed03);
    splitmix64(&mut state)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilyCounts {
    pub oscillate: usize,
    pub keyframe_spline: usize,
    pub drift_static: usize,
}

impl FamilyCounts {
    pub fn get(&self, family: MotionFamily) -> usize {
        match family {
            MotionFamily::Oscillate => self.oscillate,
            MotionFamily::KeyframeSpline => self.keyframe_spline,
            MotionFamily::DriftStatic => self.drift_static,
        }
    }

    pub fn total(&self) -> usize {
        self.oscillate + self.keyframe_spline + self.drift_static
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetConfig {
    pub seed: u64,
    pub clip_len: usize,
    pub fps: f64,
    pub counts: FamilyCounts,
    pub train_fraction: f64,
    pub val_fraction: f64,
    /// Share of each split whose root translation is dropped.
    pub rootless_fraction: f64,
    pub render: bool,
    pub render_options: RenderOptions,
    pub camera_scale: (f64, f64),
    pub camera_center_x: (f64, f64),
    pub camera_center_y: (f64, f64),
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            seed: 0,
            clip_len: 16,
            fps: 25.0,
            counts: FamilyCounts {
                oscillate: 8,
                keyframe_spline: 8,
                drift_static: 4,
            },
            train_fraction: 0.8,
            val_fraction: 0.2,
            rootless_fraction: 0.5,
            render: true,
            render_options: RenderOptions::default(),
            camera_scale: (0.8, 1.0),
            camera_center_x: (-0.1, 0.1),
            camera_center_y: (0.0, 0.2),
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.clip_len < 2 || !(self.fps > 0.0) {
            return Err(VmpError::Invalid("dataset needs clip_len >= 2 and fps > 0".into()));
        }
        if self.counts.total() == 0 {
            return Err(VmpError::Invalid("dataset needs at least one clip".into()));
        }
        let fracs = [self.train_fraction, self.val_fraction, self.rootless_fraction];
        if fracs.iter().any(|f| !(0.0..=1.0).contains(f)) {
            return Err(VmpError::Invalid("fractions must lie in [0, 1]".into()));
        }
        if (self.train_fraction + self.val_fraction - 1.0).abs() > 1e-9 {
            return Err(VmpError::Invalid(format!(
                "split fractions must sum to 1, got {} + {}",
                self.train_fraction, self.val_fraction
            )));
        }
        if !(self.camera_scale.0 > 0.0 && self.camera_scale.0 <= self.camera_scale.1) {
            return Err(VmpError::Invalid("camera scale range must be positive and ordered".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: usize,
    pub family: MotionFamily,
    pub seed: u64,
    pub split: Split,
    pub has_root: bool,
    /// Relative to the manifest directory.
    pub clip: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub video: Option<String>,
    pub camera: CameraParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub version: u64,
    pub config: DatasetConfig,
    pub entries: Vec<ManifestEntry>,
    pub stats: Normalizer,
}

/// A generated item before it touches the disk.
#[derive(Debug, Clone)]
pub struct DatasetItem {
    pub entry: ManifestEntry,
    pub clip: MotionClip,
    pub video: Option<VideoClip>,
}

fn uniform(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

/// Whether position `k` within a split is flagged rootless.
fn rootless_at(k: usize, fraction: f64) -> bool {
    ((k + 1) as f64 * fraction).floor() > (k as f64 * fraction).floor()
}

/// Generates every clip (and video) in memory, plus train-split statistics.
pub fn generate_items(config: &DatasetConfig, spec: &BodySpec) -> Result<(Vec<DatasetItem>, Normalizer)> {
    config.validate()?;
    let mut plan = Vec::new();
    for fam in MotionFamily::ALL {
        for _ in 0..config.counts.get(fam) {
            plan.push(fam);
        }
    }
    let n = plan.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(config.seed, u64::MAX)));
    let n_train = (n as f64 * config.train_fraction).round() as usize;
    let mut split = vec![Split::Val; n];
    for &i in &order[..n_train] {
        split[i] = Split::Train;
    }
    let mut seen = [0usize; 2];
    let mut items = Vec::with_capacity(n);
    for (id, fam) in plan.into_iter().enumerate() {
        let seed = derive_seed(config.seed, id as u64);
        let spec_f = MotionFamilySpec {
            clip_len: config.clip_len,
            fps: config.fps,
            ..MotionFamilySpec::new(fam, seed)
        };
        let mut clip = gen_motion_clip(&spec_f)?;
        let slot = &mut seen[split[id] as usize];
        let has_root = !rootless_at(*slot, config.rootless_fraction);
        *slot += 1;
        if !has_root {
            clip = clip.without_root();
            clip.has_root = false;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 1));
        let camera = CameraParams::new(
            uniform(&mut rng, config.camera_scale),
            [uniform(&mut rng, config.camera_center_x), uniform(&mut rng, config.camera_center_y)],
        )?;
        let video = if config.render {
            let opts = RenderOptions {
                dropout_seed: derive_seed(seed, 2),
                ..config.render_options.clone()
            };
            Some(render_clip(&clip, spec, &camera, &opts)?)
        } else {
            None
        };
        items.push(DatasetItem {
            entry: ManifestEntry {
                id,
                family: fam,
                seed,
                split: split[id],
                has_root,
                clip: format!("clips/{id:05}.mclip.json"),
                video: config.render.then(|| format!("videos/{id:05}")),
                camera,
            },
            clip,
            video,
        });
    }
    let train: Vec<MotionClip> = items
        .iter()
        .filter(|it| it.entry.split == Split::Train)
        .map(|it| it.clip.clone())
        .collect();
    let stats = if train.is_empty() {
        return Err(VmpError::Invalid("train split is empty".into()));
    } else {
        Normalizer::fit(&train)?
    };
    Ok((items, stats))
}

/// Generates the dataset under `out_dir` and writes its manifest.
pub fn make_dataset(config: &DatasetConfig, spec: &BodySpec, out_dir: impl AsRef<Path>) -> Result<DatasetManifest> {
    let out_dir = out_dir.as_ref();
    let (items, stats) = generate_items(config, spec)?;
    for it in &items {
        write_clip(&it.clip, out_dir.join(&it.entry.clip))?;
        if let (Some(v), Some(rel)) = (&it.video, &it.entry.video) {
            v.write_dir(out_dir.join(rel))?;
        }
    }
    let manifest = DatasetManifest {
        version: MANIFEST_VERSION,
        config: config.clone(),
        entries: items.into_iter().map(|it| it.entry).collect(),
        stats,
    };
    manifest.save(out_dir.join(MANIFEST_FILE))?;
    Ok(manifest)
}

impl DatasetManifest {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_atomic(path.as_ref(), serde_json::to_string_pretty(self)?.as_bytes())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| VmpError::io(path, e))?;
        let m: DatasetManifest = serde_json::from_str(&text).map_err(|e| VmpError::Parse {
            path: path.display().to_string(),
            msg: e.to_string(),
        })?;
        if m.version != MANIFEST_VERSION {
            return Err(VmpError::Version {
                found: m.version.to_string(),
                expected: MANIFEST_VERSION.to_string(),
            });
        }
        m.stats.validate()?;
        Ok(m)
    }

    pub fn entries(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    pub fn load_clips(&self, root: &Path, split: Split) -> Result<Vec<MotionClip>> {
        self.entries(split).map(|e| read_clip(root.join(&e.clip))).collect()
    }

    pub fn load_videos(&self, root: &Path, split: Split) -> Result<Vec<VideoClip>> {
        self.entries(split)
            .map(|e| {
                let rel = e.video.as_ref().ok_or_else(|| {
                    VmpError::Invalid(format!("clip {} has no rendered video", e.id))
                })?;
                VideoClip::read_dir(root.join(rel))
            })
            .collect()
    }
}

/// Directory holding the manifest, for resolving entry paths.
pub fn manifest_root(manifest_path: &Path) -> PathBuf {
    manifest_path.parent().map(Path::to_path_buf).unwrap_or_default()
}
