//! Python module `vmprior`: clips, the body model, the motion prior, the
//! video encoder and the pose/diversity metrics.

use std::path::PathBuf;

use candle_core::{DType, Device};
use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use vmp_core::body::{clip_joints, clip_vertices, BodySpec, CameraParams, MotionClip, NUM_BETAS, NUM_JOINTS};
use vmp_core::cli::{evaluate_clips, sample_clips, synthesize};
use vmp_core::datagen::{add_noise, gen_motion_clip, render_clip, MotionFamily, MotionFamilySpec, RenderOptions};
use vmp_core::metrics::{self, JointTrack};
use vmp_core::normalize::Normalizer;
use vmp_core::prior::{LatentCode, MotionPrior, PriorConfig};
use vmp_core::rotation;
use vmp_core::train::{train_prior, PriorData, Stage, TrainConfig};
use vmp_core::video::{interpolate_latent, VideoClip, VideoEncoder};
use vmp_core::VmpError;

type Track = Vec<Vec<[f64; 3]>>;

fn err(e: VmpError) -> PyErr {
    match e {
        VmpError::Io { .. } => PyIOError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn to_py_json(py: Python<'_>, v: &serde_json::Value) -> PyResult<Py<PyAny>> {
    let text = serde_json::to_string(v).map_err(|e| PyValueError::new_err(e.to_string()))?;
    Ok(py.import("json")?.call_method1("loads", (text,))?.unbind())
}

fn track(t: Track) -> PyResult<JointTrack> {
    JointTrack::new(t).map_err(err)
}

fn tracks(ts: Vec<Track>) -> PyResult<Vec<JointTrack>> {
    ts.into_iter().map(track).collect()
}

fn spec_or_default(spec: Option<&PyBodySpec>) -> BodySpec {
    spec.map_or_else(BodySpec::default, |s| s.inner.clone())
}

#[pyclass(name = "BodySpec", from_py_object)]
#[derive(Clone)]
struct PyBodySpec {
    inner: BodySpec,
}

#[pymethods]
impl PyBodySpec {
    /// The built-in procedural body.
    #[new]
    fn new() -> Self {
        PyBodySpec {
            inner: BodySpec::default(),
        }
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PyBodySpec {
            inner: vmp_core::body::read_body_spec(path).map_err(err)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        vmp_core::body::write_body_spec(&self.inner, path).map_err(err)
    }

    #[getter]
    fn num_joints(&self) -> usize {
        self.inner.num_joints()
    }

    #[getter]
    fn num_verts(&self) -> usize {
        self.inner.num_verts()
    }

    #[getter]
    fn parents(&self) -> Vec<Option<usize>> {
        self.inner.parent.clone()
    }
}

#[pyclass(name = "MotionClip", from_py_object)]
#[derive(Clone)]
struct PyMotionClip {
    inner: MotionClip,
}

#[pymethods]
impl PyMotionClip {
    #[new]
    #[pyo3(signature = (root_trans, pose, shape, fps = 25.0, has_root = true))]
    fn new(
        root_trans: Vec<[f64; 3]>,
        pose: Vec<Vec<[f64; 6]>>,
        shape: [f64; NUM_BETAS],
        fps: f64,
        has_root: bool,
    ) -> PyResult<Self> {
        let pose = pose
            .into_iter()
            .map(|f| {
                <[[f64; 6]; NUM_JOINTS]>::try_from(f)
                    .map_err(|f| PyValueError::new_err(format!("expected {NUM_JOINTS} joints per frame, got {}", f.len())))
            })
            .collect::<PyResult<Vec<_>>>()?;
        Ok(PyMotionClip {
            inner: MotionClip::new(root_trans, pose, shape, fps, has_root).map_err(err)?,
        })
    }

    /// Synthetic clip from a motion family (`oscillate`, `keyframe_spline`, `drift_static`).
    #[staticmethod]
    #[pyo3(signature = (family, seed, clip_len = 16))]
    fn generate(family: &str, seed: u64, clip_len: usize) -> PyResult<Self> {
        let family: MotionFamily = serde_json::from_value(serde_json::Value::String(family.into()))
            .map_err(|_| PyValueError::new_err(format!("unknown motion family {family:?}")))?;
        let spec = MotionFamilySpec {
            clip_len,
            ..MotionFamilySpec::new(family, seed)
        };
        Ok(PyMotionClip {
            inner: gen_motion_clip(&spec).map_err(err)?,
        })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PyMotionClip {
            inner: vmp_core::datagen::read_clip(path).map_err(err)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        vmp_core::datagen::write_clip(&self.inner, path).map_err(err)
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(PyMotionClip {
            inner: vmp_core::datagen::clip_from_json(text, "<python>").map_err(err)?,
        })
    }

    fn to_json(&self) -> PyResult<String> {
        vmp_core::datagen::clip_to_json(&self.inner).map_err(err)
    }

    #[getter]
    fn root_trans(&self) -> Vec<[f64; 3]> {
        self.inner.root_trans.clone()
    }

    #[getter]
    fn pose(&self) -> Vec<Vec<[f64; 6]>> {
        self.inner.pose.iter().map(|p| p.to_vec()).collect()
    }

    #[getter]
    fn shape(&self) -> [f64; NUM_BETAS] {
        self.inner.shape
    }

    #[getter]
    fn fps(&self) -> f64 {
        self.inner.fps
    }

    #[getter]
    fn has_root(&self) -> bool {
        self.inner.has_root
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __eq__(&self, other: &Self) -> bool {
        self.inner == other.inner
    }

    fn __repr__(&self) -> String {
        format!(
            "MotionClip(frames={}, fps={}, has_root={})",
            self.inner.len(),
            self.inner.fps,
            self.inner.has_root
        )
    }

    /// Joint positions, `T x 24 x 3`.
    #[pyo3(signature = (spec = None))]
    fn joints(&self, spec: Option<&PyBodySpec>) -> PyResult<Track> {
        clip_joints(&self.inner, &spec_or_default(spec)).map_err(err)
    }

    /// Skinned vertices, `T x V x 3`.
    #[pyo3(signature = (spec = None))]
    fn vertices(&self, spec: Option<&PyBodySpec>) -> PyResult<Track> {
        clip_vertices(&self.inner, &spec_or_default(spec)).map_err(err)
    }

    fn without_root(&self) -> Self {
        PyMotionClip {
            inner: self.inner.without_root(),
        }
    }

    /// Renders the stick figure under a weak-perspective camera.
    #[pyo3(signature = (scale = 0.9, center = [0.0, 0.1], size = 64, spec = None))]
    fn render(&self, scale: f64, center: [f64; 2], size: usize, spec: Option<&PyBodySpec>) -> PyResult<PyVideoClip> {
        let cam = CameraParams::new(scale, center).map_err(err)?;
        let opts = RenderOptions {
            size,
            ..RenderOptions::default()
        };
        Ok(PyVideoClip {
            inner: render_clip(&self.inner, &spec_or_default(spec), &cam, &opts).map_err(err)?,
        })
    }
}

#[pyclass(name = "VideoClip", from_py_object)]
#[derive(Clone)]
struct PyVideoClip {
    inner: VideoClip,
}

#[pymethods]
impl PyVideoClip {
    #[staticmethod]
    fn load(dir: PathBuf) -> PyResult<Self> {
        Ok(PyVideoClip {
            inner: VideoClip::read_dir(dir).map_err(err)?,
        })
    }

    fn save(&self, dir: PathBuf) -> PyResult<()> {
        self.inner.write_dir(dir).map_err(err)
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    /// Frame `t` as rows of intensities in `[0, 1]`.
    fn frame(&self, t: usize) -> PyResult<Vec<Vec<f64>>> {
        let f = self
            .inner
            .frames
            .get(t)
            .ok_or_else(|| PyValueError::new_err(format!("frame {t} out of range")))?;
        Ok(f.data.chunks(f.width).map(|r| r.to_vec()).collect())
    }

    #[getter]
    fn keypoints(&self) -> Vec<Vec<[f64; 2]>> {
        self.inner.keypoints.points.clone()
    }

    #[getter]
    fn confidence(&self) -> Vec<Vec<f64>> {
        self.inner.keypoints.confidence.clone()
    }

    /// `(scale, (cx, cy))` of the rendering camera, if known.
    #[getter]
    fn camera(&self) -> Option<(f64, [f64; 2])> {
        self.inner.camera_gt.map(|c| (c.s, c.c))
    }
}

#[pyclass(name = "MotionPrior", unsendable)]
struct PyMotionPrior {
    inner: MotionPrior,
}

#[pymethods]
impl PyMotionPrior {
    /// Freshly initialised prior with statistics fitted on `clips`.
    #[new]
    #[pyo3(signature = (clips, latent_dim = 256, n_layers = 4, n_heads = 4, ff_dim = 512, seed = 0))]
    fn new(
        clips: Vec<PyMotionClip>,
        latent_dim: usize,
        n_layers: usize,
        n_heads: usize,
        ff_dim: usize,
        seed: u64,
    ) -> PyResult<Self> {
        let clips: Vec<MotionClip> = clips.into_iter().map(|c| c.inner).collect();
        let clip_len = clips.first().map_or(16, |c| c.len());
        let cfg = PriorConfig {
            latent_dim,
            n_layers,
            n_heads,
            ff_dim,
            clip_len,
            init_seed: seed,
            ..PriorConfig::default()
        };
        let stats = Normalizer::fit(&clips).map_err(err)?;
        Ok(PyMotionPrior {
            inner: MotionPrior::new(cfg, stats, &Device::Cpu, DType::F64).map_err(err)?,
        })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PyMotionPrior {
            inner: MotionPrior::load(path, &Device::Cpu, DType::F64).map_err(err)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(path).map_err(err)
    }

    #[getter]
    fn latent_dim(&self) -> usize {
        self.inner.config.latent_dim
    }

    #[getter]
    fn clip_len(&self) -> usize {
        self.inner.config.clip_len
    }

    /// SHA-256 over the generator weights.
    fn generator_digest(&self) -> String {
        self.inner.generator_digest()
    }

    /// Posterior `(mu, log_var)` of a clip.
    fn encode(&self, clip: &PyMotionClip) -> PyResult<(Vec<f64>, Vec<f64>)> {
        let g = self.inner.encode(&clip.inner).map_err(err)?;
        Ok((g.mu, g.log_var))
    }

    fn decode(&self, z: Vec<f64>) -> PyResult<PyMotionClip> {
        if z.len() != self.inner.config.latent_dim {
            return Err(PyValueError::new_err(format!(
                "latent code has {} entries, prior expects {}",
                z.len(),
                self.inner.config.latent_dim
            )));
        }
        Ok(PyMotionClip {
            inner: self.inner.decode(&LatentCode { z }).map_err(err)?,
        })
    }

    fn rectify(&self, clip: &PyMotionClip) -> PyResult<PyMotionClip> {
        Ok(PyMotionClip {
            inner: self.inner.rectify(&clip.inner).map_err(err)?,
        })
    }

    /// Adds noise in normalized units using this prior's statistics.
    #[pyo3(signature = (clip, std = 2.0, seed = 0))]
    fn add_noise(&self, clip: &PyMotionClip, std: f64, seed: u64) -> PyResult<PyMotionClip> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(PyMotionClip {
            inner: add_noise(&clip.inner, std, self.inner.normalizer(), &mut rng).map_err(err)?,
        })
    }

    #[pyo3(signature = (a, b, steps = 10))]
    fn interpolate(&self, a: &PyMotionClip, b: &PyMotionClip, steps: usize) -> PyResult<Vec<PyMotionClip>> {
        let za = self.inner.encode(&a.inner).map_err(err)?.mean();
        let zb = self.inner.encode(&b.inner).map_err(err)?.mean();
        Ok(interpolate_latent(&self.inner, &za, &zb, steps)
            .map_err(err)?
            .into_iter()
            .map(|inner| PyMotionClip { inner })
            .collect())
    }

    #[pyo3(signature = (n, sigma = 1.0, seed = 0, same_seed = false))]
    fn sample(&self, n: usize, sigma: f64, seed: u64, same_seed: bool) -> PyResult<Vec<PyMotionClip>> {
        Ok(sample_clips(&self.inner, n, sigma, seed, same_seed)
            .map_err(err)?
            .into_iter()
            .map(|inner| PyMotionClip { inner })
            .collect())
    }

    /// Diversity report (APD, clip-APD, local-APD at sigma 1 and 5) as a dict.
    #[pyo3(signature = (n = 50, sigma = 1.0, seed = 0, same_seed = false))]
    fn synthesize(&self, py: Python<'_>, n: usize, sigma: f64, seed: u64, same_seed: bool) -> PyResult<Py<PyAny>> {
        let (_, rep) = synthesize(&self.inner, &BodySpec::default(), n, sigma, seed, same_seed).map_err(err)?;
        to_py_json(py, &serde_json::to_value(rep).map_err(|e| PyValueError::new_err(e.to_string()))?)
    }
}

#[pyclass(name = "VideoEncoder", unsendable)]
struct PyVideoEncoder {
    inner: VideoEncoder,
}

#[pymethods]
impl PyVideoEncoder {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PyVideoEncoder {
            inner: VideoEncoder::load(path, &Device::Cpu, DType::F64).map_err(err)?,
        })
    }

    /// Captured clip and camera `(scale, (cx, cy))` through the posterior mean.
    fn capture(&self, video: &PyVideoClip, prior: &PyMotionPrior) -> PyResult<(PyMotionClip, (f64, [f64; 2]))> {
        let cap = self.inner.capture(&video.inner, &prior.inner).map_err(err)?;
        Ok((PyMotionClip { inner: cap.clip }, (cap.camera.s, cap.camera.c)))
    }
}

/// Trains a prior on `clips`. `config` is an optional TrainConfig JSON string.
#[pyfunction]
#[pyo3(signature = (clips, config = None))]
fn train(py: Python<'_>, clips: Vec<PyMotionClip>, config: Option<&str>) -> PyResult<(PyMotionPrior, Py<PyAny>)> {
    let mut cfg = match config {
        Some(text) => TrainConfig::from_json(text, "<python>").map_err(err)?,
        None => TrainConfig::default(),
    };
    cfg.stage = Stage::Prior;
    let train: Vec<MotionClip> = clips.into_iter().map(|c| c.inner).collect();
    let stats = Normalizer::fit(&train).map_err(err)?;
    let data = PriorData {
        train,
        val: vec![],
        stats,
    };
    let (prior, report) = train_prior(&cfg, &data, &BodySpec::default(), None).map_err(err)?;
    let report = serde_json::to_value(report).map_err(|e| PyValueError::new_err(e.to_string()))?;
    Ok((PyMotionPrior { inner: prior }, to_py_json(py, &report)?))
}

#[pyfunction]
fn rot6d_to_matrix(x: [f64; 6]) -> PyResult<[[f64; 3]; 3]> {
    let m = rotation::rot6d_to_matrix(&x).map_err(err)?;
    Ok(std::array::from_fn(|i| std::array::from_fn(|j| m[(i, j)])))
}

#[pyfunction]
fn matrix_to_rot6d(m: [[f64; 3]; 3]) -> PyResult<[f64; 6]> {
    let m = nalgebra::Matrix3::from_fn(|i, j| m[i][j]);
    rotation::matrix_to_rot6d(&m).map_err(err)
}

#[pyfunction]
fn mpjpe(pred: Track, gt: Track) -> PyResult<f64> {
    metrics::mpjpe(&track(pred)?, &track(gt)?).map_err(err)
}

#[pyfunction]
fn pa_mpjpe(pred: Track, gt: Track) -> PyResult<f64> {
    metrics::pa_mpjpe(&track(pred)?, &track(gt)?).map_err(err)
}

#[pyfunction]
#[pyo3(signature = (pred, gt, fps = 25.0))]
fn accel_error(pred: Track, gt: Track, fps: f64) -> PyResult<f64> {
    metrics::accel_error(&track(pred)?, &track(gt)?, fps).map_err(err)
}

#[pyfunction]
fn apd(samples: Vec<Track>) -> PyResult<f64> {
    metrics::apd(&tracks(samples)?).map_err(err)
}

#[pyfunction]
fn clip_apd(samples: Vec<Track>) -> PyResult<f64> {
    metrics::clip_apd(&tracks(samples)?).map_err(err)
}

#[pyfunction]
fn local_apd(samples: Vec<Track>) -> PyResult<f64> {
    metrics::local_apd(&tracks(samples)?).map_err(err)
}

/// MPJPE, PA-MPJPE, MPVPE and ACCEL between two clips, as a dict.
#[pyfunction]
fn evaluate(py: Python<'_>, pred: &PyMotionClip, gt: &PyMotionClip) -> PyResult<Py<PyAny>> {
    let rep = evaluate_clips(&pred.inner, &gt.inner, &BodySpec::default()).map_err(err)?;
    to_py_json(py, &serde_json::to_value(rep).map_err(|e| PyValueError::new_err(e.to_string()))?)
}

#[pymodule]
fn vmprior(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyBodySpec>()?;
    m.add_class::<PyMotionClip>()?;
    m.add_class::<PyVideoClip>()?;
    m.add_class::<PyMotionPrior>()?;
    m.add_class::<PyVideoEncoder>()?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(rot6d_to_matrix, m)?)?;
    m.add_function(wrap_pyfunction!(matrix_to_rot6d, m)?)?;
    m.add_function(wrap_pyfunction!(mpjpe, m)?)?;
    m.add_function(wrap_pyfunction!(pa_mpjpe, m)?)?;
    m.add_function(wrap_pyfunction!(accel_error, m)?)?;
    m.add_function(wrap_pyfunction!(apd, m)?)?;
    m.add_function(wrap_pyfunction!(clip_apd, m)?)?;
    m.add_function(wrap_pyfunction!(local_apd, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
