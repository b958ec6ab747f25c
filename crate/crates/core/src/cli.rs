//! `vmp` command-line interface. Every command writes `report.json` into
//! `--out` and returns the same JSON value.

use std::path::{Path, PathBuf};

use candle_core::{DType, Device};
use clap::{Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::{json, Value};

use crate::body::{clip_joints, clip_vertices, read_body_spec, BodySpec, MotionClip, Vec3};
use crate::checkpoint::write_atomic;
use crate::datagen::{derive_seed, make_dataset, manifest_root, read_clip, write_clip, DatasetConfig, DatasetManifest, Split};
use crate::error::{Result, VmpError};
use crate::metrics::{accel_error, apd, clip_apd, local_apd, mpjpe, mpvpe_root_aligned, pa_mpjpe, JointTrack, PoseReport};
use crate::prior::{sample_prior, LatentCode, MotionPrior};
use crate::train::{train_capture, train_prior, CaptureData, PriorData, Stage, TrainConfig};
use crate::video::{interpolate_latent, VideoClip, VideoEncoder};

#[derive(Parser, Debug)]
#[command(name = "vmp", version, about = "Variational motion prior: training, synthesis and capture")]
pub struct Cli {
    /// JSON config (TrainConfig for training, DatasetConfig for gen-data).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true, default_value = "vmp-out")]
    pub out: PathBuf,
    /// Omit wall-clock fields so reruns produce identical reports.
    #[arg(long, global = true)]
    pub deterministic: bool,
    /// Body spec JSON; defaults to the built-in procedural body.
    #[arg(long, global = true)]
    pub body_spec: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic dataset with rendered videos.
    GenData,
    /// Stage I: train the motion prior.
    TrainPrior {
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Stage II: train the video encoder against a frozen prior.
    TrainCapture {
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        prior: Option<PathBuf>,
    },
    /// Sample clips from the prior and report diversity.
    Synthesize {
        #[arg(long)]
        prior: PathBuf,
        #[arg(long, default_value_t = 50)]
        n: usize,
        #[arg(long, default_value_t = 1.0)]
        sigma: f64,
        /// Use the same latent seed for every sample.
        #[arg(long)]
        same_seed: bool,
    },
    /// Decode a straight line between two encoded clips.
    Interpolate {
        #[arg(long)]
        prior: PathBuf,
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        #[arg(long, default_value_t = 10)]
        steps: usize,
        #[arg(long)]
        trace: bool,
    },
    /// One encode/decode pass to clean up a clip.
    Rectify {
        #[arg(long)]
        prior: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        trace: bool,
    },
    /// Recover motion from a video directory.
    Capture {
        #[arg(long)]
        prior: PathBuf,
        #[arg(long)]
        encoder: PathBuf,
        #[arg(long)]
        video: PathBuf,
        #[arg(long)]
        trace: bool,
    },
    /// Pose metrics between two clip files.
    Evaluate {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        trace: bool,
    },
}

/// JSON error document printed on stderr.
pub fn error_json(kind: &str, message: &str) -> Value {
    json!({"error": {"kind": kind, "message": message}})
}

fn body_spec(cli: &Cli) -> Result<BodySpec> {
    match &cli.body_spec {
        Some(p) => read_body_spec(p),
        None => Ok(BodySpec::default()),
    }
}

fn read_json_file(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| VmpError::io(path, e))
}

fn train_config(cli: &Cli) -> Result<TrainConfig> {
    let mut cfg = match &cli.config {
        Some(p) => TrainConfig::from_json(&read_json_file(p)?, &p.display().to_string())?,
        None => TrainConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    cfg.deterministic |= cli.deterministic;
    Ok(cfg)
}

fn load_prior(path: &Path) -> Result<MotionPrior> {
    MotionPrior::load(path, &Device::Cpu, DType::F64)
}

fn write_report(out: &Path, report: &Value) -> Result<()> {
    write_atomic(&out.join("report.json"), serde_json::to_string_pretty(report)?.as_bytes())
}

/// `clip,frame,joint,x,y,z` rows for the given clips.
pub fn joint_trace_csv(clips: &[(String, &MotionClip)], spec: &BodySpec) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let err = |e: csv::Error| VmpError::Invalid(format!("csv: {e}"));
    w.write_record(["clip", "frame", "joint", "x", "y", "z"]).map_err(err)?;
    for (name, clip) in clips {
        for (t, frame) in clip_joints(clip, spec)?.iter().enumerate() {
            for (j, p) in frame.iter().enumerate() {
                w.write_record([
                    name.clone(),
                    t.to_string(),
                    j.to_string(),
                    p[0].to_string(),
                    p[1].to_string(),
                    p[2].to_string(),
                ])
                .map_err(err)?;
            }
        }
    }
    let bytes = w.into_inner().map_err(|e| VmpError::Invalid(format!("csv: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

fn write_trace(out: &Path, clips: &[(String, &MotionClip)], spec: &BodySpec) -> Result<()> {
    write_atomic(&out.join("joints.csv"), joint_trace_csv(clips, spec)?.as_bytes())
}

fn track(clip: &MotionClip, spec: &BodySpec) -> Result<JointTrack> {
    JointTrack::new(clip_joints(clip, spec)?)
}

/// Pose metrics of `pred` against `gt`. Vertex error is measured after
/// removing each clip's own root joint per frame.
pub fn evaluate_clips(pred: &MotionClip, gt: &MotionClip, spec: &BodySpec) -> Result<PoseReport> {
    let (pj, gj) = (track(pred, spec)?, track(gt, spec)?);
    let roots = |t: &JointTrack| -> Vec<Vec3> { t.positions.iter().map(|f| f[0]).collect() };
    let pv = JointTrack::new(clip_vertices(pred, spec)?)?;
    let gv = JointTrack::new(clip_vertices(gt, spec)?)?;
    Ok(PoseReport {
        mpjpe: mpjpe(&pj, &gj)?,
        pa_mpjpe: pa_mpjpe(&pj, &gj)?,
        mpvpe: mpvpe_root_aligned(&pv, &gv, &roots(&pj), &roots(&gj))?,
        accel: if gt.len() >= 3 { accel_error(&pj, &gj, gt.fps)? } else { 0.0 },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SynthesisReport {
    pub n: usize,
    pub sigma: f64,
    pub seed: u64,
    pub apd: f64,
    pub clip_apd: f64,
    pub apd_s1: f64,
    pub apd_s5: f64,
    pub local_apd_s1: f64,
    pub local_apd_s5: f64,
}

/// Decodes `n` prior samples at `sigma`. Sample `i` draws its latent from
/// a seed derived from `(seed, i)`, or from `seed` itself when `same_seed`.
pub fn sample_clips(prior: &MotionPrior, n: usize, sigma: f64, seed: u64, same_seed: bool) -> Result<Vec<MotionClip>> {
    let zs: Vec<LatentCode> = (0..n)
        .map(|i| {
            let s = if same_seed { seed } else { derive_seed(seed, i as u64) };
            sample_prior(&mut ChaCha8Rng::seed_from_u64(s), prior.config.latent_dim, sigma)
        })
        .collect::<Result<_>>()?;
    zs.iter().map(|z| prior.decode(z)).collect()
}

pub fn synthesize(
    prior: &MotionPrior,
    spec: &BodySpec,
    n: usize,
    sigma: f64,
    seed: u64,
    same_seed: bool,
) -> Result<(Vec<MotionClip>, SynthesisReport)> {
    if n < 2 {
        return Err(VmpError::Invalid(format!("synthesize needs n >= 2 for diversity metrics, got {n}")));
    }
    let tracks = |clips: &[MotionClip]| -> Result<Vec<JointTrack>> { clips.iter().map(|c| track(c, spec)).collect() };
    let clips = sample_clips(prior, n, sigma, seed, same_seed)?;
    let main = tracks(&clips)?;
    let s1 = tracks(&sample_clips(prior, n, 1.0, seed, same_seed)?)?;
    let s5 = tracks(&sample_clips(prior, n, 5.0, seed, same_seed)?)?;
    let report = SynthesisReport {
        n,
        sigma,
        seed,
        apd: apd(&main)?,
        clip_apd: clip_apd(&main)?,
        apd_s1: apd(&s1)?,
        apd_s5: apd(&s5)?,
        local_apd_s1: local_apd(&s1)?,
        local_apd_s5: local_apd(&s5)?,
    };
    Ok((clips, report))
}

/// Mean joint displacement between consecutive clips of a sequence.
pub fn step_displacements(clips: &[MotionClip], spec: &BodySpec) -> Result<Vec<f64>> {
    let tracks: Vec<JointTrack> = clips.iter().map(|c| track(c, spec)).collect::<Result<_>>()?;
    Ok(tracks
        .windows(2)
        .map(|w| {
            let (mut sum, mut n) = (0.0, 0usize);
            for (fa, fb) in w[0].positions.iter().zip(&w[1].positions) {
                for (a, b) in fa.iter().zip(fb) {
                    sum += ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt();
                    n += 1;
                }
            }
            sum / n as f64
        })
        .collect())
}

fn prior_data(manifest_path: &Path) -> Result<(DatasetManifest, PathBuf)> {
    let m = DatasetManifest::load(manifest_path)?;
    Ok((m, manifest_root(manifest_path)))
}

fn dataset_path(flag: &Option<PathBuf>, cfg: &TrainConfig) -> Result<PathBuf> {
    flag.clone()
        .or_else(|| cfg.dataset.clone())
        .ok_or_else(|| VmpError::Invalid("no dataset manifest given (--dataset or config.dataset)".into()))
}

pub fn run(cli: &Cli) -> Result<Value> {
    let out = cli.out.as_path();
    std::fs::create_dir_all(out).map_err(|e| VmpError::io(out, e))?;
    let spec = body_spec(cli)?;
    let report = match &cli.command {
        Command::GenData => {
            let mut cfg = match &cli.config {
                Some(p) => serde_json::from_str::<DatasetConfig>(&read_json_file(p)?).map_err(|e| VmpError::Parse {
                    path: p.display().to_string(),
                    msg: e.to_string(),
                })?,
                None => DatasetConfig::default(),
            };
            if let Some(s) = cli.seed {
                cfg.seed = s;
            }
            let m = make_dataset(&cfg, &spec, out)?;
            json!({
                "command": "gen-data",
                "manifest": out.join(crate::datagen::MANIFEST_FILE),
                "clips": m.entries.len(),
                "train": m.entries(Split::Train).count(),
                "val": m.entries(Split::Val).count(),
            })
        }
        Command::TrainPrior { dataset } => {
            let mut cfg = train_config(cli)?;
            cfg.stage = Stage::Prior;
            let path = dataset_path(dataset, &cfg)?;
            let (m, root) = prior_data(&path)?;
            let data = PriorData {
                train: m.load_clips(&root, Split::Train)?,
                val: m.load_clips(&root, Split::Val)?,
                stats: m.stats.clone(),
            };
            let (_, report) = train_prior(&cfg, &data, &spec, Some(out))?;
            serde_json::to_value(report)?
        }
        Command::TrainCapture { dataset, prior } => {
            let mut cfg = train_config(cli)?;
            cfg.stage = Stage::Capture;
            if let Some(p) = prior {
                cfg.prior_checkpoint = Some(p.clone());
            }
            let prior_path = cfg
                .prior_checkpoint
                .clone()
                .ok_or_else(|| VmpError::Invalid("train-capture needs --prior or config.prior_checkpoint".into()))?;
            let prior = load_prior(&prior_path)?;
            let path = dataset_path(dataset, &cfg)?;
            let (m, root) = prior_data(&path)?;
            let pairs = |split| -> Result<Vec<(MotionClip, VideoClip)>> {
                Ok(m.load_clips(&root, split)?.into_iter().zip(m.load_videos(&root, split)?).collect())
            };
            let data = CaptureData {
                train: pairs(Split::Train)?,
                val: pairs(Split::Val)?,
            };
            let (_, report) = train_capture(&cfg, &prior, &data, &spec, Some(out))?;
            serde_json::to_value(report)?
        }
        Command::Synthesize { prior, n, sigma, same_seed } => {
            let prior = load_prior(prior)?;
            let seed = cli.seed.unwrap_or(0);
            let (clips, rep) = synthesize(&prior, &spec, *n, *sigma, seed, *same_seed)?;
            for (i, c) in clips.iter().enumerate() {
                write_clip(c, out.join(format!("sample_{i:04}.mclip.json")))?;
            }
            json!({"command": "synthesize", "diversity": rep})
        }
        Command::Interpolate { prior, a, b, steps, trace } => {
            let prior = load_prior(prior)?;
            let za = prior.encode(&read_clip(a)?)?.mean();
            let zb = prior.encode(&read_clip(b)?)?.mean();
            let clips = interpolate_latent(&prior, &za, &zb, *steps)?;
            for (i, c) in clips.iter().enumerate() {
                write_clip(c, out.join(format!("step_{i:03}.mclip.json")))?;
            }
            if *trace {
                let named: Vec<(String, &MotionClip)> =
                    clips.iter().enumerate().map(|(i, c)| (format!("step_{i:03}"), c)).collect();
                write_trace(out, &named, &spec)?;
            }
            let disp = step_displacements(&clips, &spec)?;
            let max = disp.iter().cloned().fold(0.0, f64::max);
            let mean = disp.iter().sum::<f64>() / disp.len() as f64;
            json!({
                "command": "interpolate",
                "steps": steps,
                "step_displacement": disp,
                "max_step_displacement": max,
                "mean_step_displacement": mean,
            })
        }
        Command::Rectify { prior, input, trace } => {
            let prior = load_prior(prior)?;
            let noisy = read_clip(input)?;
            let fixed = prior.rectify(&noisy)?;
            write_clip(&fixed, out.join("rectified.mclip.json"))?;
            if *trace {
                write_trace(out, &[("input".into(), &noisy), ("rectified".into(), &fixed)], &spec)?;
            }
            json!({"command": "rectify", "change": evaluate_clips(&fixed, &noisy, &spec)?})
        }
        Command::Capture { prior, encoder, video, trace } => {
            let prior = load_prior(prior)?;
            let enc = VideoEncoder::load(encoder, &Device::Cpu, DType::F64)?;
            let v = VideoClip::read_dir(video)?;
            let cap = enc.capture(&v, &prior)?;
            write_clip(&cap.clip, out.join("captured.mclip.json"))?;
            if *trace {
                write_trace(out, &[("captured".into(), &cap.clip)], &spec)?;
            }
            json!({"command": "capture", "frames": cap.clip.len(), "camera": cap.camera, "kl": cap.posterior.kl()})
        }
        Command::Evaluate { pred, gt, trace } => {
            let (p, g) = (read_clip(pred)?, read_clip(gt)?);
            if *trace {
                write_trace(out, &[("pred".into(), &p), ("gt".into(), &g)], &spec)?;
            }
            json!({"command": "evaluate", "metrics": evaluate_clips(&p, &g, &spec)?})
        }
    };
    write_report(out, &report)?;
    Ok(report)
}
