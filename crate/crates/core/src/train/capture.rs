use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use candle_core::Tensor;
use candle_nn::Optimizer;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::{Stage, TrainConfig};
use super::prior::adam;
use super::report::{EpochRecord, RunReport};
use super::{mean_values, nan_abort};
use crate::batch::MotionBatch;
use crate::body::{clip_joints, forward_kinematics, project_weak_perspective, BodySpec, BodyTensors, MotionClip};
use crate::datagen::derive_seed;
use crate::error::{Result, VmpError};
use crate::losses::{loss_cap, CameraTensors, KeypointTensors, CONFIDENCE_THRESHOLD};
use crate::metrics::{mpjpe, JointTrack};
use crate::prior::MotionPrior;
use crate::video::{VideoClip, VideoEncoder};

/// Video clips paired with their ground-truth motion.
pub struct CaptureData {
    pub train: Vec<(MotionClip, VideoClip)>,
    pub val: Vec<(MotionClip, VideoClip)>,
}

/// Mean 2D distance between keypoints and the captured, root-centred
/// skeleton under the predicted camera, over joints above the confidence
/// threshold.
pub fn reprojection_error(
    enc: &VideoEncoder,
    prior: &MotionPrior,
    videos: &[&VideoClip],
    spec: &BodySpec,
) -> Result<f64> {
    let (mut sum, mut count) = (0.0, 0usize);
    for v in videos {
        let cap = enc.capture(v, prior)?;
        let centred = cap.clip.without_root();
        for (t, frame) in centred.frames().enumerate() {
            let uv = project_weak_perspective(&forward_kinematics(&frame, spec)?, &cap.camera);
            for (j, p) in uv.iter().enumerate() {
                if v.keypoints.confidence[t][j] > CONFIDENCE_THRESHOLD {
                    let q = v.keypoints.points[t][j];
                    sum += ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt();
                    count += 1;
                }
            }
        }
    }
    Ok(if count == 0 { 0.0 } else { sum / count as f64 })
}

/// Root-relative MPJPE of deterministic capture per clip.
pub fn capture_mpjpe(
    enc: &VideoEncoder,
    prior: &MotionPrior,
    pairs: &[(MotionClip, VideoClip)],
    spec: &BodySpec,
) -> Result<Vec<f64>> {
    pairs
        .iter()
        .map(|(gt, v)| {
            let cap = enc.capture(v, prior)?;
            mpjpe(
                &JointTrack::new(clip_joints(&cap.clip, spec)?)?,
                &JointTrack::new(clip_joints(gt, spec)?)?,
            )
        })
        .collect()
}

/// Squared log-scale and center error against ground-truth cameras, mean over clips.
fn camera_term(pred: &CameraTensors, gt: &CameraTensors) -> Result<Tensor> {
    let ds = (pred.scale.log()? - gt.scale.log()?)?.sqr()?;
    let dc = (&pred.center - &gt.center)?.sqr()?.sum(1)?;
    Ok((ds + dc)?.mean(0)?)
}

struct Batch<'a> {
    gt: MotionBatch,
    videos: Vec<&'a VideoClip>,
    keypoints: KeypointTensors,
    cameras: Option<CameraTensors>,
}

/// Stage II: trains the video encoder against the frozen prior generator.
///
/// With `fine_tune` on, the generator is also updated at `fine_tune_lr`
/// during the last `fine_tune_epochs` epochs. The prior's encoder is never
/// touched.
pub fn train_capture(
    cfg: &TrainConfig,
    prior: &MotionPrior,
    data: &CaptureData,
    spec: &BodySpec,
    out_dir: Option<&Path>,
) -> Result<(VideoEncoder, RunReport)> {
    if cfg.stage != Stage::Capture {
        return Err(VmpError::Invalid("train_capture needs stage = capture".into()));
    }
    cfg.validate()?;
    if data.train.is_empty() {
        return Err(VmpError::Invalid("no training videos".into()));
    }
    let started = Instant::now();
    let (device, dtype) = (prior.device().clone(), prior.dtype());
    let mut vcfg = cfg.video.clone();
    vcfg.latent_dim = prior.config.latent_dim;
    vcfg.clip_len = prior.config.clip_len;
    vcfg.init_seed = derive_seed(cfg.seed, 2);
    let enc = VideoEncoder::new(vcfg, &device, dtype)?;
    let body = BodyTensors::new(spec, &device, dtype)?;
    let mut enc_opt = adam(enc.vars(), cfg.lr)?;
    let mut gen_opt = adam(prior.generator_vars(), cfg.fine_tune_lr)?;
    let fine_tune_start = cfg.fine_tune_start();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 3));

    let batches: Vec<Batch> = data
        .train
        .chunks(cfg.batch_size)
        .map(|chunk| {
            let clips: Vec<MotionClip> = chunk.iter().map(|(c, _)| c.clone()).collect();
            let videos: Vec<&VideoClip> = chunk.iter().map(|(_, v)| v).collect();
            let kps: Vec<_> = videos.iter().map(|v| &v.keypoints).collect();
            let cams: Option<Vec<_>> = videos.iter().map(|v| v.camera_gt).collect();
            Ok(Batch {
                gt: MotionBatch::from_clips(&clips, &device, dtype)?,
                keypoints: KeypointTensors::from_keypoints(&kps, &device, dtype)?,
                cameras: cams.map(|c| CameraTensors::from_cameras(&c, &device, dtype)).transpose()?,
                videos,
            })
        })
        .collect::<Result<_>>()?;
    let eval_pairs = if data.val.is_empty() { &data.train } else { &data.val };
    let eval_videos: Vec<&VideoClip> = eval_pairs.iter().map(|(_, v)| v).collect();
    let train_videos: Vec<&VideoClip> = data.train.iter().map(|(_, v)| v).collect();

    let digest_before = prior.generator_digest();
    let reproj_init = reprojection_error(&enc, prior, &train_videos, spec)?;
    let mut epochs = Vec::with_capacity(cfg.epochs);
    let mut steps = 0;
    let total_steps = cfg.epochs * batches.len();
    let mut best: Option<(f64, usize)> = None;
    for epoch in 0..cfg.epochs {
        let tune = fine_tune_start.is_some_and(|s| epoch >= s);
        let mut vals = Vec::with_capacity(batches.len());
        let mut cam_sum = 0.0;
        for b in &batches {
            enc_opt.set_learning_rate(cfg.lr_schedule.lr_at(cfg.lr, steps, total_steps));
            let out = enc.forward(&b.videos)?;
            let z = out.posterior.reparameterize(&mut rng)?;
            let pred = prior.decode_batch(&z)?;
            let terms = loss_cap(Some(&b.gt), &pred, &out.posterior, &b.keypoints, &out.camera, &body, &cfg.weights)?;
            let v = terms.values()?;
            let mut objective = terms.total.clone();
            if let (Some(gt_cam), true) = (&b.cameras, cfg.camera_weight > 0.0) {
                let cam = camera_term(&out.camera, gt_cam)?;
                cam_sum += cam.to_scalar::<f64>()? * b.videos.len() as f64;
                objective = (objective + (cam * cfg.camera_weight)?)?;
            }
            if !v.is_finite() {
                let mut ck = enc.to_checkpoint()?;
                ck.kind = "vmp-capture-snapshot".into();
                return Err(nan_abort(out_dir, epoch, steps, &v, &ck));
            }
            let grads = objective.backward()?;
            enc_opt.step(&grads)?;
            if tune {
                gen_opt.step(&grads)?;
            }
            steps += 1;
            vals.push((v, b.videos.len()));
        }
        let mut record = EpochRecord {
            epoch,
            train: mean_values(&vals),
            camera: (cfg.camera_weight > 0.0).then(|| cam_sum / data.train.len() as f64),
            val_total: None,
            generator_digest: Some(prior.generator_digest()),
        };
        let last = epoch + 1 == cfg.epochs;
        if cfg.eval_every > 0 && ((epoch + 1) % cfg.eval_every == 0 || last) {
            let val = reprojection_error(&enc, prior, &eval_videos, spec)?;
            record.val_total = Some(val);
            if best.is_none_or(|(b, _)| val < b) {
                best = Some((val, epoch));
                if let Some(dir) = out_dir {
                    enc.save(dir.join("best.ckpt"))?;
                }
            }
        }
        if let Some(dir) = out_dir {
            if last || (cfg.checkpoint_every > 0 && (epoch + 1) % cfg.checkpoint_every == 0) {
                enc.save(dir.join("last.ckpt"))?;
            }
        }
        epochs.push(record);
    }

    let mp = capture_mpjpe(&enc, prior, &data.train, spec)?;
    let mut final_metrics = BTreeMap::new();
    final_metrics.insert("reproj_init".into(), reproj_init);
    final_metrics.insert("reproj_final".into(), reprojection_error(&enc, prior, &train_videos, spec)?);
    final_metrics.insert("train_capture_mpjpe_mean".into(), mp.iter().sum::<f64>() / mp.len() as f64);
    final_metrics.insert("train_capture_mpjpe_max".into(), mp.iter().cloned().fold(0.0, f64::max));
    let mut scale_err = 0.0f64;
    for (_, v) in &data.train {
        if let Some(gt) = v.camera_gt {
            let cap = enc.capture(v, prior)?;
            scale_err = scale_err.max((cap.camera.s - gt.s).abs() / gt.s);
        }
    }
    final_metrics.insert("camera_scale_rel_err_max".into(), scale_err);
    let report = RunReport {
        stage: Stage::Capture,
        seed: cfg.seed,
        config_digest: cfg.digest()?,
        steps,
        epochs,
        final_metrics,
        best_epoch: best.map(|(_, e)| e),
        prior_digest_before: Some(digest_before),
        prior_digest_after: Some(prior.generator_digest()),
        wall_clock_s: (!cfg.deterministic).then(|| started.elapsed().as_secs_f64()),
    };
    if let Some(dir) = out_dir {
        enc.save(dir.join("capture.ckpt"))?;
        if fine_tune_start.is_some() {
            prior.save(dir.join("prior_finetuned.ckpt"))?;
        }
        report.write(dir)?;
    }
    Ok((enc, report))
}
