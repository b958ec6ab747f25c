use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use candle_core::{DType, Device};
use candle_nn::{AdamW, Optimizer, ParamsAdamW};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::{Stage, TrainConfig};
use super::report::{EpochRecord, RunReport};
use super::{mean_values, nan_abort};
use crate::batch::MotionBatch;
use crate::body::{clip_joints, BodySpec, BodyTensors, MotionClip};
use crate::datagen::{add_noise, derive_seed};
use crate::error::{Result, VmpError};
use crate::losses::{loss_vmp, LossValues};
use crate::metrics::{mpjpe, JointTrack};
use crate::normalize::Normalizer;
use crate::prior::MotionPrior;

pub struct PriorData {
    pub train: Vec<MotionClip>,
    pub val: Vec<MotionClip>,
    pub stats: Normalizer,
}

pub fn adam(vars: Vec<candle_core::Var>, lr: f64) -> Result<AdamW> {
    Ok(AdamW::new(
        vars,
        ParamsAdamW {
            lr,
            weight_decay: 0.0,
            ..ParamsAdamW::default()
        },
    )?)
}

/// Loss of the deterministic pass (clean input, `z = mu`) over `clips`.
pub fn eval_prior(prior: &MotionPrior, clips: &[MotionClip], body: &BodyTensors, cfg: &TrainConfig) -> Result<LossValues> {
    let mut vals = Vec::new();
    for chunk in clips.chunks(cfg.batch_size) {
        let gt = MotionBatch::from_clips(chunk, prior.device(), prior.dtype())?;
        let g = prior.encode_batch(&gt)?;
        let pred = prior.decode_batch(&g.mu)?;
        vals.push((loss_vmp(&gt, &pred, &g, body, &cfg.weights)?.values()?, chunk.len()));
    }
    Ok(mean_values(&vals))
}

/// Root-relative MPJPE of `decode(encode(clip).mu)` per clip.
pub fn reconstruction_mpjpe(prior: &MotionPrior, clips: &[MotionClip], spec: &BodySpec) -> Result<Vec<f64>> {
    clips
        .iter()
        .map(|c| {
            let rec = prior.rectify(c)?;
            mpjpe(
                &JointTrack::new(clip_joints(&rec, spec)?)?,
                &JointTrack::new(clip_joints(c, spec)?)?,
            )
        })
        .collect()
}

/// Stage I: fits the motion VAE on noisy-input / clean-target pairs.
///
/// Weights are initialized from a seed derived from `cfg.seed`, which
/// overrides `cfg.prior.init_seed`.
pub fn train_prior(
    cfg: &TrainConfig,
    data: &PriorData,
    spec: &BodySpec,
    out_dir: Option<&Path>,
) -> Result<(MotionPrior, RunReport)> {
    if cfg.stage != Stage::Prior {
        return Err(VmpError::Invalid("train_prior needs stage = prior".into()));
    }
    cfg.validate()?;
    if data.train.is_empty() {
        return Err(VmpError::Invalid("no training clips".into()));
    }
    if let Some(c) = data.train.iter().chain(&data.val).find(|c| c.len() != cfg.prior.clip_len) {
        return Err(VmpError::Shape(format!(
            "prior expects {} frames, found a clip with {}",
            cfg.prior.clip_len,
            c.len()
        )));
    }
    let started = Instant::now();
    let (device, dtype) = (Device::Cpu, DType::F64);
    let mut pcfg = cfg.prior.clone();
    pcfg.init_seed = derive_seed(cfg.seed, 0);
    let prior = MotionPrior::new(pcfg, data.stats.clone(), &device, dtype)?;
    let body = BodyTensors::new(spec, &device, dtype)?;
    let mut opt = adam(prior.store().vars_with_prefix(""), cfg.lr)?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 1));
    let gt_batches: Vec<(MotionBatch, &[MotionClip])> = data
        .train
        .chunks(cfg.batch_size)
        .map(|c| Ok((MotionBatch::from_clips(c, &device, dtype)?, c)))
        .collect::<Result<_>>()?;
    let eval_set = if data.val.is_empty() { &data.train } else { &data.val };

    let mut epochs = Vec::with_capacity(cfg.epochs);
    let mut steps = 0;
    let total_steps = cfg.epochs * gt_batches.len();
    let mut best: Option<(f64, usize)> = None;
    for epoch in 0..cfg.epochs {
        let mut vals = Vec::with_capacity(gt_batches.len());
        for (gt, clips) in &gt_batches {
            opt.set_learning_rate(cfg.lr_schedule.lr_at(cfg.lr, steps, total_steps));
            let noisy: Vec<MotionClip> = clips
                .iter()
                .map(|c| add_noise(c, cfg.noise_std, &data.stats, &mut rng))
                .collect::<Result<_>>()?;
            let input = MotionBatch::from_clips(&noisy, &device, dtype)?;
            let g = prior.encode_batch(&input)?;
            let z = g.reparameterize(&mut rng)?;
            let pred = prior.decode_batch(&z)?;
            let terms = loss_vmp(gt, &pred, &g, &body, &cfg.weights)?;
            let v = terms.values()?;
            if !v.is_finite() {
                return Err(nan_abort(out_dir, epoch, steps, &v, &prior.to_checkpoint()?));
            }
            opt.backward_step(&terms.total)?;
            steps += 1;
            vals.push((v, clips.len()));
        }
        let mut record = EpochRecord {
            epoch,
            train: mean_values(&vals),
            camera: None,
            val_total: None,
            generator_digest: None,
        };
        let last = epoch + 1 == cfg.epochs;
        if cfg.eval_every > 0 && ((epoch + 1) % cfg.eval_every == 0 || last) {
            let val = eval_prior(&prior, eval_set, &body, cfg)?.total;
            record.val_total = Some(val);
            if best.is_none_or(|(b, _)| val < b) {
                best = Some((val, epoch));
                if let Some(dir) = out_dir {
                    prior.save(dir.join("best.ckpt"))?;
                }
            }
        }
        if let Some(dir) = out_dir {
            if last || (cfg.checkpoint_every > 0 && (epoch + 1) % cfg.checkpoint_every == 0) {
                prior.save(dir.join("last.ckpt"))?;
            }
        }
        epochs.push(record);
    }

    let rec = reconstruction_mpjpe(&prior, &data.train, spec)?;
    let mut final_metrics = BTreeMap::new();
    final_metrics.insert("train_recon_mpjpe_mean".into(), rec.iter().sum::<f64>() / rec.len() as f64);
    final_metrics.insert("train_recon_mpjpe_max".into(), rec.iter().cloned().fold(0.0, f64::max));
    final_metrics.insert("eval_total".into(), eval_prior(&prior, eval_set, &body, cfg)?.total);
    let report = RunReport {
        stage: Stage::Prior,
        seed: cfg.seed,
        config_digest: cfg.digest()?,
        steps,
        epochs,
        final_metrics,
        best_epoch: best.map(|(_, e)| e),
        prior_digest_before: None,
        prior_digest_after: None,
        wall_clock_s: (!cfg.deterministic).then(|| started.elapsed().as_secs_f64()),
    };
    if let Some(dir) = out_dir {
        prior.save(dir.join("prior.ckpt"))?;
        report.write(dir)?;
    }
    Ok((prior, report))
}
