use candle_core::{DType, Device, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use vmp_core::batch::MotionBatch;
use vmp_core::body::{BodySpec, BodyTensors, MotionClip, PARAM_DIM};
use vmp_core::datagen::{gen_motion_clip, MotionFamily, MotionFamilySpec};
use vmp_core::losses::{loss_vmp, LossWeights};
use vmp_core::normalize::Normalizer;
use vmp_core::prior::{adain, GaussianParams, LatentCode, MotionPrior, PriorConfig};

fn clips(t: usize) -> Vec<MotionClip> {
    (0..2)
        .map(|i| {
            let fam = if i == 0 { MotionFamily::Oscillate } else { MotionFamily::DriftStatic };
            let mut c = gen_motion_clip(&MotionFamilySpec {
                clip_len: t,
                ..MotionFamilySpec::new(fam, 20 + i)
            })
            .unwrap();
            c.has_root = i == 1;
            c
        })
        .collect()
}

fn tiny(t: usize) -> PriorConfig {
    PriorConfig {
        latent_dim: 16,
        n_layers: 1,
        n_heads: 2,
        ff_dim: 16,
        mapping_depth: 2,
        clip_len: t,
        init_seed: 9,
        ..PriorConfig::default()
    }
}

#[test]
fn shapes_follow_config() {
    for (latent, t) in [(16, 4), (32, 6)] {
        let data = clips(t);
        let cfg = PriorConfig { latent_dim: latent, ..tiny(t) };
        let prior = MotionPrior::new(cfg, Normalizer::fit(&data).unwrap(), &Device::Cpu, DType::F64).unwrap();
        let batch = MotionBatch::from_clips(&data, &Device::Cpu, DType::F64).unwrap();
        let g = prior.encode_batch(&batch).unwrap();
        assert_eq!(g.mu.dims(), &[2, latent]);
        assert_eq!(g.log_var.dims(), &[2, latent]);
        let out = prior.decode_params(&g.mu).unwrap();
        assert_eq!(out.dims(), &[2, t, PARAM_DIM]);
        let clip = prior.decode(&prior.encode(&data[0]).unwrap().mean()).unwrap();
        assert_eq!(clip.len(), t);
        assert!(clip.shape.iter().all(|s| s.is_finite()));
    }
}

#[test]
fn evaluation_is_deterministic_and_checkpoints_round_trip() {
    let data = clips(4);
    let stats = Normalizer::fit(&data).unwrap();
    let a = MotionPrior::new(tiny(4), stats.clone(), &Device::Cpu, DType::F64).unwrap();
    let b = MotionPrior::new(tiny(4), stats, &Device::Cpu, DType::F64).unwrap();
    assert_eq!(a.digest(), b.digest());
    let z = a.encode(&data[0]).unwrap().mean();
    assert_eq!(a.decode(&z).unwrap(), b.decode(&z).unwrap());
    assert_eq!(a.rectify(&data[1]).unwrap(), a.rectify(&data[1]).unwrap());

    let dir = tempfile::tempdir().unwrap();
    a.save(dir.path().join("p.ckpt")).unwrap();
    let c = MotionPrior::load(dir.path().join("p.ckpt"), &Device::Cpu, DType::F64).unwrap();
    assert_eq!(c.digest(), a.digest());
    assert_eq!(c.normalizer(), a.normalizer());
    assert_eq!(c.decode(&z).unwrap(), a.decode(&z).unwrap());
}

#[test]
fn kl_nonnegative_and_zero_only_at_standard_normal() {
    assert_eq!(GaussianParams::standard(8).kl(), 0.0);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..1000 {
        let mu: Vec<f64> = (0..8).map(|_| rng.random_range(-2.0..2.0)).collect();
        let lv: Vec<f64> = (0..8).map(|_| rng.random_range(-2.0..2.0)).collect();
        assert!(GaussianParams::new(mu, lv).unwrap().kl() > 0.0);
    }
    let data = clips(4);
    let prior = MotionPrior::new(tiny(4), Normalizer::fit(&data).unwrap(), &Device::Cpu, DType::F64).unwrap();
    for c in &data {
        assert!(prior.encode(c).unwrap().kl() >= 0.0);
    }
}

#[test]
fn adain_output_has_target_statistics() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (b, t, c) = (2, 6, 5);
    let x: Vec<f64> = (0..b * t * c).map(|_| rng.random_range(-3.0..3.0)).collect();
    let gamma: Vec<f64> = (0..b * c).map(|_| rng.random_range(0.5..2.0)).collect();
    let delta: Vec<f64> = (0..b * c).map(|_| rng.random_range(-1.0..1.0)).collect();
    let dev = Device::Cpu;
    let out = adain(
        &Tensor::from_vec(x, (b, t, c), &dev).unwrap(),
        &Tensor::from_vec(gamma.clone(), (b, c), &dev).unwrap(),
        &Tensor::from_vec(delta.clone(), (b, c), &dev).unwrap(),
    )
    .unwrap();
    let v: Vec<Vec<Vec<f64>>> = out.to_vec3().unwrap();
    for i in 0..b {
        for k in 0..c {
            let col: Vec<f64> = (0..t).map(|s| v[i][s][k]).collect();
            let mean = col.iter().sum::<f64>() / t as f64;
            let std = (col.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / t as f64).sqrt();
            assert!((mean - delta[i * c + k]).abs() < 1e-10);
            // Epsilon inside the square root shrinks the std very slightly.
            assert!((std - gamma[i * c + k]).abs() < 1e-4 * gamma[i * c + k]);
        }
    }
}

#[test]
fn sample_decode_with_sigma_zero_is_origin() {
    let data = clips(4);
    let prior = MotionPrior::new(tiny(4), Normalizer::fit(&data).unwrap(), &Device::Cpu, DType::F64).unwrap();
    let origin = prior.decode(&LatentCode { z: vec![0.0; 16] }).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let z = vmp_core::prior::sample_prior(&mut rng, 16, 1e-300).unwrap();
    assert!(z.z.iter().all(|v| v.abs() < 1e-250));
    assert_eq!(prior.decode(&z).unwrap(), origin);
}

/// Loss gradients with respect to every weight tensor against central
/// differences, on a fixed reparameterization draw.
#[test]
fn full_pipeline_weight_gradients() {
    let t = 4;
    let data = clips(t);
    let spec = BodySpec::default();
    let dev = Device::Cpu;
    let prior = MotionPrior::new(tiny(t), Normalizer::fit(&data).unwrap(), &dev, DType::F64).unwrap();
    let body = BodyTensors::new(&spec, &dev, DType::F64).unwrap();
    let gt = MotionBatch::from_clips(&data, &dev, DType::F64).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let eps = Tensor::from_vec((0..32).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<f64>>(), (2, 16), &dev).unwrap();
    let w = LossWeights { lambda_kl: 0.1, ..LossWeights::default() };
    let loss = || {
        let g = prior.encode_batch(&gt).unwrap();
        let z = (&g.mu + (&g.log_var * 0.5).unwrap().exp().unwrap() * &eps).unwrap();
        let pred = prior.decode_batch(&z).unwrap();
        loss_vmp(&gt, &pred, &g, &body, &w).unwrap().total
    };
    let grads = loss().backward().unwrap();
    let names: Vec<String> = prior.store().iter().map(|(n, _)| n.clone()).collect();
    assert!(names.iter().any(|n| n.starts_with("encoder.")));
    assert!(names.iter().any(|n| n.starts_with("generator.")));
    let h = 1e-5;
    let mut worst = (0.0f64, String::new());
    for name in &names {
        let var = prior.store().get(name).unwrap().clone();
        let base: Vec<f64> = var.flatten_all().unwrap().to_vec1().unwrap();
        let dims = var.dims().to_vec();
        let g: Vec<f64> = grads
            .get(var.as_tensor())
            .map(|g| g.flatten_all().unwrap().to_vec1().unwrap())
            .unwrap_or_else(|| vec![0.0; base.len()]);
        for _ in 0..3 {
            let i = rng.random_range(0..base.len());
            let eval = |d: f64| {
                let mut v = base.clone();
                v[i] += d;
                prior.store().set(name, &Tensor::from_vec(v, dims.as_slice(), &dev).unwrap()).unwrap();
                loss().to_scalar::<f64>().unwrap()
            };
            let fd = (eval(h) - eval(-h)) / (2.0 * h);
            prior.store().set(name, &Tensor::from_vec(base.clone(), dims.as_slice(), &dev).unwrap()).unwrap();
            // Relative to the loss scale so near-zero entries do not dominate.
            let err = (fd - g[i]).abs() / fd.abs().max(g[i].abs()).max(1e-3);
            if err > worst.0 {
                worst = (err, format!("{name}[{i}] fd {fd} analytic {}", g[i]));
            }
        }
    }
    assert!(worst.0 < 1e-3, "{}", worst.1);
}
