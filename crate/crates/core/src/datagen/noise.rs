use rand::Rng;
use rand_distr::StandardNormal;

use crate::body::{MotionClip, NUM_BETAS, PARAM_DIM};
use crate::error::{Result, VmpError};
use crate::normalize::Normalizer;

/// Adds `std`-scaled Gaussian noise in normalized units and maps back.
///
/// Root and pose dimensions get an independent draw per frame. The shape
/// vector is shared by all frames, so it gets a single draw per clip.
pub fn add_noise<R: Rng + ?Sized>(
    clip: &MotionClip,
    std: f64,
    stats: &Normalizer,
    rng: &mut R,
) -> Result<MotionClip> {
    if !(std >= 0.0) || !std.is_finite() {
        return Err(VmpError::Invalid(format!("noise std must be >= 0, got {std}")));
    }
    stats.validate()?;
    let mut params = clip.to_params();
    let shape_start = PARAM_DIM - NUM_BETAS;
    let shape_noise: [f64; NUM_BETAS] = std::array::from_fn(|_| rng.sample(StandardNormal));
    for row in params.chunks_exact_mut(PARAM_DIM) {
        for (d, v) in row.iter_mut().enumerate() {
            let eps: f64 = if d < shape_start {
                rng.sample(StandardNormal)
            } else {
                shape_noise[d - shape_start]
            };
            *v += std * eps * stats.std[d];
        }
    }
    let mut out = MotionClip::from_params(&params, clip.fps, clip.has_root)?;
    // Averaging identical shape rows can drift by an ulp; keep it exact.
    for (d, s) in out.shape.iter_mut().enumerate() {
        *s = clip.shape[d] + std * shape_noise[d] * stats.std[shape_start + d];
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{gen_motion_clip, MotionFamily, MotionFamilySpec};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn clip() -> MotionClip {
        gen_motion_clip(&MotionFamilySpec::new(MotionFamily::Oscillate, 1)).unwrap()
    }

    #[test]
    fn zero_std_is_identity() {
        let c = clip();
        let stats = Normalizer::fit(std::slice::from_ref(&c)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(add_noise(&c, 0.0, &stats, &mut rng).unwrap(), c);
    }

    #[test]
    fn seeded_noise_reproducible() {
        let c = clip();
        let stats = Normalizer::identity();
        let a = add_noise(&c, 2.0, &stats, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = add_noise(&c, 2.0, &stats, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn negative_std_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(add_noise(&clip(), -1.0, &Normalizer::identity(), &mut rng).is_err());
    }
}
