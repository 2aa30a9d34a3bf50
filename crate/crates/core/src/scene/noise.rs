use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::grid::Pose;
use crate::scene::NoiseSpec;

/// Gaussian localization error on x, y (meters) and yaw (degrees).
/// Deterministic for a given `(pose, spec)`; the same seed draws the same
/// standard-normal triple at every noise level.
pub fn perturb_pose(p: &Pose, spec: &NoiseSpec) -> Pose {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let zx: f64 = rng.sample(StandardNormal);
    let zy: f64 = rng.sample(StandardNormal);
    let zr: f64 = rng.sample(StandardNormal);
    Pose::new(
        p.x + spec.sigma_p * zx,
        p.y + spec.sigma_p * zy,
        p.z,
        p.yaw + spec.sigma_r * zr,
        p.pitch,
        p.roll,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_noise_is_identity() {
        let p = Pose::new(3.0, -4.0, 0.0, 45.0, 0.0, 0.0);
        let spec = NoiseSpec { sigma_p: 0.0, sigma_r: 0.0, seed: 99 };
        assert_eq!(perturb_pose(&p, &spec), p);
    }

    #[test]
    fn deterministic_and_scaled() {
        let p = Pose::planar(1.0, 2.0, 10.0);
        let a = perturb_pose(&p, &NoiseSpec { sigma_p: 0.2, sigma_r: 0.2, seed: 5 });
        let b = perturb_pose(&p, &NoiseSpec { sigma_p: 0.2, sigma_r: 0.2, seed: 5 });
        assert_eq!(a, b);
        let c = perturb_pose(&p, &NoiseSpec { sigma_p: 0.4, sigma_r: 0.4, seed: 5 });
        assert!(((c.x - p.x) - 2.0 * (a.x - p.x)).abs() < 1e-12);
    }

    #[test]
    fn sample_std_matches_sigma() {
        let p = Pose::identity();
        let n = 10_000;
        let xs: Vec<f64> = (0..n)
            .map(|s| perturb_pose(&p, &NoiseSpec { sigma_p: 0.6, sigma_r: 0.0, seed: s }).x)
            .collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let sd = var.sqrt();
        assert!((sd - 0.6).abs() / 0.6 < 0.05, "sample std {sd}");
    }
}
