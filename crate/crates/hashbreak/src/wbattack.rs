//! White-box attacks against the DCT feature-extraction step.
//!
//! Both attacks exploit that the feature map has orthonormal rows: a
//! perturbation drawn from the row space of norm `T` moves the features by
//! exactly `T`, and no perturbation of norm below `T` can move them further
//! than `T`. `wb_sample` draws uniformly from the radius-`T` sphere of the
//! row space until the perturbed image is valid; `wb_optimize` runs an
//! alternating projection (row space, sphere, image box) in place of a
//! general nonconvex solver and succeeds when the feature displacement is
//! optimal up to tolerance.

use rand::prelude::*;
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::dctlab::DctMap;
use crate::imagecore::{clip_perturbation, lp_norm, Image, NormOrder, Perturbation};

#[derive(Debug, Error)]
pub enum WbError {
    #[error("no valid perturbation found within {0} samples")]
    Exhausted(usize),
    #[error("threshold must be positive, got {0}")]
    InvalidThreshold(f64),
    #[error("expected a {expected}x{expected} single-channel image, got {got}")]
    ShapeMismatch { expected: usize, got: String },
}

/// Outcome of a white-box attack on a `k x k` image.
#[derive(Debug, Clone)]
pub struct WbResult {
    pub success: bool,
    /// Perturbation on the `k x k` image.
    pub delta: Perturbation,
    /// `||delta||_2`.
    pub delta_norm: f64,
    /// `||A delta||_2`: displacement of the DCT features.
    pub a_delta_norm: f64,
    /// Samples (wb_sample) or projection iterations (wb_optimize) consumed.
    pub attempts: usize,
    /// Restarts consumed (always 0 for wb_sample).
    pub restarts_used: usize,
}

impl WbResult {
    /// Report document in the same shape as the black-box attack report.
    pub fn to_json(&self, attack_kind: &str) -> serde_json::Value {
        serde_json::json!({
            "attack_kind": attack_kind,
            "success": self.success,
            "iterations": self.attempts,
            "restarts": self.restarts_used,
            "delta_norm": self.delta_norm,
            "f_final": self.a_delta_norm,
            "l2_per_pixel": self.delta_norm / (self.delta.data().len() as f64).sqrt(),
        })
    }
}

fn check_input(x: &Image, map: &DctMap, threshold: f64) -> Result<(), WbError> {
    if !(threshold > 0.0) {
        return Err(WbError::InvalidThreshold(threshold));
    }
    if x.channels() != 1 || x.width() != map.k() || x.height() != map.k() {
        return Err(WbError::ShapeMismatch {
            expected: map.k(),
            got: format!("{}x{}x{}", x.width(), x.height(), x.channels()),
        });
    }
    Ok(())
}

fn l2(v: &[f64]) -> f64 {
    lp_norm(v, NormOrder::L2)
}

fn result_from(x: &Image, map: &DctMap, raw: &[f64], success: bool, attempts: usize, restarts_used: usize) -> WbResult {
    let delta = clip_perturbation(x, raw).expect("shape checked");
    let a_delta_norm = l2(&map.apply_a(delta.data()).expect("shape checked"));
    WbResult {
        success,
        delta_norm: l2(delta.data()),
        a_delta_norm,
        delta,
        attempts,
        restarts_used,
    }
}

/// Rejection sampling: draw `alpha` uniformly on the radius-`T` sphere in
/// the row-space coordinates, lift it to image space through `A^T`, and
/// accept once the perturbed image stays within bounds. Accepted outputs
/// have `||delta||_2 = ||A delta||_2 = T` up to roundoff.
pub fn wb_sample(
    x: &Image,
    map: &DctMap,
    threshold: f64,
    max_samples: usize,
    rng: &mut ChaCha12Rng,
) -> Result<WbResult, WbError> {
    check_input(x, map, threshold)?;
    let dim = map.output_len();
    for attempt in 1..=max_samples {
        let mut alpha: Vec<f64> = (0..dim)
            .map(|_| rng.sample::<f64, _>(StandardNormal))
            .collect();
        let norm = l2(&alpha);
        if norm == 0.0 {
            continue;
        }
        for a in alpha.iter_mut() {
            *a *= threshold / norm;
        }
        let delta = map.apply_a_transpose(&alpha).expect("alpha has c^2 entries");
        let valid = delta
            .iter()
            .zip(x.data())
            .all(|(d, xv)| {
                let s = d + xv;
                (0.0..=1.0).contains(&s)
            });
        if valid {
            return Ok(result_from(x, map, &delta, true, attempt, 0));
        }
    }
    Err(WbError::Exhausted(max_samples))
}

/// Relative tolerance for declaring the feature displacement optimal.
pub const OPTIMALITY_TOL_REL: f64 = 1e-6;

/// Alternating-projection realization of the program
/// "maximize ||A delta||^2 subject to ||delta|| <= T and X + delta valid":
/// project onto the row space, rescale to the sphere of radius `T`, clip to
/// the image box, and repeat. Succeeds when `||A delta||_2` reaches `T`
/// within tolerance; otherwise restarts from a fresh random point and
/// finally reports the best perturbation found with `success = false`.
pub fn wb_optimize(
    x: &Image,
    map: &DctMap,
    threshold: f64,
    max_iter: usize,
    restarts: usize,
    rng: &mut ChaCha12Rng,
) -> Result<WbResult, WbError> {
    check_input(x, map, threshold)?;
    // The type-level guarantee is ||A delta|| >= T - 1e-9 on success; take
    // the stricter of that and the relative tolerance.
    let success_bar = f64::max(threshold * (1.0 - OPTIMALITY_TOL_REL), threshold - 1e-9);

    let random_start = |rng: &mut ChaCha12Rng| -> Vec<f64> {
        x.data()
            .iter()
            .map(|&xv| 0.01 * rng.random_range(-xv..=(1.0 - xv)))
            .collect()
    };

    let mut attempts = 0;
    let mut best: Option<(f64, Vec<f64>)> = None;
    for restart in 0..restarts.max(1) {
        let mut delta = random_start(rng);
        for _ in 0..max_iter {
            attempts += 1;
            let row = map.project_row_space(&delta).expect("shape checked");
            let norm = l2(&row);
            if norm <= f64::EPSILON * threshold {
                delta = random_start(rng);
                continue;
            }
            delta = row
                .iter()
                .zip(x.data())
                .map(|(r, xv)| (r * threshold / norm).clamp(-xv, 1.0 - xv))
                .collect();
            let achieved = l2(&map.apply_a(&delta).expect("shape checked"));
            if achieved >= success_bar {
                return Ok(result_from(x, map, &delta, true, attempts, restart));
            }
            if best.as_ref().map_or(true, |(b, _)| achieved > *b) {
                best = Some((achieved, delta.clone()));
            }
        }
    }
    let (_, delta) = best.expect("at least one iteration ran");
    Ok(result_from(x, map, &delta, false, attempts, restarts.max(1) - 1))
}

/// The provable floor on the input perturbation needed to move the DCT
/// features by more than `T`: exactly `T` itself.
pub fn theoretical_lower_bound(threshold: f64) -> f64 {
    threshold
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn sample_interior_image_accepts_immediately() {
        let x = Image::constant(32, 32, 1, 0.5);
        let map = DctMap::build(32, 1, 8).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        let r = wb_sample(&x, &map, 0.1, 1000, &mut rng).unwrap();
        assert!(r.success);
        // Interior image with T < 0.5: every draw is valid, so the first
        // sample is accepted.
        assert_eq!(r.attempts, 1);
        assert!((r.delta_norm - 0.1).abs() <= 1e-9);
        assert!((r.a_delta_norm - 0.1).abs() <= 1e-9);
    }

    #[test]
    fn sample_exhausts_on_saturated_image() {
        // A black image rejects any draw with a negative component; at
        // T = 10 every sphere point has one.
        let x = Image::constant(32, 32, 1, 0.0);
        let map = DctMap::build(32, 1, 8).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(2);
        match wb_sample(&x, &map, 10.0, 500, &mut rng) {
            Err(WbError::Exhausted(500)) => {}
            other => panic!("expected exhaustion, got {other:?}"),
        }
    }

    #[test]
    fn sample_norms_match_threshold_exactly() {
        let x = Image::constant(32, 32, 1, 0.5);
        let map = DctMap::build(32, 1, 8).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        for _ in 0..100 {
            let r = wb_sample(&x, &map, 0.25, 10, &mut rng).unwrap();
            assert!((r.delta_norm - 0.25).abs() <= 1e-9);
            assert!((r.a_delta_norm - r.delta_norm).abs() <= 1e-9);
        }
    }

    #[test]
    fn sample_rejects_bad_inputs() {
        let map = DctMap::build(32, 1, 8).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(4);
        let wrong_size = Image::constant(16, 16, 1, 0.5);
        assert!(matches!(
            wb_sample(&wrong_size, &map, 0.1, 10, &mut rng),
            Err(WbError::ShapeMismatch { .. })
        ));
        let x = Image::constant(32, 32, 1, 0.5);
        assert!(matches!(
            wb_sample(&x, &map, 0.0, 10, &mut rng),
            Err(WbError::InvalidThreshold(_))
        ));
    }

    #[test]
    fn optimize_interior_image_converges() {
        let x = Image::constant(32, 32, 1, 0.5);
        let map = DctMap::build(32, 1, 8).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        let t = 0.1;
        let r = wb_optimize(&x, &map, t, 1000, 10, &mut rng).unwrap();
        assert!(r.success);
        assert!(r.a_delta_norm >= t * (1.0 - 1e-6));
        assert!(r.a_delta_norm <= t + 1e-9);
        assert!(r.delta_norm <= t + 1e-9);
        // Success implies delta is numerically in the row space.
        assert!(r.a_delta_norm >= r.delta_norm * (1.0 - 1e-6));
    }

    #[test]
    fn optimize_never_exceeds_budget_or_bounds() {
        let mut rng = ChaCha12Rng::seed_from_u64(6);
        let map = DctMap::build(16, 1, 4).unwrap();
        for seed in 0..5u64 {
            let img = crate::synth::corpus(1, 16, 16, 1, seed)[0].clone();
            let t = 0.5;
            let r = wb_optimize(&img, &map, t, 50, 3, &mut rng).unwrap();
            assert!(r.delta_norm <= t + 1e-9);
            for (d, xv) in r.delta.data().iter().zip(img.data()) {
                let s = d + xv;
                assert!((0.0..=1.0).contains(&s));
            }
        }
    }

    #[test]
    fn sampling_is_symmetric_around_zero() {
        // Mean of accepted draws on an interior image concentrates near 0;
        // with N = 10,000 samples E||mean||^2 = T^2/N, so 3T/sqrt(N) is a
        // comfortable bound for a pinned seed.
        let x = Image::constant(32, 32, 1, 0.5);
        let map = DctMap::build(32, 1, 8).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        let t = 0.1;
        let n = 10_000;
        let mut mean = vec![0.0; map.input_len()];
        for _ in 0..n {
            let r = wb_sample(&x, &map, t, 10, &mut rng).unwrap();
            for (m, d) in mean.iter_mut().zip(r.delta.data()) {
                *m += d / n as f64;
            }
        }
        let bound = 3.0 * t / (n as f64).sqrt();
        assert!(l2(&mean) <= bound, "||mean|| = {} > {bound}", l2(&mean));
    }

    #[test]
    fn lower_bound_is_identity() {
        assert_eq!(theoretical_lower_bound(1.6), 1.6);
        assert_eq!(theoretical_lower_bound(0.0), 0.0);
    }
}
