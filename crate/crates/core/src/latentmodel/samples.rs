use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::dataio::RegistrationPair;
use crate::geometry::{apply_action, chamfer_distance, Action, PointCloud};
use crate::{Error, Exec, Result};

/// One `<X, a, X', Y>` tuple with its Chamfer regression targets.
#[derive(Debug, Clone)]
pub struct TrainingSample {
    pub source: Arc<PointCloud>,
    pub action: Action,
    /// `apply_action(source, action)`.
    pub transformed: PointCloud,
    pub target: Arc<PointCloud>,
    /// `D(source, target)`.
    pub chamfer_source_target: f64,
    /// `D(transformed, target)`.
    pub chamfer_transformed_target: f64,
}

impl TrainingSample {
    pub fn new(source: Arc<PointCloud>, action: Action, target: Arc<PointCloud>) -> Result<Self> {
        let transformed = apply_action(&source, &action);
        Ok(Self {
            chamfer_source_target: chamfer_distance(&source, &target)?,
            chamfer_transformed_target: chamfer_distance(&transformed, &target)?,
            source,
            action,
            transformed,
            target,
        })
    }
}

/// For every pair, draws `per_pair` actions from `N(0, sigma^2 I)` (angles
/// wrapped into `[-pi, pi]`) and builds the corresponding samples.
pub fn generate_samples(
    pairs: &[RegistrationPair],
    per_pair: usize,
    sigma: f64,
    seed: u64,
    exec: Exec,
) -> Result<Vec<TrainingSample>> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "sampling sigma must be positive, got {sigma}"
        )));
    }
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut jobs = Vec::with_capacity(pairs.len() * per_pair);
    for pair in pairs {
        let source = Arc::new(pair.source.clone());
        let target = Arc::new(pair.target.clone());
        for _ in 0..per_pair {
            let raw: [f64; 6] = std::array::from_fn(|_| normal.sample(&mut rng));
            jobs.push((source.clone(), Action::from_array(raw)?, target.clone()));
        }
    }
    exec.map_slice(&jobs, |(s, a, t)| {
        TrainingSample::new(s.clone(), *a, t.clone())
    })
    .into_iter()
    .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::{make_pair, sample_surface, PairSpec, Shape, ShapeKind};
    use crate::geometry::normalize_unit_sphere;

    fn pairs(n: usize) -> Vec<RegistrationPair> {
        (0..n)
            .map(|i| {
                let x = normalize_unit_sphere(
                    &sample_surface(&Shape::canonical(ShapeKind::Box), 40, i as u64).unwrap(),
                )
                .unwrap();
                make_pair(&x, &PairSpec::default(), i as u64).unwrap()
            })
            .collect()
    }

    #[test]
    fn transformed_matches_action() {
        let s = generate_samples(&pairs(2), 3, 1.0, 4, Exec::Serial).unwrap();
        assert_eq!(s.len(), 6);
        for t in &s {
            let want = apply_action(&t.source, &t.action);
            assert_eq!(want, t.transformed);
            let d = chamfer_distance(&t.transformed, &t.target).unwrap();
            assert_eq!(d, t.chamfer_transformed_target);
        }
    }

    #[test]
    fn tiny_sigma_gives_near_identity() {
        let s = generate_samples(&pairs(1), 5, 1e-9, 1, Exec::Serial).unwrap();
        for t in &s {
            assert!(t.action.to_array().iter().all(|v| v.abs() < 1e-7));
            for (a, b) in t.transformed.points().iter().zip(t.source.points()) {
                assert!((a - b).amax() < 1e-7);
            }
        }
    }

    #[test]
    fn action_mean_is_near_zero() {
        let s = generate_samples(&pairs(1), 10_000, 1.0, 2, Exec::Parallel).unwrap();
        let n = s.len() as f64;
        for k in 0..6 {
            let mean = s.iter().map(|t| t.action.to_array()[k]).sum::<f64>() / n;
            // wrapping only shrinks the angle spread, so sigma bounds the std
            assert!(mean.abs() <= 4.0 / n.sqrt(), "component {k}: {mean}");
        }
    }

    #[test]
    fn angles_are_wrapped() {
        let s = generate_samples(&pairs(1), 2000, 3.0, 3, Exec::Serial).unwrap();
        for t in &s {
            assert!(t
                .action
                .euler()
                .iter()
                .all(|e| e.abs() <= std::f64::consts::PI));
        }
    }

    #[test]
    fn non_positive_sigma_rejected() {
        assert!(generate_samples(&pairs(1), 1, 0.0, 0, Exec::Serial).is_err());
    }

    #[test]
    fn deterministic_across_exec_modes() {
        let a = generate_samples(&pairs(2), 4, 1.0, 5, Exec::Serial).unwrap();
        let b = generate_samples(&pairs(2), 4, 1.0, 5, Exec::Parallel).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.action, y.action);
            assert_eq!(x.chamfer_transformed_target, y.chamfer_transformed_target);
        }
    }
}
