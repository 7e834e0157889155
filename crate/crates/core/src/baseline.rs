//! Point-to-point ICP: nearest-neighbour correspondences alternating with a
//! closed-form least-squares rigid fit.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::geometry::{Action, KdTree, Point, PointCloud, RigidTransform};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IcpConfig {
    pub max_iterations: usize,
    /// Stop once the rotation update is below this angle (radians)...
    pub rotation_tol: f64,
    /// ...and the translation update below this distance.
    pub translation_tol: f64,
    /// Ignore correspondences farther apart than this; `None` keeps all.
    pub max_correspondence: Option<f64>,
    pub initial: Action,
}

impl Default for IcpConfig {
    fn default() -> Self {
        Self {
            max_iterations: 100,
            rotation_tol: 1e-4,
            translation_tol: 1e-6,
            max_correspondence: None,
            initial: Action::ZERO,
        }
    }
}

impl IcpConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iterations == 0 {
            return Err(Error::Config(
                "icp.max_iterations must be at least 1".into(),
            ));
        }
        if !(self.rotation_tol > 0.0 && self.translation_tol > 0.0) {
            return Err(Error::Config("icp tolerances must be positive".into()));
        }
        if let Some(d) = self.max_correspondence {
            if !(d > 0.0) {
                return Err(Error::Config(
                    "icp.max_correspondence must be positive".into(),
                ));
            }
        }
        Ok(())
    }
}

/// Least-squares rigid transform minimizing `sum |R x_i + t - y_i|^2`, with
/// `det(R) = +1`.
pub fn kabsch_fit(source: &[Point], target: &[Point]) -> Result<RigidTransform> {
    if source.len() != target.len() {
        return Err(Error::Dimension(format!(
            "{} source points but {} target points",
            source.len(),
            target.len()
        )));
    }
    if source.len() < 3 {
        return Err(Error::DegenerateGeometry(format!(
            "rigid fit needs at least 3 correspondences, got {}",
            source.len()
        )));
    }
    let n = source.len() as f64;
    let cx = source.iter().sum::<Vector3<f64>>() / n;
    let cy = target.iter().sum::<Vector3<f64>>() / n;
    let mut h = Matrix3::zeros();
    for (x, y) in source.iter().zip(target) {
        h += (x - cx) * (y - cy).transpose();
    }
    let svd = h.svd(true, true);
    let mut sv: Vec<f64> = svd.singular_values.iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    if !(sv[0] > 0.0) || sv[1] < 1e-12 * sv[0] {
        return Err(Error::DegenerateGeometry(format!(
            "cross-covariance has rank < 2 (singular values {sv:?})"
        )));
    }
    let u = svd.u.expect("requested U");
    let v = svd.v_t.expect("requested V^T").transpose();
    // flip the axis of the smallest singular value if the fit is a reflection
    let weakest = svd.singular_values.imin();
    let mut correction = Vector3::new(1.0, 1.0, 1.0);
    correction[weakest] = (v * u.transpose()).determinant().signum();
    let rotation = v * Matrix3::from_diagonal(&correction) * u.transpose();
    Ok(RigidTransform {
        rotation,
        translation: cy - rotation * cx,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IcpIteration {
    pub iteration: usize,
    pub correspondences: usize,
    /// Mean squared correspondence distance before the fit...
    pub error_before: f64,
    /// ...and after it, for the same correspondences.
    pub error_after: f64,
    pub rotation_change: f64,
    pub translation_change: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IcpResult {
    pub action: Action,
    pub transform: RigidTransform,
    pub converged: bool,
    pub trace: Vec<IcpIteration>,
}

fn rotation_angle(r: &Matrix3<f64>) -> f64 {
    ((r.trace() - 1.0) / 2.0).clamp(-1.0, 1.0).acos()
}

fn mean_squared(transform: &RigidTransform, source: &[Point], target: &[Point]) -> f64 {
    source
        .iter()
        .zip(target)
        .map(|(x, y)| (transform.apply(x) - y).norm_squared())
        .sum::<f64>()
        / source.len() as f64
}

/// Registers `source` onto `target` starting from `config.initial`.
pub fn icp_register(
    source: &PointCloud,
    target: &PointCloud,
    config: &IcpConfig,
) -> Result<IcpResult> {
    config.validate()?;
    let tree = KdTree::build(target.points());
    let mut current = config.initial.to_transform();
    let mut trace = Vec::new();
    let mut converged = false;
    for iteration in 0..config.max_iterations {
        let mut xs = Vec::with_capacity(source.len());
        let mut ys = Vec::with_capacity(source.len());
        for x in source.points() {
            let (j, d2) = tree.nearest(&current.apply(x));
            if config.max_correspondence.is_none_or(|m| d2 <= m * m) {
                xs.push(*x);
                ys.push(target.points()[j]);
            }
        }
        let next = kabsch_fit(&xs, &ys)?;
        let rotation_change = rotation_angle(&(next.rotation * current.rotation.transpose()));
        let translation_change = (next.translation - current.translation).norm();
        trace.push(IcpIteration {
            iteration,
            correspondences: xs.len(),
            error_before: mean_squared(&current, &xs, &ys),
            error_after: mean_squared(&next, &xs, &ys),
            rotation_change,
            translation_change,
        });
        current = next;
        if rotation_change < config.rotation_tol && translation_change < config.translation_tol {
            converged = true;
            break;
        }
    }
    Ok(IcpResult {
        action: current.to_action(),
        transform: current,
        converged,
        trace,
    })
}
