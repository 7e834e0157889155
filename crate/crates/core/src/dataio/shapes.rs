use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::geometry::{Point, PointCloud};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ShapeKind {
    Sphere,
    Torus,
    Box,
    Wedge,
}

impl ShapeKind {
    pub const ALL: [ShapeKind; 4] = [
        ShapeKind::Sphere,
        ShapeKind::Torus,
        ShapeKind::Box,
        ShapeKind::Wedge,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ShapeKind::Sphere => "sphere",
            ShapeKind::Torus => "torus",
            ShapeKind::Box => "box",
            ShapeKind::Wedge => "wedge",
        }
    }
}

impl fmt::Display for ShapeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ShapeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ShapeKind::ALL
            .into_iter()
            .find(|k| k.name() == s.trim())
            .ok_or_else(|| {
                Error::InvalidArgument(format!("unknown shape {s:?} (sphere, torus, box, wedge)"))
            })
    }
}

/// Parametric surfaces used as stand-ins for CAD models.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Shape {
    Sphere {
        radius: f64,
    },
    /// Ring of radius `major` around z with tube radius `minor`; the ring is
    /// stretched by `stretch_y` along y so the shape has no continuous symmetry.
    Torus {
        major: f64,
        minor: f64,
        stretch_y: f64,
    },
    /// Axis-aligned box surface centered at the origin.
    Box {
        half_extents: [f64; 3],
    },
    /// Two rectangles of widths `width` (along x) hinged on the x axis: one
    /// extends `length_a` along +y, the other `length_b` at `angle` from it.
    Wedge {
        width: f64,
        length_a: f64,
        length_b: f64,
        angle: f64,
    },
}

impl Shape {
    pub fn canonical(kind: ShapeKind) -> Self {
        match kind {
            ShapeKind::Sphere => Shape::Sphere { radius: 1.0 },
            ShapeKind::Torus => Shape::Torus {
                major: 0.8,
                minor: 0.25,
                stretch_y: 0.7,
            },
            ShapeKind::Box => Shape::Box {
                half_extents: [1.0, 0.6, 0.35],
            },
            ShapeKind::Wedge => Shape::Wedge {
                width: 0.9,
                length_a: 1.0,
                length_b: 0.6,
                angle: 75f64.to_radians(),
            },
        }
    }

    /// A random member of the shape family (dimensions drawn per instance).
    pub fn random<R: Rng>(kind: ShapeKind, rng: &mut R) -> Self {
        match kind {
            ShapeKind::Sphere => Shape::Sphere {
                radius: rng.random_range(0.5..1.5),
            },
            ShapeKind::Torus => Shape::Torus {
                major: rng.random_range(0.6..1.0),
                minor: rng.random_range(0.15..0.35),
                stretch_y: rng.random_range(0.5..0.8),
            },
            ShapeKind::Box => Shape::Box {
                half_extents: [
                    rng.random_range(0.8..1.0),
                    rng.random_range(0.45..0.7),
                    rng.random_range(0.2..0.4),
                ],
            },
            ShapeKind::Wedge => Shape::Wedge {
                width: rng.random_range(0.6..1.1),
                length_a: rng.random_range(0.8..1.2),
                length_b: rng.random_range(0.35..0.7),
                angle: rng.random_range(50f64..110.0).to_radians(),
            },
        }
    }

    pub fn kind(&self) -> ShapeKind {
        match self {
            Shape::Sphere { .. } => ShapeKind::Sphere,
            Shape::Torus { .. } => ShapeKind::Torus,
            Shape::Box { .. } => ShapeKind::Box,
            Shape::Wedge { .. } => ShapeKind::Wedge,
        }
    }

    fn sample_point<R: Rng>(&self, rng: &mut R) -> Point {
        match *self {
            Shape::Sphere { radius } => loop {
                let v = Point::new(
                    rng.sample(StandardNormal),
                    rng.sample(StandardNormal),
                    rng.sample(StandardNormal),
                );
                let n = v.norm();
                if n > 1e-12 {
                    break v * (radius / n);
                }
            },
            Shape::Torus {
                major,
                minor,
                stretch_y,
            } => {
                // rejection on the area element of the stretched parametrization
                let bound = (major + minor) * minor;
                loop {
                    let u = rng.random_range(0.0..2.0 * PI);
                    let v = rng.random_range(0.0..2.0 * PI);
                    let (su, cu) = u.sin_cos();
                    let (sv, cv) = v.sin_cos();
                    let ring = major + minor * cv;
                    let du = Point::new(-ring * su, ring * cu * stretch_y, 0.0);
                    let dv = Point::new(-minor * sv * cu, -minor * sv * su * stretch_y, minor * cv);
                    let area = du.cross(&dv).norm();
                    if rng.random::<f64>() * bound <= area {
                        break Point::new(ring * cu, ring * su * stretch_y, minor * sv);
                    }
                }
            }
            Shape::Box { half_extents: h } => {
                let faces = [h[1] * h[2], h[0] * h[2], h[0] * h[1]];
                let total: f64 = faces.iter().sum();
                let mut pick = rng.random::<f64>() * total;
                let mut axis = 2;
                for (i, a) in faces.iter().enumerate() {
                    if pick < *a {
                        axis = i;
                        break;
                    }
                    pick -= a;
                }
                let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
                let mut p = [0.0; 3];
                for k in 0..3 {
                    p[k] = if k == axis {
                        sign * h[k]
                    } else {
                        rng.random_range(-h[k]..=h[k])
                    };
                }
                Point::new(p[0], p[1], p[2])
            }
            Shape::Wedge {
                width,
                length_a,
                length_b,
                angle,
            } => {
                let x = rng.random_range(-width / 2.0..=width / 2.0);
                let on_a = rng.random::<f64>() * (length_a + length_b) < length_a;
                if on_a {
                    Point::new(x, rng.random_range(0.0..=length_a), 0.0)
                } else {
                    let s = rng.random_range(0.0..=length_b);
                    Point::new(x, s * angle.cos(), s * angle.sin())
                }
            }
        }
    }
}

/// `n` points distributed uniformly by area over the shape's surface.
pub fn sample_surface(shape: &Shape, n: usize, seed: u64) -> Result<PointCloud> {
    if n < 4 {
        return Err(Error::InvalidArgument(format!(
            "need at least 4 surface samples, got {n}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    PointCloud::new((0..n).map(|_| shape.sample_point(&mut rng)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sphere_points_lie_on_radius() {
        let c = sample_surface(&Shape::Sphere { radius: 1.3 }, 784, 1).unwrap();
        assert_eq!(c.len(), 784);
        for p in c.points() {
            assert!((p.norm() - 1.3).abs() <= 1e-9);
        }
    }

    #[test]
    fn sphere_octants_are_uniform() {
        let n = 16_000;
        let c = sample_surface(&Shape::Sphere { radius: 1.0 }, n, 2).unwrap();
        let mut counts = [0usize; 8];
        for p in c.points() {
            let idx =
                (p.x > 0.0) as usize | ((p.y > 0.0) as usize) << 1 | ((p.z > 0.0) as usize) << 2;
            counts[idx] += 1;
        }
        let mean = n as f64 / 8.0;
        let sd = (n as f64 * (1.0 / 8.0) * (7.0 / 8.0)).sqrt();
        for c in counts {
            assert!((c as f64 - mean).abs() <= 4.0 * sd, "{counts:?}");
        }
    }

    #[test]
    fn box_points_lie_on_faces() {
        let h = [1.0, 0.5, 0.25];
        let c = sample_surface(&Shape::Box { half_extents: h }, 2000, 3).unwrap();
        let mut per_axis = [0usize; 3];
        for p in c.points() {
            let on: Vec<usize> = (0..3)
                .filter(|&k| (p[k].abs() - h[k]).abs() <= 1e-9)
                .collect();
            assert!(!on.is_empty(), "{p:?} not on a face");
            for k in 0..3 {
                assert!(p[k].abs() <= h[k] + 1e-9);
            }
            per_axis[on[0]] += 1;
        }
        // face areas 0.125 : 0.25 : 0.5 of total 0.875
        let want: [f64; 3] = [0.125 / 0.875, 0.25 / 0.875, 0.5 / 0.875];
        for k in 0..3 {
            let frac = per_axis[k] as f64 / 2000.0;
            let sd = (want[k] * (1.0 - want[k]) / 2000.0).sqrt();
            assert!((frac - want[k]).abs() <= 4.0 * sd, "{per_axis:?}");
        }
    }

    #[test]
    fn wedge_points_lie_on_planes() {
        let shape = Shape::canonical(ShapeKind::Wedge);
        let Shape::Wedge { angle, .. } = shape else {
            unreachable!()
        };
        let normal_b = Point::new(0.0, -angle.sin(), angle.cos());
        let c = sample_surface(&shape, 500, 4).unwrap();
        for p in c.points() {
            assert!(p.z.abs() <= 1e-12 || p.dot(&normal_b).abs() <= 1e-9);
        }
    }

    #[test]
    fn torus_points_satisfy_implicit_equation() {
        let shape = Shape::canonical(ShapeKind::Torus);
        let Shape::Torus {
            major,
            minor,
            stretch_y,
        } = shape
        else {
            unreachable!()
        };
        let c = sample_surface(&shape, 500, 5).unwrap();
        for p in c.points() {
            let ring = (p.x * p.x + (p.y / stretch_y).powi(2)).sqrt();
            let d = ((ring - major).powi(2) + p.z * p.z).sqrt();
            assert!((d - minor).abs() <= 1e-9);
        }
    }

    #[test]
    fn deterministic_given_seed() {
        for kind in ShapeKind::ALL {
            let s = Shape::canonical(kind);
            assert_eq!(
                sample_surface(&s, 100, 7).unwrap(),
                sample_surface(&s, 100, 7).unwrap()
            );
        }
    }

    #[test]
    fn too_few_points_rejected() {
        assert!(sample_surface(&Shape::canonical(ShapeKind::Box), 3, 0).is_err());
    }

    #[test]
    fn kind_names_round_trip() {
        for kind in ShapeKind::ALL {
            assert_eq!(kind.name().parse::<ShapeKind>().unwrap(), kind);
        }
        assert!("cone".parse::<ShapeKind>().is_err());
    }
}
