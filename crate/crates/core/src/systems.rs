//! The problem instance (chart, frame, taming metric, fiber metric) and the
//! catalog of built-in systems.

use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::expr::{Scalar, ScalarExpr};
use crate::linalg::Mat;
use crate::metric::SubFinslerMetric;

/// Relative singular-value cutoff used for every numerical rank decision.
pub const DEFAULT_RANK_TOL: f64 = 1e-10;

#[derive(Clone, Debug)]
pub struct System {
    pub name: String,
    pub coords: Vec<String>,
    pub periodic: Vec<bool>,
    /// `k` columns, each with `n` component expressions over `coords`.
    pub frame: Vec<Vec<ScalarExpr>>,
    /// `n×n` taming metric; `None` is the identity.
    pub taming: Option<Vec<Vec<ScalarExpr>>>,
    pub metric: SubFinslerMetric,
    /// Scale `s` of the complement norm `F̃²(w) = s·g(w, w)` used by the
    /// extended metric.
    pub complement_scale: f64,
    pub rank_tol: f64,
}

impl System {
    /// Builds a system from component formulas; `frame[i][j]` is the `j`-th
    /// component of `X_i`.
    pub fn new<S: AsRef<str>>(
        name: &str,
        coords: &[&str],
        periodic: &[bool],
        frame: &[Vec<S>],
    ) -> Result<System> {
        let coords: Vec<String> = coords.iter().map(|s| s.to_string()).collect();
        let n = coords.len();
        if n == 0 {
            return Err(Error::Config("chart dimension must be at least 1".into()));
        }
        for (i, c) in coords.iter().enumerate() {
            if coords[..i].contains(c) {
                return Err(Error::Config(format!("duplicate coordinate name `{c}`")));
            }
        }
        if periodic.len() != n {
            return Err(Error::Config("periodic mask length differs from dimension".into()));
        }
        if frame.is_empty() {
            return Err(Error::Config("frame must have at least one vector field".into()));
        }
        let mut cols = Vec::with_capacity(frame.len());
        for (i, col) in frame.iter().enumerate() {
            if col.len() != n {
                return Err(Error::Config(format!(
                    "frame field {} has {} components, expected {n}",
                    i + 1,
                    col.len()
                )));
            }
            cols.push(
                col.iter()
                    .map(|s| ScalarExpr::parse(s.as_ref(), &coords))
                    .collect::<Result<Vec<_>>>()?,
            );
        }
        let k = cols.len();
        let metric = SubFinslerMetric::euclidean(k, &coords);
        Ok(System {
            name: name.to_string(),
            coords,
            periodic: periodic.to_vec(),
            frame: cols,
            taming: None,
            metric,
            complement_scale: 1.0,
            rank_tol: DEFAULT_RANK_TOL,
        })
    }

    pub fn with_metric(mut self, metric: SubFinslerMetric) -> Result<System> {
        metric.check_rank(self.k())?;
        self.metric = metric;
        Ok(self)
    }

    pub fn with_taming<S: AsRef<str>>(mut self, g: &[Vec<S>]) -> Result<System> {
        let n = self.n();
        if g.len() != n || g.iter().any(|r| r.len() != n) {
            return Err(Error::Config(format!("taming metric must be {n}x{n}")));
        }
        self.taming = Some(
            g.iter()
                .map(|r| {
                    r.iter()
                        .map(|s| ScalarExpr::parse(s.as_ref(), &self.coords))
                        .collect::<Result<Vec<_>>>()
                })
                .collect::<Result<Vec<_>>>()?,
        );
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.coords.len()
    }

    pub fn k(&self) -> usize {
        self.frame.len()
    }

    /// `n×k` frame matrix (rows are coordinates) without the rank check.
    pub fn frame_at<T: Scalar>(&self, x: &[T]) -> Result<Mat<T>> {
        let (n, k) = (self.n(), self.k());
        let mut m = vec![vec![T::cst(0.0); k]; n];
        for (i, col) in self.frame.iter().enumerate() {
            for (j, e) in col.iter().enumerate() {
                m[j][i] = if e.is_constant() {
                    T::cst(e.eval_f64(&[])?)
                } else {
                    e.eval(x)?
                };
            }
        }
        Ok(m)
    }

    pub fn taming_at<T: Scalar>(&self, x: &[T]) -> Result<Mat<T>> {
        let n = self.n();
        match &self.taming {
            None => Ok((0..n)
                .map(|i| (0..n).map(|j| T::cst(if i == j { 1.0 } else { 0.0 })).collect())
                .collect()),
            Some(g) => g
                .iter()
                .map(|r| {
                    r.iter()
                        .map(|e| {
                            if e.is_constant() {
                                Ok(T::cst(e.eval_f64(&[])?))
                            } else {
                                e.eval(x)
                            }
                        })
                        .collect()
                })
                .collect(),
        }
    }

    /// Sampling box: `[-π, π]` on periodic coordinates, `[-1, 1]` elsewhere.
    pub fn sample_box(&self) -> Vec<(f64, f64)> {
        self.periodic
            .iter()
            .map(|&p| {
                if p {
                    (-std::f64::consts::PI, std::f64::consts::PI)
                } else {
                    (-1.0, 1.0)
                }
            })
            .collect()
    }

    pub fn sample_point<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        self.sample_box()
            .into_iter()
            .map(|(a, b)| rng.gen_range(a..b))
            .collect()
    }

    /// Replaces periodic components of a displacement by their representative
    /// in `(-π, π]`.
    pub fn wrap_displacement(&self, d: &mut [f64]) {
        for (v, &p) in d.iter_mut().zip(&self.periodic) {
            if p {
                *v = wrap_angle(*v);
            }
        }
    }
}

pub fn wrap_angle(a: f64) -> f64 {
    use std::f64::consts::PI;
    let mut r = a.rem_euclid(2.0 * PI);
    if r > PI {
        r -= 2.0 * PI;
    }
    r
}

/// `ℝⁿ` with the full coordinate frame and the Euclidean norm.
pub fn euclidean(n: usize) -> System {
    let names: Vec<String> = (1..=n).map(|i| format!("x{i}")).collect();
    let refs: Vec<&str> = names.iter().map(|s| s.as_str()).collect();
    let frame: Vec<Vec<&str>> = (0..n)
        .map(|i| (0..n).map(|j| if i == j { "1" } else { "0" }).collect())
        .collect();
    System::new(&format!("euclidean({n})"), &refs, &vec![false; n], &frame)
        .expect("catalog system is well formed")
}

/// Heisenberg group: `X₁ = ∂x − (y/2)∂z`, `X₂ = ∂y + (x/2)∂z`.
pub fn heisenberg() -> System {
    System::new(
        "heisenberg",
        &["x", "y", "z"],
        &[false; 3],
        &[vec!["1", "0", "-y/2"], vec!["0", "1", "x/2"]],
    )
    .expect("catalog system is well formed")
}

/// Martinet distribution: `X₁ = ∂x`, `X₂ = ∂y + (x²/2)∂z`.
pub fn martinet() -> System {
    System::new(
        "martinet",
        &["x", "y", "z"],
        &[false; 3],
        &[vec!["1", "0", "0"], vec!["0", "1", "x^2/2"]],
    )
    .expect("catalog system is well formed")
}

/// Integrable plane field `span(∂x, ∂y)` in `ℝ³`.
pub fn planar() -> System {
    System::new(
        "planar",
        &["x", "y", "z"],
        &[false; 3],
        &[vec!["1", "0", "0"], vec!["0", "1", "0"]],
    )
    .expect("catalog system is well formed")
}

/// Rolling penny on `S¹ × ℝ² × S¹` with coordinates `(φ, x₁, x₂, ψ)`:
/// `X₁ = cos φ ∂x₁ + sin φ ∂x₂ + ∂ψ`, `X₂ = ∂φ`.
pub fn unicycle() -> System {
    System::new(
        "unicycle",
        &["phi", "x1", "x2", "psi"],
        &[true, false, false, true],
        &[vec!["0", "cos(phi)", "sin(phi)", "1"], vec!["1", "0", "0", "0"]],
    )
    .expect("catalog system is well formed")
}

/// The unicycle without the wheel angle, coordinates `(φ, x₁, x₂)`.
pub fn unicycle_reduced() -> System {
    System::new(
        "unicycle_reduced",
        &["phi", "x1", "x2"],
        &[true, false, false],
        &[vec!["0", "cos(phi)", "sin(phi)"], vec!["1", "0", "0"]],
    )
    .expect("catalog system is well formed")
}

/// Looks up a catalog system. Accepts `euclidean(n)`, `euclidean` (n = 3),
/// `heisenberg`, `martinet`, `planar`, `unicycle`, `unicycle_reduced`.
pub fn make_system(name: &str) -> Result<System> {
    let name = name.trim();
    if let Some(rest) = name.strip_prefix("euclidean") {
        let digits = rest.trim_start_matches('(').trim_end_matches(')');
        if digits.is_empty() {
            return Ok(euclidean(3));
        }
        return match digits.parse::<usize>() {
            Ok(n) if n >= 1 => Ok(euclidean(n)),
            _ => Err(Error::UnknownSystem(name.to_string())),
        };
    }
    match name {
        "heisenberg" => Ok(heisenberg()),
        "martinet" => Ok(martinet()),
        "planar" => Ok(planar()),
        "unicycle" => Ok(unicycle()),
        "unicycle_reduced" => Ok(unicycle_reduced()),
        _ => Err(Error::UnknownSystem(name.to_string())),
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct CatalogEntry {
    pub name: &'static str,
    pub dim: usize,
    pub rank: usize,
    pub metrics: &'static [&'static str],
    pub description: &'static str,
}

pub fn catalog() -> Vec<CatalogEntry> {
    vec![
        CatalogEntry {
            name: "euclidean(n)",
            dim: 0,
            rank: 0,
            metrics: &["quadratic", "custom"],
            description: "R^n with the full coordinate frame",
        },
        CatalogEntry {
            name: "heisenberg",
            dim: 3,
            rank: 2,
            metrics: &["quadratic", "curvature_weighted", "custom"],
            description: "contact distribution X1 = dx - y/2 dz, X2 = dy + x/2 dz",
        },
        CatalogEntry {
            name: "martinet",
            dim: 3,
            rank: 2,
            metrics: &["quadratic", "curvature_weighted", "custom"],
            description: "X1 = dx, X2 = dy + x^2/2 dz; abnormal line along x = z = 0",
        },
        CatalogEntry {
            name: "planar",
            dim: 3,
            rank: 2,
            metrics: &["quadratic", "curvature_weighted", "custom"],
            description: "integrable plane field span(dx, dy) in R^3",
        },
        CatalogEntry {
            name: "unicycle",
            dim: 4,
            rank: 2,
            metrics: &["quadratic", "curvature_weighted", "custom"],
            description: "rolling penny (phi, x1, x2, psi), phi and psi periodic",
        },
        CatalogEntry {
            name: "unicycle_reduced",
            dim: 3,
            rank: 2,
            metrics: &["quadratic", "curvature_weighted", "custom"],
            description: "unicycle without the wheel angle (phi, x1, x2)",
        },
    ]
}
