//! Strips, their metric densities, and the smallness check on a potential.

use std::f64::consts::{FRAC_PI_2, PI};

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::PotentialExpr;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("strip height {0} is below pi")]
    HeightTooSmall(f64),
    #[error("point {0} is outside the strip")]
    OutsideStrip(Complex64),
    #[error("point {0} is outside the bicorn disk 0 < Im u < pi")]
    OutsideDisk(Complex64),
    #[error("point {0} is outside the upper half-plane")]
    OutsideHalfPlane(Complex64),
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("M = {0} must lie in (0, 1]")]
    InvalidM(f64),
}

/// The horizontal strip `{0 < Im z < height}`; an infinite height is the
/// infinite bicorn.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Strip {
    height: f64,
}

impl Strip {
    pub fn new(height: f64) -> Result<Self, GeometryError> {
        if height.is_nan() || height < PI {
            return Err(GeometryError::HeightTooSmall(height));
        }
        Ok(Strip { height })
    }

    pub fn infinite() -> Self {
        Strip {
            height: f64::INFINITY,
        }
    }

    /// The height-pi strip, the narrowest one admitted.
    pub fn standard() -> Self {
        Strip { height: PI }
    }

    pub fn height(&self) -> f64 {
        self.height
    }

    pub fn is_finite(&self) -> bool {
        self.height.is_finite()
    }

    pub fn contains(&self, z: Complex64) -> bool {
        z.im > 0.0 && z.im < self.height && z.re.is_finite()
    }

    /// Default imaginary part of the line along which maps are anchored:
    /// the midline of a finite strip, and height pi inside the infinite bicorn.
    pub fn midline_im(&self) -> f64 {
        if self.is_finite() {
            self.height / 2.0
        } else {
            PI
        }
    }

    /// Top of the sampling window used by grids. Infinite strips are sampled
    /// up to `2 pi`, past the point where the Thurston factor is constant.
    pub fn sampling_top(&self) -> f64 {
        if self.is_finite() {
            self.height
        } else {
            2.0 * PI
        }
    }

    pub fn edge_distance(&self, z: Complex64) -> Result<f64, GeometryError> {
        if !self.contains(z) {
            return Err(GeometryError::OutsideStrip(z));
        }
        if self.is_finite() {
            Ok(z.im.min(self.height - z.im))
        } else {
            Ok(f64::INFINITY)
        }
    }

    /// Conformal factor `w` of the Thurston metric `w^2 |dz|^2`.
    pub fn thurston_factor(&self, z: Complex64) -> Result<f64, GeometryError> {
        Ok(thurston_factor_at_distance(self.edge_distance(z)?))
    }
}

/// Thurston conformal factor as a function of the distance `l` to the edge.
pub fn thurston_factor_at_distance(l: f64) -> f64 {
    if l <= FRAC_PI_2 {
        1.0 / (2.0 * l.sin())
    } else {
        0.5
    }
}

/// Conformal factor of the hyperbolic metric on the bicorn disk `0 < Im u < pi`.
pub fn hyperbolic_factor_bicorn_disk(u: Complex64) -> Result<f64, GeometryError> {
    if !(u.im > 0.0 && u.im < PI) || !u.re.is_finite() {
        return Err(GeometryError::OutsideDisk(u));
    }
    Ok(1.0 / (2.0 * u.im.sin()))
}

/// Conformal factor of the curvature -4 hyperbolic metric on the upper half-plane.
pub fn half_plane_factor(w: Complex64) -> Result<f64, GeometryError> {
    if !(w.im > 0.0) || !w.is_finite() {
        return Err(GeometryError::OutsideHalfPlane(w));
    }
    Ok(1.0 / (2.0 * w.im))
}

/// Rectangular sampling grid kept `edge_margin` inside the strip edges.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub nx: usize,
    pub ny: usize,
    pub x_min: f64,
    pub x_max: f64,
    pub edge_margin: f64,
}

impl GridSpec {
    pub fn validate(&self, strip: &Strip) -> Result<(), GeometryError> {
        let bad = |m: &str| Err(GeometryError::InvalidGrid(m.to_owned()));
        if self.nx == 0 || self.ny == 0 {
            return bad("nx and ny must be positive");
        }
        if (self.nx as f64) * (self.ny as f64) > 1e8 {
            return bad("nx * ny exceeds 1e8");
        }
        if !(self.x_min.is_finite() && self.x_max.is_finite()) || self.x_min > self.x_max {
            return bad("x range must be finite with x_min <= x_max");
        }
        if !(self.edge_margin > 0.0) || self.edge_margin >= strip.sampling_top() / 2.0 {
            return bad("edge_margin must lie in (0, height / 2)");
        }
        Ok(())
    }

    /// Grid points, row by row from the bottom edge, left to right.
    pub fn points(&self, strip: &Strip) -> Vec<Complex64> {
        let lo = self.edge_margin;
        let hi = strip.sampling_top() - self.edge_margin;
        let ys = linspace(lo, hi, self.ny);
        let xs = linspace(self.x_min, self.x_max, self.nx);
        ys.iter()
            .flat_map(|&y| xs.iter().map(move |&x| Complex64::new(x, y)))
            .collect()
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub(crate) fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    match n {
        0 => vec![],
        1 => vec![(a + b) / 2.0],
        _ => (0..n)
            .map(|k| {
                if k == n - 1 {
                    b
                } else {
                    a + (b - a) * (k as f64) / ((n - 1) as f64)
                }
            })
            .collect(),
    }
}

/// Outcome of the grid check `|p/2| < M w^2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HypothesisReport {
    pub m: f64,
    /// Infinite when a grid point sits on a pole (serialized as `null`).
    pub worst_ratio: f64,
    pub worst_point: [f64; 2],
    pub pass: bool,
    pub samples: usize,
}

/// Ratio `|p(z)/2| / (M w(z)^2)`, infinite at pole proximity.
pub fn hypothesis_ratio(strip: &Strip, p: &PotentialExpr, m: f64, z: Complex64) -> f64 {
    let w = match strip.thurston_factor(z) {
        Ok(w) => w,
        Err(_) => return f64::INFINITY,
    };
    match p.eval(z) {
        Ok(v) => (v / 2.0).norm() / (m * w * w),
        Err(_) => f64::INFINITY,
    }
}

pub fn check_hypothesis(
    strip: &Strip,
    p: &PotentialExpr,
    m: f64,
    grid: &GridSpec,
) -> Result<HypothesisReport, GeometryError> {
    if !(m > 0.0 && m <= 1.0) {
        return Err(GeometryError::InvalidM(m));
    }
    grid.validate(strip)?;
    let points = grid.points(strip);
    let ratios: Vec<f64> = points
        .par_iter()
        .map(|&z| {
            let r = hypothesis_ratio(strip, p, m, z);
            if r.is_nan() {
                f64::INFINITY
            } else {
                r
            }
        })
        .collect();

    let mut best = 0usize;
    for k in 1..points.len() {
        let (r, rb) = (ratios[k], ratios[best]);
        let tie_smaller = r == rb
            && (points[k].re, points[k].im)
                .partial_cmp(&(points[best].re, points[best].im))
                .is_some_and(|o| o.is_lt());
        if r > rb || tie_smaller {
            best = k;
        }
    }
    let worst_ratio = ratios[best];
    Ok(HypothesisReport {
        m,
        worst_ratio,
        worst_point: [points[best].re, points[best].im],
        pass: worst_ratio < 1.0,
        samples: points.len(),
    })
}
