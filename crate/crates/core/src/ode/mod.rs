//! Integration of the Hill system `psi'' = (1/4 + p/2) psi` for a
//! Wronskian-one pair of solutions, carrying `y = log(psit / psi)` as a fifth
//! component so that its branch is tracked continuously along the path.

mod stepper;
mod tableau;

use std::io::Write;

use num_complex::Complex64;
use thiserror::Error;

use crate::expr::PotentialExpr;
use crate::geometry::Strip;

pub(crate) use stepper::{integrate_segment, SegmentStats};

/// Below this, `psi * psit` is treated as a zero of one of the solutions.
pub const ZERO_CROSSING_EPS: f64 = 1e-30;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OdeError {
    #[error("potential has a pole near z = {z}")]
    Pole { z: Complex64 },
    #[error("psi or psit vanishes near z = {z}")]
    ZeroCrossing { z: Complex64 },
    #[error("step budget of {steps} exhausted at z = {z}")]
    MaxSteps { z: Complex64, steps: usize },
    #[error("step size underflow at z = {z}")]
    StepUnderflow { z: Complex64 },
    #[error("invalid integrator configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid path: {0}")]
    InvalidPath(String),
    #[error("invalid start state: {0}")]
    InvalidStart(String),
}

impl OdeError {
    /// Location at which the integration broke down, when there is one.
    pub fn location(&self) -> Option<Complex64> {
        match self {
            OdeError::Pole { z }
            | OdeError::ZeroCrossing { z }
            | OdeError::MaxSteps { z, .. }
            | OdeError::StepUnderflow { z } => Some(*z),
            _ => None,
        }
    }
}

/// The jet `(psi, psi', psit, psit', y)` at a point `z`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HillState {
    pub z: Complex64,
    pub psi: Complex64,
    pub dpsi: Complex64,
    pub psit: Complex64,
    pub dpsit: Complex64,
    pub y: Complex64,
}

impl HillState {
    /// The free pair `psi = e^{-z/2}`, `psit = e^{z/2}` with `y = z`.
    pub fn free(z: Complex64) -> Self {
        let psi = (-z / 2.0).exp();
        let psit = (z / 2.0).exp();
        HillState {
            z,
            psi,
            dpsi: -psi / 2.0,
            psit,
            dpsit: psit / 2.0,
            y: z,
        }
    }

    pub fn wronskian(&self) -> Complex64 {
        self.psi * self.dpsit - self.dpsi * self.psit
    }

    /// `y' = 1 / (psi psit)`, exact whenever the Wronskian is one.
    pub fn y_prime(&self) -> Complex64 {
        (self.psi * self.psit).inv()
    }

    /// Relative mismatch `|exp(y) - psit/psi| / |psit/psi|`.
    pub fn log_consistency(&self) -> f64 {
        let ratio = self.psit / self.psi;
        (self.y.exp() - ratio).norm() / ratio.norm()
    }

    pub(crate) fn to_array(self) -> [Complex64; 5] {
        [self.psi, self.dpsi, self.psit, self.dpsit, self.y]
    }

    pub(crate) fn from_array(z: Complex64, u: &[Complex64; 5]) -> Self {
        HillState {
            z,
            psi: u[0],
            dpsi: u[1],
            psit: u[2],
            dpsit: u[3],
            y: u[4],
        }
    }
}

/// Right-hand side of the Hill system at a state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HillDerivative {
    pub psi: Complex64,
    pub dpsi: Complex64,
    pub psit: Complex64,
    pub dpsit: Complex64,
    pub y: Complex64,
}

pub fn hill_rhs(p: &PotentialExpr, state: &HillState) -> Result<HillDerivative, OdeError> {
    let d = rhs5(p, state.z, &state.to_array())?;
    Ok(HillDerivative {
        psi: d[0],
        dpsi: d[1],
        psit: d[2],
        dpsit: d[3],
        y: d[4],
    })
}

#[inline]
pub(crate) fn potential_q(p: &PotentialExpr, z: Complex64) -> Result<Complex64, OdeError> {
    let v = p.eval(z).map_err(|_| OdeError::Pole { z })?;
    Ok(0.25 + v / 2.0)
}

#[inline]
pub(crate) fn rhs5(
    p: &PotentialExpr,
    z: Complex64,
    u: &[Complex64; 5],
) -> Result<[Complex64; 5], OdeError> {
    let q = potential_q(p, z)?;
    let prod = u[0] * u[2];
    if !(prod.norm() >= ZERO_CROSSING_EPS) {
        return Err(OdeError::ZeroCrossing { z });
    }
    Ok([u[1], q * u[0], u[3], q * u[2], prod.inv()])
}

#[inline]
pub(crate) fn rhs2(
    p: &PotentialExpr,
    z: Complex64,
    u: &[Complex64; 2],
) -> Result<[Complex64; 2], OdeError> {
    let q = potential_q(p, z)?;
    Ok([u[1], q * u[0]])
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntegratorConfig {
    pub rtol: f64,
    pub atol: f64,
    pub h_init: f64,
    pub h_max: f64,
    pub max_steps: usize,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        IntegratorConfig {
            rtol: 1e-10,
            atol: 1e-12,
            h_init: 1e-2,
            h_max: 0.5,
            max_steps: 1_000_000,
        }
    }
}

impl IntegratorConfig {
    pub fn with_tolerances(rtol: f64, atol: f64) -> Self {
        IntegratorConfig {
            rtol,
            atol,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<(), OdeError> {
        let bad = |m: &str| Err(OdeError::InvalidConfig(m.to_owned()));
        if !(self.rtol > 0.0 && self.rtol <= 1e-3) {
            return bad("rtol must lie in (0, 1e-3]");
        }
        if !(self.atol > 0.0) || !self.atol.is_finite() {
            return bad("atol must be positive");
        }
        if !(self.h_init > 0.0 && self.h_max > 0.0) || !self.h_max.is_finite() {
            return bad("step bounds must be positive");
        }
        if self.max_steps == 0 || self.max_steps > 10_000_000 {
            return bad("max_steps must lie in [1, 1e7]");
        }
        Ok(())
    }
}

/// A polyline of straight segments strictly inside a strip.
#[derive(Debug, Clone, PartialEq)]
pub struct PathPolyline {
    vertices: Vec<Complex64>,
}

impl PathPolyline {
    pub fn new(strip: &Strip, vertices: Vec<Complex64>) -> Result<Self, OdeError> {
        if vertices.is_empty() {
            return Err(OdeError::InvalidPath("no vertices".into()));
        }
        for (k, v) in vertices.iter().enumerate() {
            if !strip.contains(*v) {
                return Err(OdeError::InvalidPath(format!(
                    "vertex {k} at {v} is outside the strip"
                )));
            }
        }
        for (k, w) in vertices.windows(2).enumerate() {
            if w[0] == w[1] {
                return Err(OdeError::InvalidPath(format!(
                    "vertices {k} and {} coincide",
                    k + 1
                )));
            }
        }
        Ok(PathPolyline { vertices })
    }

    pub fn vertices(&self) -> &[Complex64] {
        &self.vertices
    }

    pub fn length(&self) -> f64 {
        self.vertices.windows(2).map(|w| (w[1] - w[0]).norm()).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub final_state: HillState,
    /// States at the start and at every accepted step.
    pub dense: Vec<HillState>,
    pub wronskian_drift: f64,
    pub accepted: usize,
    pub rejected: usize,
}

/// Integrates the five-component Hill system along `path`.
pub fn integrate(
    p: &PotentialExpr,
    start: &HillState,
    path: &PathPolyline,
    cfg: &IntegratorConfig,
) -> Result<Trajectory, OdeError> {
    cfg.validate()?;
    let first = path.vertices[0];
    if (start.z - first).norm() > 1e-12 * (1.0 + first.norm()) {
        return Err(OdeError::InvalidStart(format!(
            "start point {} is not the first vertex {first}",
            start.z
        )));
    }
    let wr = start.wronskian();
    if (wr - 1.0).norm() > 1e-12 {
        return Err(OdeError::InvalidStart(format!("Wronskian {wr} is not 1")));
    }
    if start.log_consistency() > 1e-12 {
        return Err(OdeError::InvalidStart("exp(y) != psit / psi".into()));
    }
    let mut dense = vec![HillState { z: first, ..*start }];
    let mut stats = SegmentStats::default();
    let final_state = run_path(p, start, &path.vertices, cfg, &mut stats, |s| dense.push(s))?;
    Ok(Trajectory {
        final_state,
        dense,
        wronskian_drift: (final_state.wronskian() - wr).norm(),
        accepted: stats.accepted,
        rejected: stats.rejected,
    })
}

/// Integrates through consecutive vertices without validation or dense output.
pub(crate) fn run_path(
    p: &PotentialExpr,
    start: &HillState,
    vertices: &[Complex64],
    cfg: &IntegratorConfig,
    stats: &mut SegmentStats,
    mut on_accept: impl FnMut(HillState),
) -> Result<HillState, OdeError> {
    let mut u = start.to_array();
    let mut z = vertices.first().copied().unwrap_or(start.z);
    let mut h = cfg.h_init;
    for &next in vertices.iter().skip(1) {
        if next == z {
            continue;
        }
        u = integrate_segment(
            |zz, uu: &[Complex64; 5]| rhs5(p, zz, uu),
            z,
            next - z,
            u,
            cfg,
            &mut h,
            stats,
            |zz, uu| on_accept(HillState::from_array(zz, uu)),
        )?;
        z = next;
    }
    Ok(HillState::from_array(z, &u))
}

/// Writes states as CSV rows `re z, im z, re psi, im psi, ..., re y, im y`.
pub fn write_dense_csv<W: Write>(states: &[HillState], out: W) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "re_z", "im_z", "re_psi", "im_psi", "re_dpsi", "im_dpsi", "re_psit", "im_psit", "re_dpsit",
        "im_dpsit", "re_y", "im_y",
    ])?;
    for s in states {
        let vals = [s.z, s.psi, s.dpsi, s.psit, s.dpsit, s.y];
        let row: Vec<String> = vals
            .iter()
            .flat_map(|c| [c.re.to_string(), c.im.to_string()])
            .collect();
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}
