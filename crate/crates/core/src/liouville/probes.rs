use num_complex::Complex64;

use super::{LiouvilleError, LiouvilleMap};
use crate::hyperbolic::{fd_jet, schwarzian_from_jet};

/// Finite-difference check of `{y, z} = y'^2/2 - 1/2 - p`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SchwarzianProbe {
    pub z: Complex64,
    pub step: f64,
    pub residual: f64,
    pub schwarzian_fd: Complex64,
    pub predicted: Complex64,
    pub y_prime_fd: Complex64,
    pub y_prime_exact: Complex64,
    /// `|y'_FD - 1/(psi psit)|`.
    pub y_prime_mismatch: f64,
}

/// Finite-difference check of `H phi = y'^{3/2} ((d/dy)^2 - 1/4) (y'^{1/2} phi)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OperatorProbe {
    pub z: Complex64,
    pub a: Complex64,
    pub step: f64,
    pub residual: f64,
    pub lhs: Complex64,
    pub rhs: Complex64,
}

const OFFSETS: [f64; 5] = [-2.0, -1.0, 0.0, 1.0, 2.0];

fn check_stencil(map: &LiouvilleMap, z: Complex64, step: f64) -> Result<(), LiouvilleError> {
    if !(step.is_finite() && step > 0.0) {
        return Err(LiouvilleError::InvalidArgument(
            "finite-difference step must be positive".into(),
        ));
    }
    let r = 4.0 * step;
    let inside = [
        Complex64::new(0.0, r),
        Complex64::new(0.0, -r),
        Complex64::new(r, 0.0),
        Complex64::new(-r, 0.0),
    ]
    .iter()
    .all(|d| map.strip().contains(z + d))
        && z.re.abs() + r <= map.half_width();
    if inside {
        Ok(())
    } else {
        Err(LiouvilleError::StencilOutside { z, step })
    }
}

struct Stencil {
    y: [Complex64; 5],
    y_prime: [Complex64; 5],
    p: Complex64,
}

fn stencil(map: &LiouvilleMap, z: Complex64, step: f64) -> Result<Stencil, LiouvilleError> {
    check_stencil(map, z, step)?;
    let center = map.evaluate_state(z)?;
    let offsets: Vec<Complex64> = OFFSETS
        .iter()
        .map(|&k| Complex64::new(k * step, 0.0))
        .collect();
    let states = map.stencil(&center, &offsets)?;
    let p = map
        .potential()
        .eval(z)
        .map_err(|_| crate::ode::OdeError::Pole { z })?;
    let mut y = [Complex64::new(0.0, 0.0); 5];
    let mut y_prime = y;
    for (k, s) in states.iter().enumerate() {
        y[k] = s.y;
        y_prime[k] = s.y_prime();
    }
    Ok(Stencil { y, y_prime, p })
}

fn guard_cancellation(z: Complex64, d1: Complex64, step: f64) -> Result<(), LiouvilleError> {
    if d1.norm() < 1e3 * f64::EPSILON / step {
        Err(LiouvilleError::Cancellation {
            z,
            y_prime: d1.norm(),
            step,
        })
    } else {
        Ok(())
    }
}

pub fn schwarzian_residual(
    map: &LiouvilleMap,
    z: Complex64,
    step: f64,
) -> Result<SchwarzianProbe, LiouvilleError> {
    let st = stencil(map, z, step)?;
    let h = Complex64::new(step, 0.0);
    let (d1, d2, d3) = fd_jet(&st.y, h);
    guard_cancellation(z, d1, step)?;
    let s = schwarzian_from_jet(d1, d2, d3);
    let predicted = 0.5 * d1 * d1 - 0.5 - st.p;
    Ok(SchwarzianProbe {
        z,
        step,
        residual: (s - predicted).norm(),
        schwarzian_fd: s,
        predicted,
        y_prime_fd: d1,
        y_prime_exact: st.y_prime[2],
        y_prime_mismatch: (d1 - st.y_prime[2]).norm(),
    })
}

/// The test function is `phi(w) = exp(a (w - z))`, a constant multiple of
/// `exp(a w)` normalised to one at the probe point.
pub fn operator_identity_residual(
    map: &LiouvilleMap,
    z: Complex64,
    a: Complex64,
    step: f64,
) -> Result<OperatorProbe, LiouvilleError> {
    if !(a.norm() <= 1.0) {
        return Err(LiouvilleError::InvalidArgument(
            "|a| must be at most 1".into(),
        ));
    }
    let st = stencil(map, z, step)?;
    let h = Complex64::new(step, 0.0);
    let (y1, y2, _) = fd_jet(&st.y, h);
    guard_cancellation(z, y1, step)?;

    let s0 = st.y_prime[2].sqrt();
    let mut g = [Complex64::new(0.0, 0.0); 5];
    let mut phi = g;
    for k in 0..5 {
        let r = st.y_prime[k].sqrt();
        let s = if (r - s0).norm() <= (r + s0).norm() {
            r
        } else {
            -r
        };
        if (s - s0).norm() > 0.5 * s0.norm() {
            return Err(LiouvilleError::BranchTracking { z });
        }
        phi[k] = (a * OFFSETS[k] * step).exp();
        g[k] = s * phi[k];
    }
    let (_, phi2, _) = fd_jet(&phi, h);
    let (g1, g2, _) = fd_jet(&g, h);
    let lhs = phi2 - (0.25 + st.p / 2.0) * phi[2];
    let inner = g2 / (y1 * y1) - g1 * y2 / (y1 * y1 * y1) - 0.25 * g[2];
    let rhs = y1 * s0 * inner;
    Ok(OperatorProbe {
        z,
        a,
        step,
        residual: (lhs - rhs).norm(),
        lhs,
        rhs,
    })
}
