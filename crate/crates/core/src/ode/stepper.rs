//! Adaptive DOP853 stepping along a straight segment in the complex plane.

use num_complex::Complex64;

use super::tableau::{A, B, C, E3, E5, STAGES};
use super::{IntegratorConfig, OdeError};

const SAFETY: f64 = 0.9;
const MIN_FACTOR: f64 = 0.2;
const MAX_FACTOR: f64 = 10.0;
const ERROR_EXPONENT: f64 = -1.0 / 8.0;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub(crate) struct SegmentStats {
    pub accepted: usize,
    pub rejected: usize,
}

impl SegmentStats {
    fn total(&self) -> usize {
        self.accepted + self.rejected
    }
}

/// Integrates `du/dz = f(z, u)` from `za` to `za + delta` along the straight
/// segment, parametrised by arc length. `h` carries the step size between
/// calls.
#[allow(clippy::too_many_arguments)]
pub(crate) fn integrate_segment<const N: usize, F, G>(
    f: F,
    za: Complex64,
    delta: Complex64,
    mut u: [Complex64; N],
    cfg: &IntegratorConfig,
    h: &mut f64,
    stats: &mut SegmentStats,
    mut on_accept: G,
) -> Result<[Complex64; N], OdeError>
where
    F: Fn(Complex64, &[Complex64; N]) -> Result<[Complex64; N], OdeError>,
    G: FnMut(Complex64, &[Complex64; N]),
{
    let len = delta.norm();
    if len == 0.0 {
        return Ok(u);
    }
    let zb = za + delta;
    let dir = delta / len;
    let at = |s: f64| if s >= len { zb } else { za + dir * s };
    let g = |s: f64, v: &[Complex64; N]| -> Result<[Complex64; N], OdeError> {
        let mut d = f(at(s), v)?;
        for x in d.iter_mut() {
            *x *= dir;
        }
        Ok(d)
    };

    let mut s = 0.0_f64;
    let mut k = [[Complex64::new(0.0, 0.0); N]; STAGES];
    k[0] = g(s, &u)?;
    let mut hh = h.min(cfg.h_max).max(f64::MIN_POSITIVE);

    while s < len {
        if stats.total() >= cfg.max_steps {
            return Err(OdeError::MaxSteps {
                z: at(s),
                steps: cfg.max_steps,
            });
        }
        let remaining = len - s;
        let last = hh >= remaining;
        let step = if last { remaining } else { hh };
        if step <= 1e-14 * (1.0 + s.abs()) && !last {
            return Err(OdeError::StepUnderflow { z: at(s) });
        }

        for i in 1..STAGES {
            let mut v = u;
            for (j, kj) in k.iter().enumerate().take(i) {
                let a = A[i][j];
                if a != 0.0 {
                    for (vn, kn) in v.iter_mut().zip(kj.iter()) {
                        *vn += *kn * (step * a);
                    }
                }
            }
            k[i] = g(s + C[i] * step, &v)?;
        }

        let mut u_new = u;
        for (i, ki) in k.iter().enumerate() {
            if B[i] != 0.0 {
                for (un, kn) in u_new.iter_mut().zip(ki.iter()) {
                    *un += *kn * (step * B[i]);
                }
            }
        }

        let mut e5 = 0.0;
        let mut e3 = 0.0;
        let mut finite = true;
        for n in 0..N {
            let scale = cfg.atol + u[n].norm().max(u_new[n].norm()) * cfg.rtol;
            let mut d5 = Complex64::new(0.0, 0.0);
            let mut d3 = Complex64::new(0.0, 0.0);
            for i in 0..STAGES {
                d5 += k[i][n] * E5[i];
                d3 += k[i][n] * E3[i];
            }
            e5 += (d5 / scale).norm_sqr();
            e3 += (d3 / scale).norm_sqr();
            finite &= u_new[n].re.is_finite() && u_new[n].im.is_finite();
        }
        let denom = e5 + 0.01 * e3;
        let err = if !finite || !e5.is_finite() || !e3.is_finite() {
            f64::INFINITY
        } else if denom > 0.0 {
            step * e5 / (denom * N as f64).sqrt()
        } else {
            0.0
        };

        if err <= 1.0 {
            let factor = if err == 0.0 {
                MAX_FACTOR
            } else {
                (SAFETY * err.powf(ERROR_EXPONENT)).min(MAX_FACTOR)
            };
            s = if last { len } else { s + step };
            u = u_new;
            stats.accepted += 1;
            on_accept(at(s), &u);
            if !last {
                hh = (step * factor).min(cfg.h_max);
            } else {
                hh = hh.max(step * factor).min(cfg.h_max);
            }
            if s < len {
                k[0] = g(s, &u)?;
            }
        } else {
            let factor = if err.is_finite() {
                (SAFETY * err.powf(ERROR_EXPONENT)).max(MIN_FACTOR)
            } else {
                MIN_FACTOR
            };
            hh = step * factor;
            stats.rejected += 1;
            if hh <= 1e-14 * (1.0 + s.abs()) {
                return Err(OdeError::StepUnderflow { z: at(s) });
            }
        }
    }
    *h = hh;
    Ok(u)
}
