//! Möbius maps, cross ratios, quasiconformal constants, the tract metric and
//! a finite-difference Schwarzian derivative.

mod tract;

use num_complex::Complex64;
use thiserror::Error;

pub use tract::{
    polyline_length, tract_distance, tract_factor, tract_segment_length, TractDistance,
    TractSearch, TRACT_OFFSET,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum HyperbolicError {
    #[error("{0}")]
    OutOfRange(String),
    #[error("cross ratio needs four distinct points")]
    RepeatedPoints,
    #[error("degenerate Möbius coefficients (ad - bc = 0)")]
    Degenerate,
    #[error("quadrature did not reach the tolerance on segment {segment}")]
    Quadrature { segment: usize },
    #[error("non-finite value on the finite-difference stencil at z = {z}")]
    Stencil { z: Complex64 },
    #[error("finite-difference cancellation at z = {z}")]
    Cancellation { z: Complex64 },
}

/// A point of the Riemann sphere.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ExtC {
    Finite(Complex64),
    Infinity,
}

impl From<Complex64> for ExtC {
    fn from(z: Complex64) -> Self {
        ExtC::Finite(z)
    }
}

impl ExtC {
    pub fn finite(self) -> Option<Complex64> {
        match self {
            ExtC::Finite(z) => Some(z),
            ExtC::Infinity => None,
        }
    }
}

/// `z -> (a z + b) / (c z + d)` with `ad - bc = 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mobius {
    pub a: Complex64,
    pub b: Complex64,
    pub c: Complex64,
    pub d: Complex64,
}

impl Mobius {
    pub fn new(
        a: Complex64,
        b: Complex64,
        c: Complex64,
        d: Complex64,
    ) -> Result<Self, HyperbolicError> {
        let det = a * d - b * c;
        if !(det.norm() > 0.0) || !det.re.is_finite() || !det.im.is_finite() {
            return Err(HyperbolicError::Degenerate);
        }
        let s = det.sqrt();
        Ok(Mobius {
            a: a / s,
            b: b / s,
            c: c / s,
            d: d / s,
        })
    }

    pub fn identity() -> Self {
        let one = Complex64::new(1.0, 0.0);
        let zero = Complex64::new(0.0, 0.0);
        Mobius {
            a: one,
            b: zero,
            c: zero,
            d: one,
        }
    }

    pub fn det(&self) -> Complex64 {
        self.a * self.d - self.b * self.c
    }

    pub fn apply(&self, z: ExtC) -> ExtC {
        match z {
            ExtC::Finite(z) => {
                let den = self.c * z + self.d;
                if den.norm() == 0.0 {
                    ExtC::Infinity
                } else {
                    ExtC::Finite((self.a * z + self.b) / den)
                }
            }
            ExtC::Infinity => {
                if self.c.norm() == 0.0 {
                    ExtC::Infinity
                } else {
                    ExtC::Finite(self.a / self.c)
                }
            }
        }
    }

    pub fn apply_finite(&self, z: Complex64) -> Complex64 {
        (self.a * z + self.b) / (self.c * z + self.d)
    }

    /// `self ∘ other`.
    pub fn compose(&self, other: &Mobius) -> Mobius {
        Mobius {
            a: self.a * other.a + self.b * other.c,
            b: self.a * other.b + self.b * other.d,
            c: self.c * other.a + self.d * other.c,
            d: self.c * other.b + self.d * other.d,
        }
    }

    pub fn inverse(&self) -> Mobius {
        Mobius {
            a: self.d,
            b: -self.b,
            c: -self.c,
            d: self.a,
        }
    }
}

/// `((z2 - z0)/(z1 - z0)) ((z1 - z3)/(z2 - z3))`, so that
/// `cross_ratio(0, w1, w2, ∞) = w2 / w1`.
pub fn cross_ratio(z0: ExtC, z1: ExtC, z2: ExtC, z3: ExtC) -> Result<Complex64, HyperbolicError> {
    let pts = [z0, z1, z2, z3];
    for i in 0..4 {
        for j in i + 1..4 {
            if pts[i] == pts[j] {
                return Err(HyperbolicError::RepeatedPoints);
            }
        }
    }
    use ExtC::{Finite as F, Infinity as I};
    Ok(match pts {
        [F(z0), F(z1), F(z2), F(z3)] => ((z2 - z0) / (z1 - z0)) * ((z1 - z3) / (z2 - z3)),
        [I, F(z1), F(z2), F(z3)] => (z1 - z3) / (z2 - z3),
        [F(z0), I, F(z2), F(z3)] => (z2 - z0) / (z2 - z3),
        [F(z0), F(z1), I, F(z3)] => (z1 - z3) / (z1 - z0),
        [F(z0), F(z1), F(z2), I] => (z2 - z0) / (z1 - z0),
        _ => return Err(HyperbolicError::RepeatedPoints),
    })
}

pub fn exp_displacement(r: Complex64) -> Complex64 {
    r.exp()
}

/// `(mu/|mu|) tanh(a artanh |mu|)`, zero where `mu` is zero.
pub fn beltrami_path(mu: Complex64, a: f64) -> Result<Complex64, HyperbolicError> {
    let m = mu.norm();
    if !(m < 1.0) {
        return Err(HyperbolicError::OutOfRange("|mu| must be below 1".into()));
    }
    if !(0.0..=1.0).contains(&a) {
        return Err(HyperbolicError::OutOfRange("a must lie in [0, 1]".into()));
    }
    if m == 0.0 {
        return Ok(Complex64::new(0.0, 0.0));
    }
    Ok(mu / m * (a * m.atanh()).tanh())
}

/// Dilatation constants for a Beltrami coefficient bounded by `M`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QcConstants {
    pub m: f64,
    /// `(1 + M) / (1 - M)`.
    pub k: f64,
    /// `log((1 + M)/(1 - M)) / 2`, which equals `artanh M`.
    pub cr_distortion: f64,
}

impl QcConstants {
    pub fn new(m: f64) -> Result<Self, HyperbolicError> {
        if !(m > 0.0 && m < 1.0) {
            return Err(HyperbolicError::OutOfRange("M must lie in (0, 1)".into()));
        }
        let excess = 2.0 * m / (1.0 - m);
        Ok(QcConstants {
            m,
            k: 1.0 + excess,
            cr_distortion: 0.5 * excess.ln_1p(),
        })
    }

    /// `((1 + M)/(1 - M))^|b - a|`.
    pub fn step_dilatation(&self, a: f64, b: f64) -> f64 {
        self.k.powf((b - a).abs())
    }

    /// `tanh(|b - a| artanh M)`.
    pub fn step_beltrami_bound(&self, a: f64, b: f64) -> f64 {
        ((b - a).abs() * self.m.atanh()).tanh()
    }
}

/// `(K - 1)(|Re r| + 3 pi / 2)`.
pub fn euclid_ball_bound(k: f64, r: Complex64) -> Result<f64, HyperbolicError> {
    if !(k > 1.0) || !k.is_finite() {
        return Err(HyperbolicError::OutOfRange("K must exceed 1".into()));
    }
    Ok((k - 1.0) * (r.re.abs() + TRACT_OFFSET))
}

/// Five-point central differences `(f', f'', f''')` from samples at
/// `z + k h`, `k = -2..=2`.
pub fn fd_jet(v: &[Complex64; 5], h: Complex64) -> (Complex64, Complex64, Complex64) {
    let [m2, m1, c0, p1, p2] = *v;
    let d1 = (-p2 + 8.0 * p1 - 8.0 * m1 + m2) / (12.0 * h);
    let d2 = (-p2 + 16.0 * p1 - 30.0 * c0 + 16.0 * m1 - m2) / (12.0 * h * h);
    let d3 = (p2 - 2.0 * p1 + 2.0 * m1 - m2) / (2.0 * h * h * h);
    (d1, d2, d3)
}

/// `f'''/f' - (3/2)(f''/f')^2`.
pub fn schwarzian_from_jet(d1: Complex64, d2: Complex64, d3: Complex64) -> Complex64 {
    let q = d2 / d1;
    d3 / d1 - 1.5 * q * q
}

/// Schwarzian derivative of `f` at `z` by five-point differences of step `h`.
pub fn schwarzian_fd<F>(f: F, z: Complex64, h: f64) -> Result<Complex64, HyperbolicError>
where
    F: Fn(Complex64) -> Complex64,
{
    let hc = Complex64::new(h, 0.0);
    let mut v = [Complex64::new(0.0, 0.0); 5];
    for (k, slot) in v.iter_mut().enumerate() {
        let w = f(z + (k as f64 - 2.0) * hc);
        if !(w.re.is_finite() && w.im.is_finite()) {
            return Err(HyperbolicError::Stencil { z });
        }
        *slot = w;
    }
    let (d1, d2, d3) = fd_jet(&v, hc);
    if d1.norm() < 1e3 * f64::EPSILON / h {
        return Err(HyperbolicError::Cancellation { z });
    }
    Ok(schwarzian_from_jet(d1, d2, d3))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::{E, PI};

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn random_c(rng: &mut ChaCha8Rng, r: f64) -> Complex64 {
        c(rng.gen_range(-r..r), rng.gen_range(-r..r))
    }

    fn random_mobius(rng: &mut ChaCha8Rng) -> Mobius {
        loop {
            let m = Mobius::new(
                random_c(rng, 2.0),
                random_c(rng, 2.0),
                random_c(rng, 2.0),
                random_c(rng, 2.0),
            );
            if let Ok(m) = m {
                if (m.a * m.d - m.b * m.c - 1.0).norm() < 1e-13 {
                    return m;
                }
            }
        }
    }

    #[test]
    fn mobius_normalisation_and_conventions() {
        let m = Mobius::new(c(2.0, 0.0), c(1.0, 0.0), c(1.0, 0.0), c(3.0, 0.0)).unwrap();
        assert!((m.det() - 1.0).norm() < 1e-12);
        assert!((m.apply_finite(c(1.0, 0.0)) - 0.75).norm() < 1e-15);
        let unimodular = Mobius::new(c(2.0, 0.0), c(1.0, 0.0), c(1.0, 0.0), c(1.0, 0.0)).unwrap();
        assert_eq!(unimodular.apply(c(-1.0, 0.0).into()), ExtC::Infinity);
        assert_eq!(unimodular.apply(ExtC::Infinity), ExtC::Finite(c(2.0, 0.0)));
        let affine = Mobius::new(c(2.0, 0.0), c(1.0, 0.0), c(0.0, 0.0), c(1.0, 0.0)).unwrap();
        assert_eq!(affine.apply(ExtC::Infinity), ExtC::Infinity);
        assert!(Mobius::new(c(1.0, 0.0), c(2.0, 0.0), c(2.0, 0.0), c(4.0, 0.0)).is_err());
    }

    #[test]
    fn mobius_group_laws() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..200 {
            let g = random_mobius(&mut rng);
            let h = random_mobius(&mut rng);
            let k = random_mobius(&mut rng);
            let z = random_c(&mut rng, 3.0);
            let id = g.compose(&g.inverse());
            assert!((id.apply_finite(z) - z).norm() < 1e-12 * (1.0 + z.norm()));
            let lhs = g.compose(&h).compose(&k).apply_finite(z);
            let rhs = g.compose(&h.compose(&k)).apply_finite(z);
            assert!((lhs - rhs).norm() < 1e-9 * (1.0 + lhs.norm()));
            assert!((g.compose(&h).det() - 1.0).norm() < 1e-12);
        }
    }

    #[test]
    fn cross_ratio_specialisations() {
        let zero = ExtC::Finite(c(0.0, 0.0));
        let one = ExtC::Finite(c(1.0, 0.0));
        let e = ExtC::Finite(c(E, 0.0));
        assert_eq!(
            cross_ratio(zero, one, e, ExtC::Infinity).unwrap(),
            c(E, 0.0)
        );
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..100 {
            let l = random_c(&mut rng, 5.0);
            let w1 = random_c(&mut rng, 5.0);
            let w2 = random_c(&mut rng, 5.0);
            assert_eq!(cross_ratio(zero, one, l.into(), ExtC::Infinity).unwrap(), l);
            let r = cross_ratio(zero, w1.into(), w2.into(), ExtC::Infinity).unwrap();
            assert_eq!(r, w2 / w1);
        }
        assert!(matches!(
            cross_ratio(zero, one, one, ExtC::Infinity),
            Err(HyperbolicError::RepeatedPoints)
        ));
    }

    #[test]
    fn cross_ratio_infinity_is_the_limit() {
        let big = c(1e9, 3e8);
        let z = [c(0.3, 1.0), c(-1.0, 0.5), c(2.0, -0.7)];
        for slot in 0..4 {
            let mut ext = Vec::new();
            let mut fin = Vec::new();
            let mut it = z.iter();
            for k in 0..4 {
                if k == slot {
                    ext.push(ExtC::Infinity);
                    fin.push(ExtC::Finite(big));
                } else {
                    let w = *it.next().unwrap();
                    ext.push(w.into());
                    fin.push(w.into());
                }
            }
            let a = cross_ratio(ext[0], ext[1], ext[2], ext[3]).unwrap();
            let b = cross_ratio(fin[0], fin[1], fin[2], fin[3]).unwrap();
            assert!((a - b).norm() < 1e-7 * a.norm(), "slot {slot}");
        }
    }

    #[test]
    fn cross_ratio_mobius_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..200 {
            let g = random_mobius(&mut rng);
            let zs: Vec<Complex64> = (0..4).map(|_| random_c(&mut rng, 2.0)).collect();
            let before =
                cross_ratio(zs[0].into(), zs[1].into(), zs[2].into(), zs[3].into()).unwrap();
            let gz: Vec<ExtC> = zs.iter().map(|&z| g.apply(z.into())).collect();
            if gz.iter().any(|w| w.finite().is_none_or(|w| w.norm() > 1e2)) {
                continue;
            }
            let after = cross_ratio(gz[0], gz[1], gz[2], gz[3]).unwrap();
            assert!(
                (after - before).norm() < 1e-12 * before.norm().max(1.0),
                "{before} {after}"
            );
        }
    }

    #[test]
    fn exp_displacement_values() {
        assert_eq!(exp_displacement(c(0.0, 0.0)), c(1.0, 0.0));
        assert!((exp_displacement(c(0.0, PI)) + 1.0).norm() < 1e-15);
    }

    #[test]
    fn beltrami_path_values() {
        let mu = c(0.3 * 0.6, 0.3 * 0.8);
        assert_eq!(beltrami_path(mu, 0.0).unwrap(), c(0.0, 0.0));
        assert!((beltrami_path(mu, 1.0).unwrap() - mu).norm() < 1e-15);
        let half = beltrami_path(mu, 0.5).unwrap();
        // tanh(artanh(0.3)/2) to 18 digits
        assert!((half.norm() - 0.153535995276847836).abs() < 1e-15);
        assert!((half.arg() - mu.arg()).abs() < 1e-15);
        assert_eq!(beltrami_path(c(0.0, 0.0), 0.4).unwrap(), c(0.0, 0.0));
        assert!(beltrami_path(c(1.0, 0.0), 0.5).is_err());
        assert!(beltrami_path(mu, 1.5).is_err());
    }

    proptest! {
        #[test]
        fn beltrami_semigroup_and_monotone(m in 0.01f64..0.99, th in 0.0f64..std::f64::consts::TAU, a in 0.0f64..1.0, b in 0.0f64..1.0) {
            let mu = Complex64::from_polar(m, th);
            let ma = beltrami_path(mu, a).unwrap().norm();
            prop_assert!((ma.atanh() - a * m.atanh()).abs() < 1e-14);
            prop_assert!(ma <= m + 1e-15);
            let mb = beltrami_path(mu, b).unwrap().norm();
            if a < b { prop_assert!(ma < mb); }
        }
    }

    #[test]
    fn qc_constants() {
        let q = QcConstants::new(1.0 / 3.0).unwrap();
        assert_eq!(q.k, 2.0);
        for m in [0.1, 0.2, 0.3] {
            let q = QcConstants::new(m).unwrap();
            assert!((q.cr_distortion - m.atanh()).abs() < 1e-14);
            assert_eq!(q.step_dilatation(0.0, 1.0), q.k);
            assert_eq!(q.step_dilatation(0.4, 0.4), 1.0);
            assert_relative_eq!(q.step_beltrami_bound(0.0, 1.0), m, max_relative = 1e-14);
        }
        assert!(QcConstants::new(0.0).is_err());
        assert!(QcConstants::new(1.0).is_err());
    }

    #[test]
    fn ball_bound() {
        let b = euclid_ball_bound(1.5, c(1.0, 0.0)).unwrap();
        assert!((b - 0.5 * (1.0 + 1.5 * PI)).abs() < 1e-15);
        assert!(euclid_ball_bound(1.0 + 1e-12, c(3.0, 2.0)).unwrap() < 1e-10);
        assert!(euclid_ball_bound(1.0, c(0.0, 0.0)).is_err());
        let m = 0.25;
        let q = QcConstants::new(m).unwrap();
        let r = c(-2.0, 1.0);
        let theirs = 2.0 * m / (1.0 - m) * (r.re.abs() + 1.5 * PI);
        assert_relative_eq!(
            euclid_ball_bound(q.k, r).unwrap(),
            theirs,
            max_relative = 1e-15
        );
    }

    #[test]
    fn schwarzian_of_mobius_vanishes() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for _ in 0..50 {
            let g = random_mobius(&mut rng);
            let z = random_c(&mut rng, 1.0);
            // truncation error of the third difference is about 30 h^2 / |z - pole|^4,
            // roundoff about eps |f| / (h^3 |f'|)
            let d1 = 1.0 / (g.c * z + g.d).powi(2);
            if (z - (-g.d / g.c)).norm() < 3.0 || g.apply_finite(z).norm() > 0.5 * d1.norm() {
                continue;
            }
            let s = schwarzian_fd(|w| g.apply_finite(w), z, 1e-3).unwrap();
            assert!(s.norm() < 1e-6, "{s}");
        }
    }

    #[test]
    fn schwarzian_of_exp() {
        for z in [c(0.0, 0.0), c(0.5, 1.0), c(-1.0, -2.0)] {
            let s = schwarzian_fd(|w| w.exp(), z, 1e-3).unwrap();
            assert!((s + 0.5).norm() < 1e-6, "{s}");
        }
    }

    #[test]
    fn schwarzian_cocycle() {
        let zeta = |w: Complex64| w.exp();
        let omega = |w: Complex64| w + 0.1 * w.sin();
        for z in [c(0.1, 0.2), c(-0.3, 0.4), c(0.2, -0.5)] {
            let h = 1e-3;
            let lhs = schwarzian_fd(|w| omega(zeta(w)), z, h).unwrap();
            let dz = zeta(z);
            let rhs = schwarzian_fd(zeta, z, h).unwrap()
                + schwarzian_fd(omega, zeta(z), h).unwrap() * dz * dz;
            assert!((lhs - rhs).norm() < 1e-5, "{lhs} {rhs}");
        }
    }

    #[test]
    fn schwarzian_post_composition_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let f = |w: Complex64| w + 0.1 * w.sin();
        for _ in 0..20 {
            let g = random_mobius(&mut rng);
            let z = random_c(&mut rng, 0.5);
            let fz = f(z);
            if (fz - (-g.d / g.c)).norm() < 3.0 {
                continue;
            }
            let a = schwarzian_fd(f, z, 1e-3).unwrap();
            let b = schwarzian_fd(|w| g.apply_finite(f(w)), z, 1e-3).unwrap();
            assert!((a - b).norm() < 1e-5, "{a} {b}");
        }
    }

    #[test]
    fn schwarzian_errors() {
        assert!(matches!(
            schwarzian_fd(|_| c(1.0, 0.0), c(0.0, 0.0), 1e-3),
            Err(HyperbolicError::Cancellation { .. })
        ));
        assert!(matches!(
            schwarzian_fd(|w| 1.0 / w, c(0.0, 0.0), 1e-3),
            Err(HyperbolicError::Stencil { .. })
        ));
    }
}
