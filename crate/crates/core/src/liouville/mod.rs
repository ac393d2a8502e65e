//! The coordinate `y` conjugating the Hill operator of a potential `p` to the
//! free operator with potential `1/4`, together with checks of the identities
//! and bounds it is expected to satisfy.
//!
//! `y` is realised from a Wronskian-one pair `(psi, psit)`. `psit` is the
//! solution that looks like the free growing solution at the left anchor
//! `-L + i*mid` and `psi` the one that looks like the free decaying solution
//! at the right anchor `+L + i*mid`. Both are integrated in their stable
//! direction along the midline and stored at regularly spaced checkpoints;
//! `y` at any point of the strip with `|Re z| <= L` is obtained by a short
//! integration from the nearest checkpoint to its left, first horizontally
//! along the midline and then vertically.

mod checks;
mod probes;

use std::collections::HashMap;
use std::io::Write;
use std::sync::Mutex;

use num_complex::Complex64;
use rayon::prelude::*;
use thiserror::Error;

use crate::expr::PotentialExpr;
use crate::geometry::{GeometryError, Strip};
use crate::ode::{
    integrate_segment, rhs2, rhs5, run_path, HillState, IntegratorConfig, OdeError, SegmentStats,
    ZERO_CROSSING_EPS,
};

pub use checks::{
    displacement_bound, displacement_check, displacement_j, embedding_probe, injectivity_witness,
    translation_gauge, DisplacementCheck, EmbeddingReport, GaugeReport,
};
pub use probes::{operator_identity_residual, schwarzian_residual, OperatorProbe, SchwarzianProbe};

const CACHE_LIMIT: usize = 1 << 20;
const DECAY_PROBES: usize = 8;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LiouvilleError {
    #[error(transparent)]
    Ode(#[from] OdeError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("|p| = {value:e} at z = {z} exceeds the decay tolerance {tol:e}")]
    NoDecay { z: Complex64, value: f64, tol: f64 },
    #[error("z = {z} lies outside the strip")]
    OutsideStrip { z: Complex64 },
    #[error("|Re z| exceeds the anchor distance {half_width} at z = {z}")]
    BeyondAnchor { z: Complex64, half_width: f64 },
    #[error("finite-difference stencil of step {step} around z = {z} leaves the domain")]
    StencilOutside { z: Complex64, step: f64 },
    #[error("finite-difference cancellation at z = {z}: |y'| = {y_prime:e} for step {step}")]
    Cancellation {
        z: Complex64,
        y_prime: f64,
        step: f64,
    },
    #[error("square root of y' cannot be continued across the stencil at z = {z}")]
    BranchTracking { z: Complex64 },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("write failed: {0}")]
    Write(String),
}

/// Construction parameters for [`LiouvilleMap`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MapOptions {
    /// Anchors sit at `Re z = -anchor` and `Re z = +anchor`.
    pub anchor: f64,
    /// Height of the horizontal line carrying the anchors and checkpoints.
    /// Defaults to the midline of the strip.
    pub midline: Option<f64>,
    pub decay_tol: f64,
    pub allow_no_decay: bool,
    /// Target distance between checkpoints.
    pub spacing: f64,
}

impl Default for MapOptions {
    fn default() -> Self {
        MapOptions {
            anchor: 25.0,
            midline: None,
            decay_tol: 1e-8,
            allow_no_decay: false,
            spacing: 0.25,
        }
    }
}

impl MapOptions {
    pub fn with_anchor(anchor: f64) -> Self {
        MapOptions {
            anchor,
            ..Default::default()
        }
    }
}

#[derive(Debug)]
pub struct LiouvilleMap {
    strip: Strip,
    p: PotentialExpr,
    anchor_re: f64,
    midline_im: f64,
    cfg: IntegratorConfig,
    spacing: f64,
    checkpoints: Vec<HillState>,
    kappa: [Complex64; 2],
    normalization_error_estimate: f64,
    cache: Mutex<HashMap<(u64, u64), HillState>>,
}

fn kappa_at(p: &PotentialExpr, z: Complex64) -> Result<Complex64, OdeError> {
    let v = p.eval(z).map_err(|_| OdeError::Pole { z })?;
    Ok((0.25 + v / 2.0).sqrt())
}

/// The branch of `log(w)` closest to `target`.
pub(crate) fn log_near(w: Complex64, target: Complex64) -> Complex64 {
    let l = w.ln();
    let turns = ((target.im - l.im) / std::f64::consts::TAU).round();
    Complex64::new(l.re, l.im + turns * std::f64::consts::TAU)
}

fn bits(z: Complex64) -> (u64, u64) {
    (z.re.to_bits(), z.im.to_bits())
}

/// Builds the map `y` for `p` on `strip`.
pub fn construct_map(
    strip: &Strip,
    p: &PotentialExpr,
    opts: &MapOptions,
    cfg: &IntegratorConfig,
) -> Result<LiouvilleMap, LiouvilleError> {
    cfg.validate()?;
    let l = opts.anchor;
    if !(l.is_finite() && l > 0.0) {
        return Err(LiouvilleError::InvalidArgument(
            "anchor distance must be positive".into(),
        ));
    }
    if !(opts.spacing.is_finite() && opts.spacing > 0.0) {
        return Err(LiouvilleError::InvalidArgument(
            "checkpoint spacing must be positive".into(),
        ));
    }
    if !(opts.decay_tol >= 0.0) {
        return Err(LiouvilleError::InvalidArgument(
            "decay tolerance must be non-negative".into(),
        ));
    }
    let mid = opts.midline.unwrap_or_else(|| strip.midline_im());
    let zl = Complex64::new(-l, mid);
    let zr = Complex64::new(l, mid);
    if !strip.contains(zl) {
        return Err(LiouvilleError::OutsideStrip { z: zl });
    }

    let mut tail = 0.0;
    for side in [-1.0, 1.0] {
        for k in 0..=DECAY_PROBES {
            let z = Complex64::new(side * (l + k as f64), mid);
            let value = p.eval(z).map_err(|_| OdeError::Pole { z })?.norm();
            if !opts.allow_no_decay && !(value <= opts.decay_tol) {
                return Err(LiouvilleError::NoDecay {
                    z,
                    value,
                    tol: opts.decay_tol,
                });
            }
            let w = if k == 0 || k == DECAY_PROBES {
                0.5
            } else {
                1.0
            };
            tail += w * value;
        }
    }
    let normalization_error_estimate = if tail.is_finite() {
        tail
    } else {
        opts.decay_tol * l
    };

    let n = ((2.0 * l / opts.spacing).ceil() as usize).max(2);
    let spacing = 2.0 * l / n as f64;
    let nodes: Vec<Complex64> = (0..=n)
        .map(|k| {
            let x = if k == n { l } else { -l + k as f64 * spacing };
            Complex64::new(x, mid)
        })
        .collect();

    let kl = kappa_at(p, zl)?;
    let kr = kappa_at(p, zr)?;
    let f2 = |z: Complex64, u: &[Complex64; 2]| rhs2(p, z, u);
    let mut stats = SegmentStats::default();

    let mut growing = Vec::with_capacity(n + 1);
    let t0 = (kl * zl).exp() / (2.0 * kl).sqrt();
    let mut u = [t0, kl * t0];
    growing.push(u);
    let mut h = cfg.h_init;
    for w in nodes.windows(2) {
        u = integrate_segment(f2, w[0], w[1] - w[0], u, cfg, &mut h, &mut stats, |_, _| {})?;
        growing.push(u);
    }

    let mut decaying = vec![[Complex64::new(0.0, 0.0); 2]; n + 1];
    let s0 = (-kr * zr).exp() / (2.0 * kr).sqrt();
    let mut u = [s0, -kr * s0];
    decaying[n] = u;
    let mut h = cfg.h_init;
    for k in (0..n).rev() {
        u = integrate_segment(
            f2,
            nodes[k + 1],
            nodes[k] - nodes[k + 1],
            u,
            cfg,
            &mut h,
            &mut stats,
            |_, _| {},
        )?;
        decaying[k] = u;
    }

    let c = n / 2;
    let wr = decaying[c][0] * growing[c][1] - decaying[c][1] * growing[c][0];
    if !(wr.norm() > 0.0) || !wr.re.is_finite() || !wr.im.is_finite() {
        return Err(OdeError::ZeroCrossing { z: nodes[c] }.into());
    }

    let mut checkpoints = Vec::with_capacity(n + 1);
    let mut y_prev = Complex64::new(0.0, 0.0);
    for k in 0..=n {
        let z = nodes[k];
        let psi = decaying[k][0] / wr;
        let dpsi = decaying[k][1] / wr;
        let [psit, dpsit] = growing[k];
        if !((psi * psit).norm() >= ZERO_CROSSING_EPS) {
            return Err(OdeError::ZeroCrossing { z }.into());
        }
        let ratio = psit / psi;
        let y = if k == 0 {
            log_near(ratio, 2.0 * kl * zl)
        } else {
            let prev: &HillState = &checkpoints[k - 1];
            let mut s = SegmentStats::default();
            let end = run_path(
                p,
                &HillState { y: y_prev, ..*prev },
                &[prev.z, z],
                cfg,
                &mut s,
                |_| {},
            )?;
            log_near(ratio, end.y)
        };
        y_prev = y;
        checkpoints.push(HillState {
            z,
            psi,
            dpsi,
            psit,
            dpsit,
            y,
        });
    }

    Ok(LiouvilleMap {
        strip: *strip,
        p: p.clone(),
        anchor_re: -l,
        midline_im: mid,
        cfg: *cfg,
        spacing,
        checkpoints,
        kappa: [kl, kr],
        normalization_error_estimate,
        cache: Mutex::new(HashMap::new()),
    })
}

impl LiouvilleMap {
    pub fn strip(&self) -> &Strip {
        &self.strip
    }

    pub fn potential(&self) -> &PotentialExpr {
        &self.p
    }

    /// `-L`, the real part of the left anchor.
    pub fn anchor_re(&self) -> f64 {
        self.anchor_re
    }

    pub fn half_width(&self) -> f64 {
        -self.anchor_re
    }

    pub fn midline_im(&self) -> f64 {
        self.midline_im
    }

    pub fn config(&self) -> &IntegratorConfig {
        &self.cfg
    }

    pub fn normalization_error_estimate(&self) -> f64 {
        self.normalization_error_estimate
    }

    /// `sqrt(1/4 + p/2)` at the left and right anchors.
    pub fn anchor_kappa(&self) -> [Complex64; 2] {
        self.kappa
    }

    pub fn checkpoints(&self) -> &[HillState] {
        &self.checkpoints
    }

    pub fn cached_points(&self) -> usize {
        self.cache.lock().map(|c| c.len()).unwrap_or(0)
    }

    fn check_point(&self, z: Complex64) -> Result<(), LiouvilleError> {
        if !self.strip.contains(z) {
            return Err(LiouvilleError::OutsideStrip { z });
        }
        if !(z.re.abs() <= self.half_width()) {
            return Err(LiouvilleError::BeyondAnchor {
                z,
                half_width: self.half_width(),
            });
        }
        Ok(())
    }

    fn checkpoint_for(&self, x: f64) -> &HillState {
        let n = self.checkpoints.len() - 1;
        let k = ((x - self.anchor_re) / self.spacing).floor();
        let k = if k.is_nan() {
            0
        } else {
            (k.max(0.0) as usize).min(n - 1)
        };
        &self.checkpoints[k]
    }

    fn run_from(&self, start: &HillState, via: &[Complex64]) -> Result<HillState, OdeError> {
        let mut vertices = Vec::with_capacity(via.len() + 1);
        vertices.push(start.z);
        for &v in via {
            if *vertices.last().unwrap() != v {
                vertices.push(v);
            }
        }
        let mut stats = SegmentStats::default();
        run_path(&self.p, start, &vertices, &self.cfg, &mut stats, |_| {})
    }

    /// The full Hill state at `z`, reached along the canonical path.
    pub fn evaluate_state(&self, z: Complex64) -> Result<HillState, LiouvilleError> {
        self.check_point(z)?;
        let key = bits(z);
        if let Some(s) = self.cache.lock().ok().and_then(|c| c.get(&key).copied()) {
            return Ok(s);
        }
        let start = self.checkpoint_for(z.re);
        let corner = Complex64::new(z.re, self.midline_im);
        let s = self.run_from(start, &[corner, z])?;
        let s = HillState { z, ..s };
        if let Ok(mut c) = self.cache.lock() {
            if c.len() < CACHE_LIMIT {
                c.insert(key, s);
            }
        }
        Ok(s)
    }

    pub fn evaluate_y(&self, z: Complex64) -> Result<Complex64, LiouvilleError> {
        Ok(self.evaluate_state(z)?.y)
    }

    /// The Hill state at `z` reached from the canonical starting checkpoint
    /// through the given intermediate points instead of the canonical path.
    pub fn evaluate_state_via(
        &self,
        waypoints: &[Complex64],
        z: Complex64,
    ) -> Result<HillState, LiouvilleError> {
        self.check_point(z)?;
        for &w in waypoints {
            if !self.strip.contains(w) {
                return Err(LiouvilleError::OutsideStrip { z: w });
            }
        }
        let start = self.checkpoint_for(z.re);
        let mut via = waypoints.to_vec();
        via.push(z);
        let s = self.run_from(start, &via)?;
        Ok(HillState { z, ..s })
    }

    /// States at `center + offsets[k]`, integrated from the state at
    /// `center` with `y` reset to zero so that the `y` components are
    /// increments.
    pub(crate) fn stencil(
        &self,
        center: &HillState,
        offsets: &[Complex64],
    ) -> Result<Vec<HillState>, LiouvilleError> {
        let base = HillState {
            y: Complex64::new(0.0, 0.0),
            ..*center
        };
        offsets
            .iter()
            .map(|&d| {
                if d == Complex64::new(0.0, 0.0) {
                    return Ok(base);
                }
                let cfg = IntegratorConfig {
                    h_init: d.norm(),
                    h_max: self.cfg.h_max.max(d.norm()),
                    ..self.cfg
                };
                let mut u = base.to_array();
                let mut h = cfg.h_init;
                let mut stats = SegmentStats::default();
                u = integrate_segment(
                    |zz, uu: &[Complex64; 5]| rhs5(&self.p, zz, uu),
                    base.z,
                    d,
                    u,
                    &cfg,
                    &mut h,
                    &mut stats,
                    |_, _| {},
                )?;
                Ok(HillState::from_array(base.z + d, &u))
            })
            .collect()
    }
}

/// Writes CSV rows `re_z, im_z, re_y, im_y, re_dy, im_dy` for `points`, in
/// order. Points are evaluated in parallel.
pub fn write_map_csv<W: Write>(
    map: &LiouvilleMap,
    points: &[Complex64],
    out: W,
) -> Result<(), LiouvilleError> {
    let states: Vec<HillState> = points
        .par_iter()
        .map(|&z| map.evaluate_state(z))
        .collect::<Result<_, _>>()?;
    let err = |e: csv::Error| LiouvilleError::Write(e.to_string());
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["re_z", "im_z", "re_y", "im_y", "re_dy", "im_dy"])
        .map_err(err)?;
    for s in &states {
        let dy = s.y_prime();
        let row = [s.z.re, s.z.im, s.y.re, s.y.im, dy.re, dy.im].map(|v| v.to_string());
        w.write_record(&row).map_err(err)?;
    }
    w.flush()
        .map_err(|e| LiouvilleError::Write(e.to_string()))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn build(src: &str, opts: MapOptions) -> LiouvilleMap {
        let p = PotentialExpr::parse(src).unwrap();
        construct_map(&Strip::standard(), &p, &opts, &IntegratorConfig::default()).unwrap()
    }

    fn sech_opts() -> MapOptions {
        MapOptions::default()
    }

    fn const_opts() -> MapOptions {
        MapOptions {
            allow_no_decay: true,
            ..Default::default()
        }
    }

    #[test]
    fn free_map_is_identity() {
        let map = build("0", MapOptions::default());
        assert_eq!(map.anchor_kappa(), [c(0.5, 0.0), c(0.5, 0.0)]);
        for z in [
            c(3.0, 1.0),
            c(-20.0, 0.01),
            c(0.0, PI - 0.01),
            c(25.0, 0.5),
            c(-25.0, 1.5),
        ] {
            let y = map.evaluate_y(z).unwrap();
            assert!((y - z).norm() < 1e-9, "{z} -> {y}");
        }
        for s in map.checkpoints() {
            assert!((s.wronskian() - 1.0).norm() < 1e-9);
        }
    }

    #[test]
    fn constant_potential_is_linear() {
        for cv in [c(0.05, 0.0), c(0.1, 0.0), c(0.0, 0.05)] {
            let src = format!("({} + {}i)", cv.re, cv.im);
            let map = build(&src, const_opts());
            let kappa = (0.25 + cv / 2.0).sqrt();
            let z0 = c(0.0, PI / 2.0);
            let y0 = map.evaluate_y(z0).unwrap();
            for z in [c(1.0, PI / 2.0), c(-7.5, 0.2), c(12.0, 3.0), c(20.0, 1.0)] {
                let y = map.evaluate_y(z).unwrap();
                let dev = (y - y0 - 2.0 * kappa * (z - z0)).norm();
                assert!(dev < 1e-8, "c = {cv}, z = {z}: {dev:e}");
            }
            // gauge: y = 2 kappa z exactly
            assert!((y0 - 2.0 * kappa * z0).norm() < 1e-8);
        }
    }

    #[test]
    fn unit_real_step_gives_two_kappa() {
        let map = build("0.1", const_opts());
        let kappa = (0.25_f64 + 0.05).sqrt();
        let z = c(2.3, 0.7);
        let d = map.evaluate_y(z + 1.0).unwrap() - map.evaluate_y(z).unwrap();
        assert!((d - 2.0 * kappa).norm() < 1e-8);
    }

    #[test]
    fn decay_is_enforced() {
        let p = PotentialExpr::parse("0.1").unwrap();
        let err = construct_map(
            &Strip::standard(),
            &p,
            &MapOptions::default(),
            &IntegratorConfig::default(),
        )
        .unwrap_err();
        assert!(matches!(err, LiouvilleError::NoDecay { .. }));
        let p = PotentialExpr::parse("0.05*sech(z - i*pi/2)^2").unwrap();
        let err = construct_map(
            &Strip::standard(),
            &p,
            &MapOptions::with_anchor(5.0),
            &IntegratorConfig::default(),
        )
        .unwrap_err();
        assert!(matches!(err, LiouvilleError::NoDecay { .. }));
    }

    #[test]
    fn sech_family_stays_close_to_identity() {
        let map = build("0.05*sech(z - i*pi/2)^2", sech_opts());
        let mut worst = 0.0_f64;
        for k in 0..=40 {
            for im in [0.05, PI / 4.0, PI / 2.0, 3.0 * PI / 4.0, PI - 0.05] {
                let z = c(-20.0 + k as f64, im);
                worst = worst.max((map.evaluate_y(z).unwrap() - z).norm());
            }
        }
        assert!(worst < 0.2, "{worst}");
        assert!(worst > 1e-3);
        assert!(map.normalization_error_estimate() < 1e-9);
    }

    #[test]
    fn evaluation_is_path_independent() {
        let map = build(
            "0.05*sech(z - i*pi/2)^2 + 0.01i*sech(z - i*pi/2)^2",
            sech_opts(),
        );
        for z in [c(0.3, 0.4), c(-4.2, 2.9), c(7.0, 1.0)] {
            let canon = map.evaluate_state(z).unwrap();
            let other = map
                .evaluate_state_via(&[c(z.re - 0.1, 3.0), c(z.re + 2.0, 0.3)], z)
                .unwrap();
            assert!((canon.y - other.y).norm() < 10.0 * 1e-10, "{z}");
            assert!((canon.psi - other.psi).norm() < 10.0 * 1e-10 * canon.psi.norm());
        }
    }

    #[test]
    fn evaluation_is_deterministic_and_cached() {
        let map = build("0.05*sech(z - i*pi/2)^2", sech_opts());
        let z = c(1.25, 2.0);
        let a = map.evaluate_y(z).unwrap();
        assert_eq!(map.cached_points(), 1);
        let b = map.evaluate_y(z).unwrap();
        assert_eq!(a, b);
        let fresh = build("0.05*sech(z - i*pi/2)^2", sech_opts());
        assert_eq!(fresh.evaluate_y(z).unwrap(), a);
    }

    #[test]
    fn states_satisfy_invariants() {
        let map = build("0.02*sech(z - i*pi/2)^2", sech_opts());
        for z in [c(-24.0, 0.1), c(0.0, 1.0), c(24.9, 3.0)] {
            let s = map.evaluate_state(z).unwrap();
            assert!((s.wronskian() - 1.0).norm() < 1e-9);
            assert!(s.log_consistency() < 1e-8);
            assert_relative_eq!(s.y_prime().re, 1.0, max_relative = 0.2);
        }
    }

    #[test]
    fn domain_errors() {
        let map = build("0", MapOptions::with_anchor(10.0));
        assert!(matches!(
            map.evaluate_y(c(10.5, 1.0)),
            Err(LiouvilleError::BeyondAnchor { .. })
        ));
        assert!(matches!(
            map.evaluate_y(c(0.0, 4.0)),
            Err(LiouvilleError::OutsideStrip { .. })
        ));
    }

    #[test]
    fn infinite_strip_uses_midline_pi() {
        let p = PotentialExpr::zero();
        let map = construct_map(
            &Strip::infinite(),
            &p,
            &MapOptions::with_anchor(5.0),
            &IntegratorConfig::default(),
        )
        .unwrap();
        assert_eq!(map.midline_im(), PI);
        let z = c(1.0, 5.5);
        assert!((map.evaluate_y(z).unwrap() - z).norm() < 1e-9);
    }

    #[test]
    fn log_near_picks_branch() {
        let w = c(-1.0, 1e-3);
        let l = log_near(w, c(0.0, -PI));
        assert!((l.im + PI).abs() < 1e-2);
        let l = log_near(c(1.0, 0.0), c(0.0, 13.0));
        assert!((l.im - 4.0 * PI).abs() < 1e-12);
    }

    #[test]
    fn map_csv_rows() {
        let map = build("0", MapOptions::default());
        let pts = [c(0.0, 1.0), c(2.5, 0.5)];
        let mut buf = Vec::new();
        write_map_csv(&map, &pts, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 3);
        assert_eq!(lines[0], "re_z,im_z,re_y,im_y,re_dy,im_dy");
        let f: Vec<f64> = lines[2].split(',').map(|v| v.parse().unwrap()).collect();
        assert!((f[2] - 2.5).abs() < 1e-9 && (f[3] - 0.5).abs() < 1e-9);
        assert!((f[4] - 1.0).abs() < 1e-9 && f[5].abs() < 1e-9);
    }
}
