use std::collections::HashMap;
use std::f64::consts::PI;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;

use super::{LiouvilleError, LiouvilleMap};
use crate::geometry::{linspace, GridSpec};

/// Comparison of a displacement `r` in `z` with the displacement `r'` in `y`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DisplacementCheck {
    #[serde(serialize_with = "ser_c")]
    pub m_start: Complex64,
    #[serde(serialize_with = "ser_c")]
    pub m_end: Complex64,
    #[serde(serialize_with = "ser_c")]
    pub r: Complex64,
    #[serde(serialize_with = "ser_c")]
    pub r_prime: Complex64,
    pub j: u64,
    pub bound: f64,
    pub deviation: f64,
    pub pass: bool,
}

impl DisplacementCheck {
    pub fn ratio(&self) -> f64 {
        self.deviation / self.bound
    }
}

fn ser_c<S: serde::Serializer>(z: &Complex64, s: S) -> Result<S::Ok, S::Error> {
    [z.re, z.im].serialize(s)
}

/// The least `j >= 1` with `|Im r| <= j pi`.
pub fn displacement_j(r: Complex64) -> u64 {
    let q = (r.im.abs() / PI).ceil();
    if q.is_finite() && q > 1.0 {
        q as u64
    } else {
        1
    }
}

/// `(2M/(1-M)) (|Re r| + 3 j pi / 2)`.
pub fn displacement_bound(m: f64, r: Complex64) -> f64 {
    let j = displacement_j(r) as f64;
    2.0 * m / (1.0 - m) * (r.re.abs() + 1.5 * j * PI)
}

pub fn displacement_check(
    map: &LiouvilleMap,
    m: f64,
    m_start: Complex64,
    m_end: Complex64,
) -> Result<DisplacementCheck, LiouvilleError> {
    if !(m > 0.0 && m < 1.0) {
        return Err(LiouvilleError::InvalidArgument(
            "M must lie in (0, 1)".into(),
        ));
    }
    let r = m_end - m_start;
    let r_prime = map.evaluate_y(m_end)? - map.evaluate_y(m_start)?;
    let bound = displacement_bound(m, r);
    let deviation = (r_prime - r).norm();
    Ok(DisplacementCheck {
        m_start,
        m_end,
        r,
        r_prime,
        j: displacement_j(r),
        bound,
        deviation,
        pass: deviation <= bound,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaugeReport {
    /// Mean of `y_A - y_B` over the samples.
    pub c: Complex64,
    pub max_dev: f64,
}

pub fn translation_gauge(
    a: &LiouvilleMap,
    b: &LiouvilleMap,
    samples: &[Complex64],
) -> Result<GaugeReport, LiouvilleError> {
    if samples.is_empty() {
        return Err(LiouvilleError::InvalidArgument("no sample points".into()));
    }
    let diffs: Vec<Complex64> = samples
        .par_iter()
        .map(|&z| Ok(a.evaluate_y(z)? - b.evaluate_y(z)?))
        .collect::<Result<_, LiouvilleError>>()?;
    let c = diffs.iter().sum::<Complex64>() / diffs.len() as f64;
    let max_dev = diffs.iter().map(|d| (d - c).norm()).fold(0.0, f64::max);
    Ok(GaugeReport { c, max_dev })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EmbeddingReport {
    pub points: usize,
    pub injective: bool,
    /// First pair of grid points, at least `sep` apart, whose images are
    /// closer than `img_tol`.
    pub injectivity_witness: Option<[[f64; 2]; 2]>,
    pub midline_monotone: bool,
    pub monotone_witness: Option<[f64; 2]>,
    /// Slopes of `Re y` along the midline at the left and right ends.
    pub tip_slopes: [f64; 2],
    pub tips_ok: bool,
    /// `max |y - z - c|` with `c` the mean of `y - z`.
    pub max_gauge_deviation: f64,
    /// Points where `y` could not be evaluated.
    pub failed_points: Vec<[f64; 2]>,
    pub pass: bool,
}

/// First pair `(i, j)`, `i < j`, with `|z_i - z_j| >= sep` and
/// `|y_i - y_j| < img_tol`.
pub fn injectivity_witness(
    zs: &[Complex64],
    ys: &[Complex64],
    sep: f64,
    img_tol: f64,
) -> Option<(usize, usize)> {
    assert_eq!(zs.len(), ys.len());
    let cell = |w: Complex64| {
        (
            (w.re / img_tol).floor() as i64,
            (w.im / img_tol).floor() as i64,
        )
    };
    let mut buckets: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
    for (k, &y) in ys.iter().enumerate() {
        buckets.entry(cell(y)).or_default().push(k);
    }
    let mut best: Option<(usize, usize)> = None;
    for (i, &y) in ys.iter().enumerate() {
        let (cx, cy) = cell(y);
        for dx in -1..=1 {
            for dy in -1..=1 {
                let Some(list) = buckets.get(&(cx + dx, cy + dy)) else {
                    continue;
                };
                for &j in list {
                    if j > i
                        && (ys[j] - y).norm() < img_tol
                        && (zs[j] - zs[i]).norm() >= sep
                        && best.is_none_or(|b| (i, j) < b)
                    {
                        best = Some((i, j));
                    }
                }
            }
        }
    }
    best
}

pub fn embedding_probe(
    map: &LiouvilleMap,
    grid: &GridSpec,
    sep: f64,
    img_tol: f64,
) -> Result<EmbeddingReport, LiouvilleError> {
    grid.validate(map.strip())?;
    if !(sep > 0.0 && img_tol > 0.0) {
        return Err(LiouvilleError::InvalidArgument(
            "sep and img_tol must be positive".into(),
        ));
    }
    let pts = grid.points(map.strip());
    let vals: Vec<Result<Complex64, LiouvilleError>> =
        pts.par_iter().map(|&z| map.evaluate_y(z)).collect();
    let mut zs = Vec::with_capacity(pts.len());
    let mut ys = Vec::with_capacity(pts.len());
    let mut failed_points = Vec::new();
    for (z, v) in pts.iter().zip(vals) {
        match v {
            Ok(y) => {
                zs.push(*z);
                ys.push(y);
            }
            Err(_) => failed_points.push([z.re, z.im]),
        }
    }

    let injectivity_witness = injectivity_witness(&zs, &ys, sep, img_tol)
        .map(|(i, j)| [[zs[i].re, zs[i].im], [zs[j].re, zs[j].im]]);

    let xs = linspace(grid.x_min, grid.x_max, grid.nx.max(2));
    let mid: Vec<(f64, Result<Complex64, LiouvilleError>)> = xs
        .par_iter()
        .map(|&x| (x, map.evaluate_y(Complex64::new(x, map.midline_im()))))
        .collect();
    let mut line = Vec::with_capacity(mid.len());
    for (x, v) in mid {
        match v {
            Ok(y) => line.push((x, y.re)),
            Err(_) => failed_points.push([x, map.midline_im()]),
        }
    }
    let monotone_witness = line
        .windows(2)
        .find(|w| !(w[1].1 > w[0].1))
        .map(|w| [w[1].0, map.midline_im()]);
    let slope = |a: (f64, f64), b: (f64, f64)| (b.1 - a.1) / (b.0 - a.0);
    let tip_slopes = if line.len() >= 2 {
        let n = line.len();
        [slope(line[0], line[1]), slope(line[n - 2], line[n - 1])]
    } else {
        [f64::NAN, f64::NAN]
    };
    let span_ok = line.len() >= 2 && {
        let (a, b) = (line[0], line[line.len() - 1]);
        b.1 - a.1 >= 0.5 * (b.0 - a.0)
    };
    let tips_ok = span_ok && tip_slopes.iter().all(|s| *s > 0.0);

    let max_gauge_deviation = if ys.is_empty() {
        f64::NAN
    } else {
        let c = zs.iter().zip(&ys).map(|(z, y)| y - z).sum::<Complex64>() / ys.len() as f64;
        zs.iter()
            .zip(&ys)
            .map(|(z, y)| (y - z - c).norm())
            .fold(0.0, f64::max)
    };

    let injective = injectivity_witness.is_none();
    let midline_monotone = monotone_witness.is_none();
    let pass = injective
        && midline_monotone
        && tips_ok
        && failed_points.is_empty()
        && max_gauge_deviation.is_finite();
    Ok(EmbeddingReport {
        points: pts.len(),
        injective,
        injectivity_witness,
        midline_monotone,
        monotone_witness,
        tip_slopes,
        tips_ok,
        max_gauge_deviation,
        failed_points,
        pass,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::PotentialExpr;
    use crate::geometry::Strip;
    use crate::liouville::{construct_map, MapOptions};
    use crate::ode::IntegratorConfig;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn build(src: &str, opts: MapOptions) -> LiouvilleMap {
        construct_map(
            &Strip::standard(),
            &PotentialExpr::parse(src).unwrap(),
            &opts,
            &IntegratorConfig::default(),
        )
        .unwrap()
    }

    #[test]
    fn j_and_bound_arithmetic() {
        assert_eq!(displacement_j(c(1.0, 0.0)), 1);
        assert_eq!(displacement_j(c(0.0, PI)), 1);
        assert_eq!(displacement_j(c(0.0, -PI)), 1);
        assert_eq!(displacement_j(c(0.0, 3.5 * PI)), 4);
        assert_eq!(displacement_j(c(0.0, 1.0000001 * PI)), 2);
        let b = displacement_bound(0.2, c(1.0, 0.0));
        assert!((b - 0.5 * (1.0 + 1.5 * PI)).abs() < 1e-15);
        assert!((b - 2.856194490192345).abs() < 1e-12);
    }

    #[test]
    fn free_displacements_vanish() {
        let map = build("0", MapOptions::default());
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let a = c(rng.gen_range(-20.0..20.0), rng.gen_range(0.01..PI - 0.01));
            let b = c(rng.gen_range(-20.0..20.0), rng.gen_range(0.01..PI - 0.01));
            let d = displacement_check(&map, 0.3, a, b).unwrap();
            assert!(d.pass);
            assert!(d.deviation < 1e-9);
            assert_eq!(d.r, b - a);
        }
        assert!(displacement_check(&map, 1.0, c(0.0, 1.0), c(1.0, 1.0)).is_err());
    }

    #[test]
    fn sech_displacements_pass() {
        let map = build("0.05*sech(z - i*pi/2)^2", MapOptions::default());
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..200 {
            let a = c(rng.gen_range(-10.0..10.0), rng.gen_range(0.01..PI - 0.01));
            let b = c(rng.gen_range(-10.0..10.0), rng.gen_range(0.01..PI - 0.01));
            let d = displacement_check(&map, 0.3, a, b).unwrap();
            assert!(d.pass, "{d:?}");
            assert!(d.ratio() < 1.0);
        }
    }

    #[test]
    fn gauge_between_anchors() {
        let pts: Vec<Complex64> = (0..30)
            .map(|k| c(-9.0 + 0.6 * k as f64, 0.1 + 0.1 * k as f64))
            .collect();
        let a = build("0", MapOptions::with_anchor(10.0));
        let b = build("0", MapOptions::with_anchor(20.0));
        let g = translation_gauge(&a, &b, &pts).unwrap();
        assert!(g.c.norm() < 1e-9 && g.max_dev < 1e-9);
        let same = translation_gauge(&a, &a, &pts).unwrap();
        assert_eq!(same.c, c(0.0, 0.0));
        assert_eq!(same.max_dev, 0.0);
        let src = "0.05*sech(z - i*pi/2)^2";
        let a = build(src, MapOptions::with_anchor(15.0));
        let b = build(src, MapOptions::with_anchor(25.0));
        let g = translation_gauge(&a, &b, &pts).unwrap();
        assert!(g.max_dev < 1e-7, "{}", g.max_dev);
        let mid = build(
            src,
            MapOptions {
                midline: Some(1.0),
                ..MapOptions::with_anchor(20.0)
            },
        );
        let g = translation_gauge(&a, &mid, &pts).unwrap();
        assert!(g.max_dev < 1e-7, "{}", g.max_dev);
    }

    #[test]
    fn injectivity_detector() {
        let zs = vec![c(0.0, 0.0), c(1.0, 0.0), c(2.0, 0.0), c(0.05, 0.0)];
        let ys = vec![c(0.0, 0.0), c(5.0, 5.0), c(1e-4, 0.0), c(2e-4, 0.0)];
        assert_eq!(injectivity_witness(&zs, &ys, 0.1, 1e-3), Some((0, 2)));
        assert_eq!(injectivity_witness(&zs[..2], &ys[..2], 0.1, 1e-3), None);
        // close in z as well: not a violation
        assert_eq!(
            injectivity_witness(&[zs[0], zs[3]], &[ys[0], ys[3]], 0.1, 1e-3),
            None
        );
    }

    #[test]
    fn embedding_probe_free_and_sech() {
        let grid = GridSpec {
            nx: 60,
            ny: 12,
            x_min: -12.0,
            x_max: 12.0,
            edge_margin: 0.02,
        };
        for src in ["0", "0.05*sech(z - i*pi/2)^2"] {
            let map = build(src, MapOptions::default());
            let r = embedding_probe(&map, &grid, 0.1, 1e-3).unwrap();
            assert!(r.pass, "{src}: {r:?}");
            assert_eq!(r.points, 720);
            assert!(r.tip_slopes.iter().all(|s| (s - 1.0).abs() < 0.1));
        }
    }

    #[test]
    fn embedding_probe_reports_on_violating_potential() {
        let grid = GridSpec {
            nx: 20,
            ny: 8,
            x_min: -5.0,
            x_max: 5.0,
            edge_margin: 0.05,
        };
        let map = build(
            "5*sech(z - i*pi/2)^2",
            MapOptions {
                allow_no_decay: true,
                ..MapOptions::default()
            },
        );
        let r = embedding_probe(&map, &grid, 0.1, 1e-3).unwrap();
        assert_eq!(r.points, 160);
        assert_eq!(
            r.pass,
            r.injective
                && r.midline_monotone
                && r.tips_ok
                && r.failed_points.is_empty()
                && r.max_gauge_deviation.is_finite()
        );
    }
}
