//! The tract metric `|dz| / (2 (|Re z| + 3 pi / 2))` and polyline distances
//! in it.

use num_complex::Complex64;

use super::HyperbolicError;

pub const TRACT_OFFSET: f64 = 1.5 * std::f64::consts::PI;

pub fn tract_factor(z: Complex64) -> f64 {
    1.0 / (2.0 * (z.re.abs() + TRACT_OFFSET))
}

const GK_NODES: [f64; 8] = [
    0.991455371120812639206854697526329,
    0.949107912342758524526189684047851,
    0.864864423359769072789712788640926,
    0.741531185599394439863864773280788,
    0.586087235467691130294144845693013,
    0.405845151377397166906606412076961,
    0.207784955007898467600689403773245,
    0.0,
];
const GK_WEIGHTS: [f64; 8] = [
    0.022935322010529224963732008058970,
    0.063092092629978553290700663189204,
    0.104790010322250183839876322541518,
    0.140653259715525918745189590510238,
    0.169004726639267902826583426598550,
    0.190350578064785409913256402421014,
    0.204432940075298892414161999234649,
    0.209482141084727828012999174891714,
];
const G_WEIGHTS: [f64; 4] = [
    0.129484966168869693270611432679082,
    0.279705391489276667901467771423780,
    0.381830050505118944950369775488975,
    0.417959183673469387755102040816327,
];

const QUAD_REL_TOL: f64 = 1e-8;
const QUAD_MAX_DEPTH: u32 = 40;

/// Kronrod 15-point value and its distance to the embedded Gauss 7-point
/// value.
fn gk15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut k = GK_WEIGHTS[7] * fc;
    let mut g = G_WEIGHTS[3] * fc;
    for i in 0..7 {
        let dx = h * GK_NODES[i];
        let s = f(c - dx) + f(c + dx);
        k += GK_WEIGHTS[i] * s;
        if i % 2 == 1 {
            g += G_WEIGHTS[i / 2] * s;
        }
    }
    (k * h, ((k - g) * h).abs())
}

/// Bisects until both the Gauss-Kronrod estimate and the change against
/// the parent interval are below `tol`.
fn adaptive<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> Option<f64> {
    let m = 0.5 * (a + b);
    let (left, el) = gk15(f, a, m);
    let (right, er) = gk15(f, m, b);
    let sum = left + right;
    if !sum.is_finite() {
        return None;
    }
    let err = (sum - whole).abs().max(el + er);
    if err <= tol.max(4.0 * f64::EPSILON * sum.abs()) {
        return Some(sum);
    }
    if depth == 0 {
        return None;
    }
    Some(
        adaptive(f, a, m, left, 0.5 * tol, depth - 1)?
            + adaptive(f, m, b, right, 0.5 * tol, depth - 1)?,
    )
}

/// Length of the polyline through `vertices` in the conformal metric
/// `factor(z) |dz|`, by adaptive Gauss-Kronrod quadrature on each segment.
/// `factor` should be smooth along each segment; put a vertex at any kink.
pub fn polyline_length<F>(factor: F, vertices: &[Complex64]) -> Result<f64, HyperbolicError>
where
    F: Fn(Complex64) -> f64,
{
    let mut total = 0.0;
    for (k, w) in vertices.windows(2).enumerate() {
        let d = w[1] - w[0];
        let len = d.norm();
        if len == 0.0 {
            continue;
        }
        let g = |t: f64| factor(w[0] + d * t) * len;
        let (rough, _) = gk15(&g, 0.0, 1.0);
        let v = adaptive(
            &g,
            0.0,
            1.0,
            rough,
            QUAD_REL_TOL * rough.abs(),
            QUAD_MAX_DEPTH,
        )
        .ok_or(HyperbolicError::Quadrature { segment: k })?;
        total += v;
    }
    Ok(total)
}

/// `int_0^1 dt / (a + t (b - a))` for `a, b > 0`.
fn inverse_linear_mean(a: f64, b: f64) -> f64 {
    let u = (b - a) / a;
    if u == 0.0 {
        1.0 / a
    } else {
        u.ln_1p() / u / a
    }
}

/// Exact tract length of the straight segment from `a` to `b`.
pub fn tract_segment_length(a: Complex64, b: Complex64) -> f64 {
    let len = (b - a).norm();
    if len == 0.0 {
        return 0.0;
    }
    let (xa, xb) = (a.re, b.re);
    let w = |x: f64| x.abs() + TRACT_OFFSET;
    if xa * xb >= 0.0 {
        0.5 * len * inverse_linear_mean(w(xa), w(xb))
    } else {
        let t0 = xa / (xa - xb);
        0.5 * len
            * (t0 * inverse_linear_mean(w(xa), TRACT_OFFSET)
                + (1.0 - t0) * inverse_linear_mean(TRACT_OFFSET, w(xb)))
    }
}

fn polyline_tract_length(a: Complex64, interior: &[Complex64], b: Complex64) -> f64 {
    let mut prev = a;
    let mut total = 0.0;
    for &p in interior.iter().chain(std::iter::once(&b)) {
        total += tract_segment_length(prev, p);
        prev = p;
    }
    total
}

/// Settings for [`tract_distance`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TractSearch {
    /// Number of refinement levels; level `k` uses `2^k - 1` control points.
    pub levels: u32,
    pub max_evals: usize,
    /// Relative spread of simplex values at which a level is converged.
    pub ftol: f64,
}

impl Default for TractSearch {
    fn default() -> Self {
        TractSearch {
            levels: 3,
            max_evals: 20_000,
            ftol: 1e-12,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TractDistance {
    /// Length of the best polyline found: an upper bound estimate of the
    /// distance.
    pub value: f64,
    /// Best value after each refinement level.
    pub levels: Vec<f64>,
    pub control_points: Vec<Complex64>,
    pub converged: bool,
}

/// Approximate tract-metric distance by local search over polylines.
pub fn tract_distance(a: Complex64, b: Complex64, search: &TractSearch) -> TractDistance {
    if a == b {
        return TractDistance {
            value: 0.0,
            levels: vec![0.0],
            control_points: Vec::new(),
            converged: true,
        };
    }
    let mut pts = vec![0.5 * (a + b)];
    let mut best = polyline_tract_length(a, &pts, b);
    let mut levels = Vec::new();
    let mut converged = false;
    let scale = 0.1 * (b - a).norm();
    for level in 0..search.levels.max(1) {
        if level > 0 {
            let mut next = Vec::with_capacity(2 * pts.len() + 1);
            let mut prev = a;
            for &p in &pts {
                next.push(0.5 * (prev + p));
                next.push(p);
                prev = p;
            }
            next.push(0.5 * (prev + b));
            pts = next;
        }
        let x0: Vec<f64> = pts.iter().flat_map(|p| [p.re, p.im]).collect();
        let f = |x: &[f64]| {
            let ps: Vec<Complex64> = x.chunks(2).map(|c| Complex64::new(c[0], c[1])).collect();
            polyline_tract_length(a, &ps, b)
        };
        let (x, fx, ok) = nelder_mead(&f, &x0, scale, search.max_evals, search.ftol);
        if fx <= best {
            best = fx;
            pts = x.chunks(2).map(|c| Complex64::new(c[0], c[1])).collect();
        }
        levels.push(best);
        converged = ok;
    }
    TractDistance {
        value: best,
        levels,
        control_points: pts,
        converged,
    }
}

/// Derivative-free minimisation; returns the best point, its value and
/// whether the simplex collapsed before the evaluation budget ran out.
fn nelder_mead<F: Fn(&[f64]) -> f64>(
    f: &F,
    x0: &[f64],
    step: f64,
    max_evals: usize,
    ftol: f64,
) -> (Vec<f64>, f64, bool) {
    let n = x0.len();
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
    simplex.push((x0.to_vec(), f(x0)));
    for i in 0..n {
        let mut x = x0.to_vec();
        x[i] += step;
        let fx = f(&x);
        simplex.push((x, fx));
    }
    let mut evals = n + 1;
    let point = |c: &[f64], x: &[f64], t: f64| -> Vec<f64> {
        c.iter().zip(x).map(|(ci, xi)| ci + t * (xi - ci)).collect()
    };
    loop {
        simplex.sort_by(|p, q| p.1.total_cmp(&q.1));
        let lo = simplex[0].1;
        let hi = simplex[n].1;
        if (hi - lo).abs() <= ftol * (lo.abs() + f64::MIN_POSITIVE) {
            return (simplex[0].0.clone(), lo, true);
        }
        if evals >= max_evals {
            return (simplex[0].0.clone(), lo, false);
        }
        let mut centroid = vec![0.0; n];
        for (x, _) in &simplex[..n] {
            for (c, xi) in centroid.iter_mut().zip(x) {
                *c += xi / n as f64;
            }
        }
        let worst = simplex[n].0.clone();
        let xr = point(&centroid, &worst, -1.0);
        let fr = f(&xr);
        evals += 1;
        if fr < simplex[0].1 {
            let xe = point(&centroid, &worst, -2.0);
            let fe = f(&xe);
            evals += 1;
            simplex[n] = if fe < fr { (xe, fe) } else { (xr, fr) };
        } else if fr < simplex[n - 1].1 {
            simplex[n] = (xr, fr);
        } else {
            let (xc, fc) = if fr < simplex[n].1 {
                let x = point(&centroid, &worst, -0.5);
                let v = f(&x);
                (x, v)
            } else {
                let x = point(&centroid, &worst, 0.5);
                let v = f(&x);
                (x, v)
            };
            evals += 1;
            if fc < simplex[n].1.min(fr) {
                simplex[n] = (xc, fc);
            } else {
                let best = simplex[0].0.clone();
                for (x, fx) in simplex.iter_mut().skip(1) {
                    *x = point(&best, x, 0.5);
                    *fx = f(x);
                }
                evals += n;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    /// Distance for two points with `Re >= 0`: half the hyperbolic distance
    /// in the half-plane `Re z > -3 pi / 2`.
    fn same_side_exact(a: Complex64, b: Complex64) -> f64 {
        let wa = a.re.abs() + TRACT_OFFSET;
        let wb = b.re.abs() + TRACT_OFFSET;
        let a = c(a.re.abs(), a.im);
        let b = c(b.re.abs(), b.im);
        0.5 * (1.0 + (a - b).norm_sqr() / (2.0 * wa * wb)).acosh()
    }

    #[test]
    fn factor_values() {
        assert_relative_eq!(
            tract_factor(c(0.0, 0.0)),
            1.0 / (3.0 * PI),
            max_relative = 1e-15
        );
        assert_eq!(tract_factor(c(2.5, 1.0)), tract_factor(c(-2.5, -7.0)));
        assert!(tract_factor(c(3.0, 0.0)) < tract_factor(c(2.0, 0.0)));
    }

    #[test]
    fn quadrature_constant_and_closed_form() {
        let l = polyline_length(|_| 0.5, &[c(0.0, 0.0), c(4.0, 0.0)]).unwrap();
        assert_relative_eq!(l, 2.0, max_relative = 1e-14);
        for x in [0.1, 1.0, 7.0, 40.0] {
            let want = 0.5 * (1.0 + x / TRACT_OFFSET).ln();
            let got = polyline_length(tract_factor, &[c(0.0, 0.0), c(x, 0.0)]).unwrap();
            assert_relative_eq!(got, want, max_relative = 1e-8);
            assert_relative_eq!(
                tract_segment_length(c(0.0, 0.0), c(x, 0.0)),
                want,
                max_relative = 1e-14
            );
        }
    }

    #[test]
    fn segment_closed_form_matches_quadrature() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..200 {
            let a = c(rng.gen_range(-10.0..10.0), rng.gen_range(-10.0..10.0));
            let b = c(rng.gen_range(-10.0..10.0), rng.gen_range(-10.0..10.0));
            // vertex on the imaginary axis, where |Re z| has its kink
            let mut path = vec![a];
            if a.re * b.re < 0.0 {
                path.push(a + (b - a) * (a.re / (a.re - b.re)));
            }
            path.push(b);
            let q = polyline_length(tract_factor, &path).unwrap();
            assert_relative_eq!(tract_segment_length(a, b), q, max_relative = 1e-8);
        }
        let a = c(1.0, 0.0);
        assert_relative_eq!(
            tract_segment_length(a, c(1.0, 2.0)),
            2.0 * tract_factor(a),
            max_relative = 1e-15
        );
    }

    #[test]
    fn additivity() {
        let pts = [c(-3.0, 1.0), c(0.5, 2.0), c(4.0, -1.0), c(2.0, 6.0)];
        let whole = polyline_length(tract_factor, &pts).unwrap();
        let parts = polyline_length(tract_factor, &pts[..2]).unwrap()
            + polyline_length(tract_factor, &pts[1..]).unwrap();
        assert_relative_eq!(whole, parts, max_relative = 1e-12);
    }

    #[test]
    fn distance_basics() {
        let s = TractSearch::default();
        assert_eq!(tract_distance(c(1.0, 2.0), c(1.0, 2.0), &s).value, 0.0);
        let x = 0.3;
        let d = tract_distance(c(0.0, 0.0), c(x, 0.0), &s);
        let straight = 0.5 * (1.0 + x / TRACT_OFFSET).ln();
        assert!((d.value - straight).abs() <= 0.01 * straight);
        assert!(d.levels.windows(2).all(|w| w[1] <= w[0]));
        assert_eq!(d.control_points.len(), 7);
    }

    #[test]
    fn distance_matches_half_plane_formula() {
        let s = TractSearch::default();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..30 {
            let a = c(rng.gen_range(0.0..6.0), rng.gen_range(-5.0..5.0));
            let b = c(rng.gen_range(0.0..6.0), rng.gen_range(-5.0..5.0));
            let exact = same_side_exact(a, b);
            let d = tract_distance(a, b, &s);
            assert!(d.value >= exact * (1.0 - 1e-12), "{a} {b}");
            assert!(d.value <= exact * 1.01, "{a} {b}: {} vs {exact}", d.value);
        }
    }

    #[test]
    fn distance_symmetry_and_triangle() {
        let s = TractSearch::default();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..20 {
            let mut p = || c(rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0));
            let (a, b, m) = (p(), p(), p());
            let ab = tract_distance(a, b, &s).value;
            let ba = tract_distance(b, a, &s).value;
            assert!((ab - ba).abs() <= 1e-3 * ab, "{ab} {ba}");
            let am = tract_distance(a, m, &s).value;
            let mb = tract_distance(m, b, &s).value;
            assert!(ab <= 1.05 * (am + mb));
        }
    }
}
