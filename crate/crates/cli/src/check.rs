//! The `check` pipeline: hypothesis, map, embedding, residuals,
//! displacements and translation gauge.

use hillmap_core::liouville::{
    displacement_check, embedding_probe, operator_identity_residual, schwarzian_residual,
    translation_gauge,
};
use hillmap_core::{
    check_hypothesis, construct_map, Complex64, DisplacementCheck, EmbeddingReport, GridSpec,
    HypothesisReport, LiouvilleError, LiouvilleMap, MapOptions, Strip,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::RunConfig;
use crate::{CliError, EXIT_HYPOTHESIS, EXIT_OK, EXIT_VERIFICATION};

pub const SCHEMA: u32 = 1;
pub const EMBED_SEP: f64 = 0.1;
pub const EMBED_IMG_TOL: f64 = 1e-3;
pub const SCHWARZIAN_TOL: f64 = 1e-5;
pub const OPERATOR_TOL: f64 = 1e-4;
pub const RESIDUAL_PASS_FRACTION: f64 = 0.99;
pub const RESIDUAL_MARGIN: f64 = 0.5;
pub const RESIDUAL_MAX_NX: usize = 41;
pub const RESIDUAL_MAX_NY: usize = 11;
pub const SECOND_ANCHOR_FACTOR: f64 = 0.6;
pub const GAUGE_TOL: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Pass,
    HypothesisFailed,
    VerificationFailed,
}

#[derive(Debug, Clone, Serialize)]
pub struct MapSummary {
    pub anchor_l: f64,
    pub midline_im: f64,
    pub checkpoints: usize,
    pub normalization_error_estimate: f64,
    pub kappa_left: [f64; 2],
    pub kappa_right: [f64; 2],
}

#[derive(Debug, Clone, Serialize)]
pub struct ResidualStats {
    pub tol: f64,
    pub evaluated: usize,
    pub failed_evaluations: usize,
    pub within_tol: usize,
    pub fraction_within_tol: f64,
    pub p50: Option<f64>,
    pub p90: Option<f64>,
    pub p99: Option<f64>,
    pub max: Option<f64>,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct ResidualSummary {
    pub fd_step: f64,
    pub grid: GridSpec,
    pub operator_a: Vec<[f64; 2]>,
    pub schwarzian: ResidualStats,
    pub operator: ResidualStats,
    pub max_y_prime_mismatch: Option<f64>,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct DisplacementSummary {
    pub m: f64,
    pub seed: u64,
    pub pairs: usize,
    pub passed: usize,
    pub failed_evaluations: usize,
    /// Largest `deviation / bound` over the evaluated pairs.
    pub max_ratio: Option<f64>,
    pub worst: Option<DisplacementCheck>,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct GaugeSummary {
    pub anchor_a: f64,
    pub anchor_b: f64,
    pub samples: usize,
    pub c: [f64; 2],
    pub max_dev: f64,
    pub tol: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct SuiteError {
    pub suite: &'static str,
    pub message: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct CheckReport {
    pub schema: u32,
    pub command: &'static str,
    pub status: Status,
    pub exit_code: i32,
    pub config: RunConfig,
    pub caveats: Vec<String>,
    pub hypothesis: HypothesisReport,
    pub map: Option<MapSummary>,
    pub embedding: Option<EmbeddingReport>,
    pub residuals: Option<ResidualSummary>,
    pub displacement: Option<DisplacementSummary>,
    pub gauge: Option<GaugeSummary>,
    pub errors: Vec<SuiteError>,
}

impl CheckReport {
    /// Names of the suites that did not pass.
    pub fn failed_suites(&self) -> Vec<&'static str> {
        let mut out = Vec::new();
        if !self.hypothesis.pass {
            out.push("hypothesis");
        }
        if self.map.is_none() && self.hypothesis.pass {
            out.push("map");
        }
        let mut push = |name, ok: Option<bool>| {
            if ok == Some(false) {
                out.push(name);
            }
        };
        push("embedding", self.embedding.as_ref().map(|e| e.pass));
        push("residuals", self.residuals.as_ref().map(|e| e.pass));
        push("displacement", self.displacement.as_ref().map(|e| e.pass));
        push("gauge", self.gauge.as_ref().map(|e| e.pass));
        for e in &self.errors {
            if !out.contains(&e.suite) {
                out.push(e.suite);
            }
        }
        out
    }
}

fn c2(z: Complex64) -> [f64; 2] {
    [z.re, z.im]
}

fn build_map(strip: &Strip, cfg: &RunConfig, anchor: f64) -> Result<LiouvilleMap, LiouvilleError> {
    let p = cfg
        .parsed_potential()
        .map_err(LiouvilleError::InvalidArgument)?;
    let opts = MapOptions {
        allow_no_decay: cfg.allow_no_decay,
        ..MapOptions::with_anchor(anchor)
    };
    construct_map(strip, &p, &opts, &cfg.integrator())
}

/// Builds the map used by the `check` and `map` commands.
pub fn primary_map(cfg: &RunConfig) -> Result<LiouvilleMap, CliError> {
    let strip = cfg.strip().map_err(CliError::Usage)?;
    build_map(&strip, cfg, cfg.anchor_l).map_err(|e| CliError::Verification(format!("map: {e}")))
}

/// Nearest-rank percentile of sorted data.
fn percentile(sorted: &[f64], q: f64) -> Option<f64> {
    if sorted.is_empty() {
        return None;
    }
    let rank = ((q * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    Some(sorted[rank - 1])
}

fn residual_stats(values: &[Option<f64>], tol: f64) -> ResidualStats {
    let mut ok: Vec<f64> = values.iter().flatten().copied().collect();
    ok.sort_by(f64::total_cmp);
    let within = ok.iter().filter(|&&r| r < tol).count();
    let fraction = if values.is_empty() {
        0.0
    } else {
        within as f64 / values.len() as f64
    };
    ResidualStats {
        tol,
        evaluated: values.len(),
        failed_evaluations: values.len() - ok.len(),
        within_tol: within,
        fraction_within_tol: fraction,
        p50: percentile(&ok, 0.5),
        p90: percentile(&ok, 0.9),
        p99: percentile(&ok, 0.99),
        max: ok.last().copied(),
        pass: !values.is_empty() && fraction >= RESIDUAL_PASS_FRACTION,
    }
}

/// Grid for the residual sweep: the run grid coarsened, pulled away from the
/// edges and kept clear of the anchors by the stencil radius.
pub fn residual_grid(cfg: &RunConfig, strip: &Strip) -> GridSpec {
    let reach = cfg.anchor_l - 4.0 * cfg.fd_step;
    let margin = cfg
        .grid
        .edge_margin
        .max(RESIDUAL_MARGIN)
        .min(strip.sampling_top() / 2.0 - 4.0 * cfg.fd_step);
    GridSpec {
        nx: cfg.grid.nx.min(RESIDUAL_MAX_NX),
        ny: cfg.grid.ny.min(RESIDUAL_MAX_NY),
        x_min: cfg.grid.x_min.max(-reach),
        x_max: cfg.grid.x_max.min(reach),
        edge_margin: margin,
    }
}

pub const OPERATOR_A: [Complex64; 4] = [
    Complex64::new(0.5, 0.0),
    Complex64::new(-0.5, 0.0),
    Complex64::new(0.0, 0.5),
    Complex64::new(0.0, -0.5),
];

fn residual_sweep(map: &LiouvilleMap, cfg: &RunConfig) -> ResidualSummary {
    let grid = residual_grid(cfg, map.strip());
    let pts = grid.points(map.strip());
    let h = cfg.fd_step;
    type Row = (Option<f64>, Option<f64>, Vec<Option<f64>>);
    let rows: Vec<Row> = pts
        .par_iter()
        .map(|&z| {
            let s = schwarzian_residual(map, z, h).ok();
            let ops = OPERATOR_A
                .iter()
                .map(|&a| {
                    operator_identity_residual(map, z, a, h)
                        .ok()
                        .map(|r| r.residual)
                })
                .collect();
            (s.map(|r| r.residual), s.map(|r| r.y_prime_mismatch), ops)
        })
        .collect();
    let sch: Vec<Option<f64>> = rows.iter().map(|r| r.0).collect();
    let ops: Vec<Option<f64>> = rows.iter().flat_map(|r| r.2.iter().copied()).collect();
    let mismatch = rows
        .iter()
        .filter_map(|r| r.1)
        .fold(None, |m: Option<f64>, v| Some(m.map_or(v, |m| m.max(v))));
    let schwarzian = residual_stats(&sch, SCHWARZIAN_TOL);
    let operator = residual_stats(&ops, OPERATOR_TOL);
    ResidualSummary {
        fd_step: h,
        grid,
        operator_a: OPERATOR_A.iter().map(|&a| c2(a)).collect(),
        pass: schwarzian.pass && operator.pass,
        schwarzian,
        operator,
        max_y_prime_mismatch: mismatch,
    }
}

/// Pairs of points drawn uniformly from the grid rectangle.
pub fn sample_pairs(cfg: &RunConfig, strip: &Strip) -> Vec<(Complex64, Complex64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let g = &cfg.grid;
    let lo = g.edge_margin;
    let hi = strip.sampling_top() - g.edge_margin;
    let draw = |rng: &mut ChaCha8Rng| {
        let x = if g.x_max > g.x_min {
            rng.gen_range(g.x_min..=g.x_max)
        } else {
            g.x_min
        };
        Complex64::new(x, rng.gen_range(lo..=hi))
    };
    (0..cfg.pairs)
        .map(|_| {
            let a = draw(&mut rng);
            let b = draw(&mut rng);
            (a, b)
        })
        .collect()
}

fn displacement_sweep(map: &LiouvilleMap, cfg: &RunConfig) -> DisplacementSummary {
    let pairs = sample_pairs(cfg, map.strip());
    let checks: Vec<Option<DisplacementCheck>> = pairs
        .par_iter()
        .map(|&(a, b)| displacement_check(map, cfg.m, a, b).ok())
        .collect();
    let ok: Vec<&DisplacementCheck> = checks.iter().flatten().collect();
    let passed = ok.iter().filter(|c| c.pass).count();
    let mut worst: Option<&DisplacementCheck> = None;
    for c in &ok {
        if c.bound > 0.0 && worst.is_none_or(|w| c.ratio() > w.ratio()) {
            worst = Some(c);
        }
    }
    DisplacementSummary {
        m: cfg.m,
        seed: cfg.seed,
        pairs: pairs.len(),
        passed,
        failed_evaluations: pairs.len() - ok.len(),
        max_ratio: worst.map(|w| w.ratio()),
        worst: worst.copied(),
        pass: passed == pairs.len(),
    }
}

fn gauge_suite(map: &LiouvilleMap, cfg: &RunConfig) -> Result<GaugeSummary, LiouvilleError> {
    let anchor_b = SECOND_ANCHOR_FACTOR * cfg.anchor_l;
    let other = build_map(map.strip(), cfg, anchor_b)?;
    let samples: Vec<Complex64> = cfg
        .grid
        .points(map.strip())
        .into_iter()
        .filter(|z| z.re.abs() <= anchor_b)
        .collect();
    let samples = if samples.is_empty() {
        vec![Complex64::new(0.0, map.midline_im())]
    } else {
        samples
    };
    let g = translation_gauge(map, &other, &samples)?;
    let tol = GAUGE_TOL.max(1e3 * cfg.rtol)
        + 10.0 * (map.normalization_error_estimate() + other.normalization_error_estimate());
    Ok(GaugeSummary {
        anchor_a: cfg.anchor_l,
        anchor_b,
        samples: samples.len(),
        c: c2(g.c),
        max_dev: g.max_dev,
        tol,
        pass: g.max_dev < tol,
    })
}

#[derive(Debug, Clone)]
pub struct CheckOutcome {
    pub report: CheckReport,
    pub exit_code: i32,
}

/// Runs the verification pipeline. Returns an error only for invalid
/// configurations; suite failures are recorded in the report.
pub fn cmd_check(cfg: &RunConfig) -> Result<CheckOutcome, CliError> {
    cfg.validate().map_err(CliError::Usage)?;
    let strip = cfg.strip().map_err(CliError::Usage)?;
    let p = cfg.parsed_potential().map_err(CliError::Usage)?;
    let hypothesis = check_hypothesis(&strip, &p, cfg.m, &cfg.grid)
        .map_err(|e| CliError::Usage(e.to_string()))?;

    let mut caveats = vec![format!(
        "hypothesis checked on a {}x{} grid with edge margin {}",
        cfg.grid.nx, cfg.grid.ny, cfg.grid.edge_margin
    )];
    if cfg.m >= 1.0 / 3.0 {
        caveats.push("m >= 1/3: the displacement bound is not guaranteed".into());
    }
    if cfg.allow_no_decay {
        caveats.push("decay at the anchors not enforced: the gauge is heuristic".into());
    }

    let mut report = CheckReport {
        schema: SCHEMA,
        command: "check",
        status: Status::HypothesisFailed,
        exit_code: EXIT_HYPOTHESIS,
        config: cfg.clone(),
        caveats,
        hypothesis,
        map: None,
        embedding: None,
        residuals: None,
        displacement: None,
        gauge: None,
        errors: Vec::new(),
    };
    if !report.hypothesis.pass {
        return Ok(CheckOutcome {
            exit_code: EXIT_HYPOTHESIS,
            report,
        });
    }

    match build_map(&strip, cfg, cfg.anchor_l) {
        Ok(map) => {
            let [kl, kr] = map.anchor_kappa();
            report.map = Some(MapSummary {
                anchor_l: cfg.anchor_l,
                midline_im: map.midline_im(),
                checkpoints: map.checkpoints().len(),
                normalization_error_estimate: map.normalization_error_estimate(),
                kappa_left: c2(kl),
                kappa_right: c2(kr),
            });
            match embedding_probe(&map, &cfg.grid, EMBED_SEP, EMBED_IMG_TOL) {
                Ok(e) => report.embedding = Some(e),
                Err(e) => report.errors.push(SuiteError {
                    suite: "embedding",
                    message: e.to_string(),
                }),
            }
            report.residuals = Some(residual_sweep(&map, cfg));
            report.displacement = Some(displacement_sweep(&map, cfg));
            match gauge_suite(&map, cfg) {
                Ok(g) => report.gauge = Some(g),
                Err(e) => report.errors.push(SuiteError {
                    suite: "gauge",
                    message: e.to_string(),
                }),
            }
        }
        Err(e) => report.errors.push(SuiteError {
            suite: "map",
            message: e.to_string(),
        }),
    }

    let exit_code = if report.failed_suites().is_empty() {
        report.status = Status::Pass;
        EXIT_OK
    } else {
        report.status = Status::VerificationFailed;
        EXIT_VERIFICATION
    };
    report.exit_code = exit_code;
    Ok(CheckOutcome { report, exit_code })
}
