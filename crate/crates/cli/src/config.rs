//! Run configuration assembled from defaults, a key=value file and flags.

use std::f64::consts::PI;
use std::fmt;
use std::path::{Path, PathBuf};

use hillmap_core::{GridSpec, IntegratorConfig, PotentialExpr, Strip};
use serde::{Serialize, Serializer};

const MAX_PAIRS: usize = 10_000_000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Height {
    Finite(f64),
    Infinite,
}

impl Height {
    pub fn strip(self) -> Result<Strip, String> {
        match self {
            Height::Finite(h) => Strip::new(h).map_err(|e| e.to_string()),
            Height::Infinite => Ok(Strip::infinite()),
        }
    }
}

impl fmt::Display for Height {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Height::Finite(h) => write!(f, "{h}"),
            Height::Infinite => f.write_str("inf"),
        }
    }
}

impl Serialize for Height {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Height::Finite(h) => s.serialize_f64(*h),
            Height::Infinite => s.serialize_str("inf"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Json,
    Csv,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub potential: String,
    pub strip_height: Height,
    pub m: f64,
    pub grid: GridSpec,
    pub anchor_l: f64,
    pub rtol: f64,
    pub atol: f64,
    pub pairs: usize,
    pub seed: u64,
    #[serde(skip)]
    pub out: Option<PathBuf>,
    /// `None` selects the per-command default.
    pub format: Option<Format>,
    pub allow_no_decay: bool,
    pub fd_step: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            potential: "0".into(),
            strip_height: Height::Finite(PI),
            m: 0.3,
            grid: GridSpec {
                nx: 81,
                ny: 21,
                x_min: -20.0,
                x_max: 20.0,
                edge_margin: 0.05,
            },
            anchor_l: 25.0,
            rtol: 1e-10,
            atol: 1e-12,
            pairs: 1000,
            seed: 0,
            out: None,
            format: None,
            allow_no_decay: false,
            fd_step: 1e-3,
        }
    }
}

fn parse_f64(key: &str, v: &str) -> Result<f64, String> {
    let x: f64 = v
        .trim()
        .parse()
        .map_err(|_| format!("{key}: expected a number, got {v:?}"))?;
    if x.is_finite() {
        Ok(x)
    } else {
        Err(format!("{key}: expected a finite number, got {v:?}"))
    }
}

fn parse_height(v: &str) -> Result<Height, String> {
    match v.trim().to_ascii_lowercase().as_str() {
        "inf" | "infinity" => Ok(Height::Infinite),
        _ => parse_f64("height", v).map(Height::Finite),
    }
}

fn parse_grid(v: &str) -> Result<GridSpec, String> {
    let parts: Vec<&str> = v.split(',').map(str::trim).collect();
    if parts.len() != 5 {
        return Err(format!("grid: expected nx,ny,xmin,xmax,margin, got {v:?}"));
    }
    let count = |s: &str, k: &str| {
        s.parse::<usize>()
            .map_err(|_| format!("grid: {k} must be a non-negative integer, got {s:?}"))
    };
    Ok(GridSpec {
        nx: count(parts[0], "nx")?,
        ny: count(parts[1], "ny")?,
        x_min: parse_f64("grid xmin", parts[2])?,
        x_max: parse_f64("grid xmax", parts[3])?,
        edge_margin: parse_f64("grid margin", parts[4])?,
    })
}

fn parse_bool(key: &str, v: &str) -> Result<bool, String> {
    match v.trim().to_ascii_lowercase().as_str() {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(format!("{key}: expected true or false, got {v:?}")),
    }
}

impl RunConfig {
    /// Sets one key from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        let v = value.trim();
        match key {
            "potential" => self.potential = v.to_owned(),
            "height" => self.strip_height = parse_height(v)?,
            "m" => self.m = parse_f64(key, v)?,
            "grid" => self.grid = parse_grid(v)?,
            "anchor" => self.anchor_l = parse_f64(key, v)?,
            "rtol" => self.rtol = parse_f64(key, v)?,
            "atol" => self.atol = parse_f64(key, v)?,
            "pairs" => {
                self.pairs = v
                    .parse()
                    .map_err(|_| format!("pairs: expected a count, got {v:?}"))?
            }
            "seed" => {
                self.seed = v
                    .parse()
                    .map_err(|_| format!("seed: expected a 64-bit unsigned integer, got {v:?}"))?
            }
            "out" => self.out = Some(PathBuf::from(v)),
            "format" => {
                self.format = Some(match v.to_ascii_lowercase().as_str() {
                    "json" => Format::Json,
                    "csv" => Format::Csv,
                    _ => return Err(format!("format: expected json or csv, got {v:?}")),
                })
            }
            "allow_no_decay" => self.allow_no_decay = parse_bool(key, v)?,
            "fd_step" => self.fd_step = parse_f64(key, v)?,
            _ => return Err(format!("unknown key {key:?}")),
        }
        Ok(())
    }

    /// Applies a flat `key = value` text. Blank lines and lines starting with
    /// `#` are ignored.
    pub fn apply_file_text(&mut self, text: &str) -> Result<(), String> {
        let mut seen: Vec<&str> = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| format!("config line {}: expected key = value", n + 1))?;
            let k = k.trim();
            if seen.contains(&k) {
                return Err(format!("config line {}: duplicate key {k:?}", n + 1));
            }
            self.set(k, v)
                .map_err(|e| format!("config line {}: {e}", n + 1))?;
            seen.push(k);
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<(), String> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
        self.apply_file_text(&text)
    }

    pub fn strip(&self) -> Result<Strip, String> {
        self.strip_height.strip()
    }

    pub fn parsed_potential(&self) -> Result<PotentialExpr, String> {
        PotentialExpr::parse(&self.potential).map_err(|e| format!("potential: {e}"))
    }

    pub fn integrator(&self) -> IntegratorConfig {
        IntegratorConfig::with_tolerances(self.rtol, self.atol)
    }

    /// Checks every range constraint; the message names the offending key.
    pub fn validate(&self) -> Result<(), String> {
        self.parsed_potential()?;
        let strip = self.strip().map_err(|e| format!("height: {e}"))?;
        if !(self.m > 0.0 && self.m < 1.0) {
            return Err(format!("m: must lie in (0, 1), got {}", self.m));
        }
        self.grid
            .validate(&strip)
            .map_err(|e| format!("grid: {e}"))?;
        if !(self.anchor_l > 0.0) {
            return Err(format!("anchor: must be positive, got {}", self.anchor_l));
        }
        if self.grid.x_min.abs().max(self.grid.x_max.abs()) > self.anchor_l {
            return Err(format!(
                "grid: x range must lie within the anchors at +-{}",
                self.anchor_l
            ));
        }
        self.integrator().validate().map_err(|e| e.to_string())?;
        if self.pairs > MAX_PAIRS {
            return Err(format!("pairs: at most {MAX_PAIRS}"));
        }
        if !(self.fd_step > 0.0 && self.fd_step <= 0.1) {
            return Err(format!(
                "fd_step: must lie in (0, 0.1], got {}",
                self.fd_step
            ));
        }
        Ok(())
    }
}
