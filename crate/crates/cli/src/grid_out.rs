//! Plot-ready grid dumps for the `map` and `metrics` commands.

use hillmap_core::hyperbolic::tract_factor;
use hillmap_core::{write_map_csv, Complex64};
use rayon::prelude::*;
use serde::Serialize;

use crate::check::{primary_map, SCHEMA};
use crate::config::{Format, RunConfig};
use crate::CliError;

pub const MAP_COLUMNS: [&str; 6] = ["re_z", "im_z", "re_y", "im_y", "re_dy", "im_dy"];
pub const METRIC_COLUMNS: [&str; 5] = [
    "re_z",
    "im_z",
    "edge_distance",
    "thurston_factor",
    "tract_factor",
];

#[derive(Serialize)]
struct Table<'a> {
    schema: u32,
    command: &'a str,
    columns: &'a [&'a str],
    rows: Vec<Vec<f64>>,
}

fn json_table(command: &str, columns: &[&str], rows: Vec<Vec<f64>>) -> Result<Vec<u8>, CliError> {
    let mut out = serde_json::to_vec_pretty(&Table {
        schema: SCHEMA,
        command,
        columns,
        rows,
    })
    .map_err(|e| CliError::Io(e.to_string()))?;
    out.push(b'\n');
    Ok(out)
}

fn csv_table(columns: &[&str], rows: &[Vec<f64>]) -> Result<Vec<u8>, CliError> {
    let err = |e: csv::Error| CliError::Io(e.to_string());
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(columns).map_err(err)?;
    for r in rows {
        w.write_record(r.iter().map(|v| v.to_string()))
            .map_err(err)?;
    }
    w.into_inner().map_err(|e| CliError::Io(e.to_string()))
}

/// Grid of `y` and `y'`, one row per grid point.
pub fn cmd_map(cfg: &RunConfig) -> Result<Vec<u8>, CliError> {
    cfg.validate().map_err(CliError::Usage)?;
    let map = primary_map(cfg)?;
    let pts = cfg.grid.points(map.strip());
    let verr = |e: hillmap_core::LiouvilleError| CliError::Verification(format!("map: {e}"));
    match cfg.format.unwrap_or(Format::Csv) {
        Format::Csv => {
            let mut out = Vec::new();
            write_map_csv(&map, &pts, &mut out).map_err(verr)?;
            Ok(out)
        }
        Format::Json => {
            let rows = pts
                .par_iter()
                .map(|&z| {
                    let s = map.evaluate_state(z)?;
                    let dy = s.y_prime();
                    Ok(vec![z.re, z.im, s.y.re, s.y.im, dy.re, dy.im])
                })
                .collect::<Result<Vec<_>, _>>()
                .map_err(verr)?;
            json_table("map", &MAP_COLUMNS, rows)
        }
    }
}

fn metric_row(strip: &hillmap_core::Strip, z: Complex64) -> Result<Vec<f64>, CliError> {
    let bad = |e: hillmap_core::GeometryError| CliError::Verification(format!("metrics: {e}"));
    Ok(vec![
        z.re,
        z.im,
        strip.edge_distance(z).map_err(bad)?,
        strip.thurston_factor(z).map_err(bad)?,
        tract_factor(z),
    ])
}

/// Grid of edge distance, Thurston factor and tract factor.
pub fn cmd_metrics(cfg: &RunConfig) -> Result<Vec<u8>, CliError> {
    cfg.validate().map_err(CliError::Usage)?;
    let strip = cfg.strip().map_err(CliError::Usage)?;
    let rows = cfg
        .grid
        .points(&strip)
        .into_iter()
        .map(|z| metric_row(&strip, z))
        .collect::<Result<Vec<_>, _>>()?;
    match cfg.format.unwrap_or(Format::Csv) {
        Format::Csv => csv_table(&METRIC_COLUMNS, &rows),
        Format::Json => json_table("metrics", &METRIC_COLUMNS, rows),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use hillmap_core::GridSpec;
    use std::f64::consts::PI;

    fn rows(bytes: &[u8]) -> Vec<Vec<f64>> {
        let text = std::str::from_utf8(bytes).unwrap();
        text.lines()
            .skip(1)
            .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
            .collect()
    }

    #[test]
    fn free_map_grid_is_the_identity() {
        let cfg = RunConfig {
            grid: GridSpec {
                nx: 7,
                ny: 4,
                x_min: -3.0,
                x_max: 3.0,
                edge_margin: 0.1,
            },
            ..Default::default()
        };
        let r = rows(&cmd_map(&cfg).unwrap());
        assert_eq!(r.len(), 28);
        for row in r {
            assert!((row[2] - row[0]).abs() < 1e-9 && (row[3] - row[1]).abs() < 1e-9);
            assert!((row[4] - 1.0).abs() < 1e-9 && row[5].abs() < 1e-9);
        }
    }

    #[test]
    fn metrics_midline_and_sixth_rows() {
        // Rows at pi/6, pi/3, pi/2, 2 pi/3, 5 pi/6.
        let cfg = RunConfig {
            grid: GridSpec {
                nx: 3,
                ny: 5,
                x_min: -1.0,
                x_max: 1.0,
                edge_margin: PI / 6.0,
            },
            ..Default::default()
        };
        let r = rows(&cmd_metrics(&cfg).unwrap());
        assert_eq!(r.len(), 15);
        for row in &r {
            if (row[1] - PI / 2.0).abs() < 1e-12 {
                assert_eq!(row[3], 0.5);
            }
            if (row[1] - PI / 6.0).abs() < 1e-12 {
                assert!((row[3] - 1.0).abs() < 1e-15);
            }
            let tract = 1.0 / (2.0 * (row[0].abs() + 1.5 * PI));
            assert!((row[4] - tract).abs() < 1e-15 * tract);
        }
    }

    #[test]
    fn json_tables_carry_the_schema() {
        let cfg = RunConfig {
            grid: GridSpec {
                nx: 2,
                ny: 2,
                x_min: 0.0,
                x_max: 1.0,
                edge_margin: 0.5,
            },
            format: Some(Format::Json),
            ..Default::default()
        };
        let v: serde_json::Value = serde_json::from_slice(&cmd_metrics(&cfg).unwrap()).unwrap();
        assert_eq!(v["schema"], 1);
        assert_eq!(v["rows"].as_array().unwrap().len(), 4);
        let v: serde_json::Value = serde_json::from_slice(&cmd_map(&cfg).unwrap()).unwrap();
        assert_eq!(v["columns"][2], "re_y");
    }
}
