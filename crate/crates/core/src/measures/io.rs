//! `<stem>.csv` holds one particle per row (`x_1..x_n, w`); `<stem>.json` holds the
//! header (dimension, mass scalar, normalization flag).

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::ParticleMeasure;
use crate::{Error, Result};

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    config_hash: String,
    dim: usize,
    particles: usize,
    scale: f64,
    unit_weights: bool,
    normalized: bool,
    total_mass: f64,
}

const FORMAT: &str = "levy-filter/particle-measure";

pub fn write_measure(
    mu: &ParticleMeasure,
    dir: &Path,
    stem: &str,
    config_hash: &str,
) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut csv = format!("# config_hash={config_hash}\n");
    let cols: Vec<String> = (1..=mu.dim())
        .map(|i| format!("x_{i}"))
        .chain(["w".to_string()])
        .collect();
    csv.push_str(&cols.join(","));
    csv.push('\n');
    for i in 0..mu.len() {
        for v in mu.point(i) {
            write!(csv, "{v},").unwrap();
        }
        writeln!(csv, "{}", mu.weights()[i]).unwrap();
    }
    fs::write(dir.join(format!("{stem}.csv")), csv)?;
    let header = Header {
        format: FORMAT.into(),
        config_hash: config_hash.into(),
        dim: mu.dim(),
        particles: mu.len(),
        scale: mu.scale(),
        unit_weights: mu.has_unit_weights(),
        normalized: mu.is_normalized(),
        total_mass: mu.total_mass(),
    };
    fs::write(
        dir.join(format!("{stem}.json")),
        serde_json::to_string_pretty(&header)?,
    )?;
    Ok(())
}

pub fn read_measure(dir: &Path, stem: &str) -> Result<ParticleMeasure> {
    let json = dir.join(format!("{stem}.json"));
    let header: Header = serde_json::from_str(&fs::read_to_string(&json)?)
        .map_err(|e| Error::Parse(format!("{}: {e}", json.display())))?;
    if header.format != FORMAT {
        return Err(Error::Parse(format!(
            "{}: not a particle measure header",
            json.display()
        )));
    }
    let csv = dir.join(format!("{stem}.csv"));
    let mut points = Vec::with_capacity(header.particles * header.dim);
    let mut weights = Vec::with_capacity(header.particles);
    for (lineno, line) in fs::read_to_string(&csv)?.lines().enumerate() {
        if line.is_empty() || line.starts_with('#') || line.starts_with('x') {
            continue;
        }
        let vals: Vec<f64> = line
            .split(',')
            .map(|s| s.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Parse(format!("{}:{}: {e}", csv.display(), lineno + 1)))?;
        if vals.len() != header.dim + 1 {
            return Err(Error::Parse(format!(
                "{}:{}: wrong column count",
                csv.display(),
                lineno + 1
            )));
        }
        points.extend_from_slice(&vals[..header.dim]);
        weights.push(vals[header.dim]);
    }
    if weights.len() != header.particles {
        return Err(Error::Parse(format!(
            "{}: expected {} particles",
            csv.display(),
            header.particles
        )));
    }
    let mu = ParticleMeasure::new(header.dim, points, weights)?;
    Ok(ParticleMeasure::from_parts(
        mu.dim(),
        mu.points().to_vec(),
        mu.weights().to_vec(),
        header.scale,
        header.unit_weights,
    ))
}
