//! On-disk layout of a simulated path: `<stem>.csv` with one row per grid node
//! (`t, x_1..x_n, y_1..y_m`) and `<stem>.json` with the increments and noise needed
//! to rebuild the path exactly. Floats are written in shortest round-trip form.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Measure, NoiseRecord, SystemPath, TimeGrid};
use crate::{Error, Result};

const FORMAT: &str = "levy-filter/system-path";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PathFiles {
    pub csv: PathBuf,
    pub json: PathBuf,
}

impl PathFiles {
    pub fn for_stem(dir: &Path, stem: &str) -> Self {
        PathFiles {
            csv: dir.join(format!("{stem}.csv")),
            json: dir.join(format!("{stem}.json")),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct Sidecar {
    format: String,
    config_hash: String,
    grid: TimeGrid,
    dim_signal: usize,
    dim_obs: usize,
    dim_bm: usize,
    measure: Measure,
    y_continuous: Vec<f64>,
    noise: NoiseRecord,
}

pub fn write_path(
    path: &SystemPath,
    dir: &Path,
    stem: &str,
    config_hash: &str,
) -> Result<PathFiles> {
    fs::create_dir_all(dir)?;
    let files = PathFiles::for_stem(dir, stem);
    let (n, m) = (path.dim_signal, path.dim_obs);

    let mut csv = format!("# config_hash={config_hash}\nt");
    for i in 1..=n {
        write!(csv, ",x_{i}").unwrap();
    }
    for i in 1..=m {
        write!(csv, ",y_{i}").unwrap();
    }
    csv.push('\n');
    for k in 0..=path.grid.steps() {
        write!(csv, "{}", path.grid.time(k)).unwrap();
        for v in path.x_at(k).iter().chain(path.y_at(k)) {
            write!(csv, ",{v}").unwrap();
        }
        csv.push('\n');
    }
    fs::write(&files.csv, csv)?;

    let side = Sidecar {
        format: FORMAT.into(),
        config_hash: config_hash.into(),
        grid: path.grid,
        dim_signal: n,
        dim_obs: m,
        dim_bm: path.dim_bm,
        measure: path.measure,
        y_continuous: path.y_continuous.clone(),
        noise: path.noise.clone(),
    };
    fs::write(&files.json, serde_json::to_string_pretty(&side)?)?;
    Ok(files)
}

/// Reads a path written by [`write_path`] and returns it with its config hash.
pub fn read_path(files: &PathFiles) -> Result<(SystemPath, String)> {
    let side: Sidecar = serde_json::from_str(&fs::read_to_string(&files.json)?)
        .map_err(|e| Error::Parse(format!("{}: {e}", files.json.display())))?;
    if side.format != FORMAT {
        return Err(Error::Parse(format!(
            "{}: not a system path sidecar",
            files.json.display()
        )));
    }
    let (n, m) = (side.dim_signal, side.dim_obs);
    let steps = side.grid.steps();
    let text = fs::read_to_string(&files.csv)?;
    let mut x = Vec::with_capacity((steps + 1) * n);
    let mut y = Vec::with_capacity((steps + 1) * m);
    let mut rows = 0usize;
    for (lineno, line) in text.lines().enumerate() {
        if line.starts_with('#') || line.starts_with('t') || line.is_empty() {
            continue;
        }
        let vals: Vec<f64> = line
            .split(',')
            .map(|s| s.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Parse(format!("{}:{}: {e}", files.csv.display(), lineno + 1)))?;
        if vals.len() != 1 + n + m {
            return Err(Error::Parse(format!(
                "{}:{}: expected {} columns, found {}",
                files.csv.display(),
                lineno + 1,
                1 + n + m,
                vals.len()
            )));
        }
        x.extend_from_slice(&vals[1..1 + n]);
        y.extend_from_slice(&vals[1 + n..]);
        rows += 1;
    }
    if rows != steps + 1 {
        return Err(Error::Parse(format!(
            "{}: expected {} rows, found {rows}",
            files.csv.display(),
            steps + 1
        )));
    }
    let path = SystemPath {
        grid: side.grid,
        dim_signal: n,
        dim_obs: m,
        dim_bm: side.dim_bm,
        x,
        y,
        y_continuous: side.y_continuous,
        noise: side.noise,
        measure: side.measure,
    };
    Ok((path, side.config_hash))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::presets;
    use crate::pathsim::simulate_system;

    #[test]
    fn round_trip_is_bit_exact() {
        let spec = presets::linear_gaussian_jump().build().unwrap();
        let p = simulate_system(&spec, TimeGrid::new(1.0, 200).unwrap(), 17).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let files = write_path(&p, dir.path(), "path", "abc").unwrap();
        let (q, hash) = read_path(&files).unwrap();
        assert_eq!(hash, "abc");
        let bits = |v: &[f64]| v.iter().map(|f| f.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&p.x), bits(&q.x));
        assert_eq!(bits(&p.y), bits(&q.y));
        assert_eq!(p, q);
    }

    #[test]
    fn truncated_csv_is_rejected() {
        let spec = presets::constants().build().unwrap();
        let p = simulate_system(&spec, TimeGrid::new(1.0, 10).unwrap(), 1).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let files = write_path(&p, dir.path(), "p", "h").unwrap();
        let text = fs::read_to_string(&files.csv).unwrap();
        let cut: String = text.lines().take(5).map(|l| format!("{l}\n")).collect();
        fs::write(&files.csv, cut).unwrap();
        assert!(matches!(read_path(&files), Err(Error::Parse(_))));
    }
}
