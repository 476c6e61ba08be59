//! CSV and JSON output with stable, full-precision formatting.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::json;

use crate::error::Result;
use crate::grid::TimeGrid;

/// 17 significant digits, enough to round-trip any f64.
pub fn fmt17(x: f64) -> String {
    format!("{x:.16e}")
}

/// `["t", "u_1", "u_2"]`-style header; a single column is named without index.
pub fn indexed_header(first: &str, stem: &str, n: usize) -> Vec<String> {
    let mut h = vec![first.to_string()];
    if n == 1 {
        h.push(stem.to_string());
    } else {
        h.extend((1..=n).map(|i| format!("{stem}_{i}")));
    }
    h
}

pub fn write_rows<I>(path: &Path, header: &[String], rows: I) -> Result<()>
where
    I: IntoIterator<Item = Vec<f64>>,
{
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for row in rows {
        w.write_record(row.iter().map(|x| fmt17(*x)))?;
    }
    w.flush()?;
    Ok(())
}

/// `t,value` series on a grid.
pub fn write_series(path: &Path, grid: &TimeGrid, values: &[f64]) -> Result<()> {
    let header = ["t".to_string(), "value".to_string()];
    write_rows(
        path,
        &header,
        values
            .iter()
            .enumerate()
            .map(|(i, v)| vec![grid.time(i), *v]),
    )
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

/// `data.csv` → `data.json`.
pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

pub fn write_sidecar<T: Serialize + ?Sized>(path: &Path, meta: &T) -> Result<()> {
    write_json(&sidecar_path(path), meta)
}

pub fn grid_json(g: &TimeGrid) -> serde_json::Value {
    json!({ "t_start": g.t_start(), "t_end": g.t_end(), "dt": g.dt(), "n_steps": g.n_steps() })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips_through_text() {
        for x in [0.1, -1.0 / 3.0, 6.02214076e23, 5e-324, 0.0] {
            let s = fmt17(x);
            assert_eq!(s.parse::<f64>().unwrap(), x, "{s}");
        }
    }

    #[test]
    fn headers() {
        assert_eq!(indexed_header("t", "value", 1), ["t", "value"]);
        assert_eq!(indexed_header("t", "u", 2), ["t", "u_1", "u_2"]);
    }

    #[test]
    fn series_file_layout() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.csv");
        let g = TimeGrid::new(0.0, 0.2, 0.1).unwrap();
        write_series(&p, &g, &[1.0, 2.0, 3.0]).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines[0], "t,value");
        assert_eq!(lines.len(), 4);
        assert_eq!(lines[1], "0.0000000000000000e0,1.0000000000000000e0");
    }
}
