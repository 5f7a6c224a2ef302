//! Sample files: CSV with a header row up to [`CSV_MAX_ROWS`] rows, raw
//! little-endian `f64` with a JSON sidecar above.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{BmsError, Result};

pub const CSV_MAX_ROWS: usize = 10_000;

/// Sidecar describing a raw sample matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawSidecar {
    pub rows: usize,
    pub cols: usize,
    pub dtype: String,
    pub byte_order: String,
}

/// Writes `x` next to `stem` as `stem.csv` or `stem.bin` + `stem.json` and
/// returns the data file path.
pub fn write_samples(stem: &Path, x: ArrayView2<f64>) -> Result<PathBuf> {
    if x.nrows() <= CSV_MAX_ROWS {
        let path = stem.with_extension("csv");
        let mut w = csv::Writer::from_path(&path).map_err(csv_err)?;
        w.write_record((0..x.ncols()).map(|j| format!("x{j}"))).map_err(csv_err)?;
        for row in x.rows() {
            w.write_record(row.iter().map(|v| v.to_string())).map_err(csv_err)?;
        }
        w.flush()?;
        Ok(path)
    } else {
        let path = stem.with_extension("bin");
        let mut bytes = Vec::with_capacity(8 * x.len());
        for v in x.iter() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        fs::write(&path, bytes)?;
        let sidecar =
            RawSidecar { rows: x.nrows(), cols: x.ncols(), dtype: "f64".into(), byte_order: "little".into() };
        fs::write(stem.with_extension("json"), serde_json::to_vec_pretty(&sidecar)?)?;
        Ok(path)
    }
}

/// Reads a file written by [`write_samples`].
pub fn read_samples(path: &Path) -> Result<Array2<f64>> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("csv") => {
            let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
            let cols = r.headers().map_err(csv_err)?.len();
            let mut data = Vec::new();
            let mut rows = 0;
            for rec in r.records() {
                let rec = rec.map_err(csv_err)?;
                if rec.len() != cols {
                    return Err(BmsError::SizeMismatch(format!("row {} has {} values, expected {cols}", rows + 1, rec.len())));
                }
                for v in rec.iter() {
                    data.push(v.trim().parse::<f64>().map_err(|e| BmsError::Config(format!("{}: {e}", path.display())))?);
                }
                rows += 1;
            }
            Ok(Array2::from_shape_vec((rows, cols), data).expect("rows of equal length"))
        }
        Some("bin") => {
            let sidecar: RawSidecar = serde_json::from_slice(&fs::read(path.with_extension("json"))?)?;
            if sidecar.dtype != "f64" || sidecar.byte_order != "little" {
                return Err(BmsError::Config("only little-endian f64 sample files are supported".into()));
            }
            let bytes = fs::read(path)?;
            if bytes.len() != 8 * sidecar.rows * sidecar.cols {
                return Err(BmsError::SizeMismatch(format!(
                    "{} holds {} bytes, sidecar promises {}x{}",
                    path.display(),
                    bytes.len(),
                    sidecar.rows,
                    sidecar.cols
                )));
            }
            let data = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
            Ok(Array2::from_shape_vec((sidecar.rows, sidecar.cols), data).expect("checked length"))
        }
        _ => Err(BmsError::Config(format!("{}: sample files end in .csv or .bin", path.display()))),
    }
}

fn csv_err(e: csv::Error) -> BmsError {
    BmsError::Config(format!("CSV: {e}"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn csv_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = Array2::from_shape_fn((17, 3), |_| rng.gen::<f64>() * 1e3 - 5e2);
        let path = write_samples(&dir.path().join("s"), x.view()).unwrap();
        assert_eq!(path.extension().unwrap(), "csv");
        assert_eq!(read_samples(&path).unwrap(), x);
    }

    #[test]
    fn empty_file_keeps_header() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_samples(&dir.path().join("e"), Array2::<f64>::zeros((0, 2)).view()).unwrap();
        assert_eq!(fs::read_to_string(&path).unwrap(), "x0,x1\n");
        assert_eq!(read_samples(&path).unwrap().dim(), (0, 2));
    }

    #[test]
    fn large_files_are_raw() {
        let dir = tempfile::tempdir().unwrap();
        let x = Array2::from_shape_fn((CSV_MAX_ROWS + 1, 2), |(i, j)| (i * 2 + j) as f64 * 0.1);
        let path = write_samples(&dir.path().join("big"), x.view()).unwrap();
        assert_eq!(path.extension().unwrap(), "bin");
        assert!(dir.path().join("big.json").exists());
        assert_eq!(read_samples(&path).unwrap(), x);
    }
}
