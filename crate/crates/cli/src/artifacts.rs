//! Artifact formats: JSON documents, a small binary matrix format and
//! probability tables.

use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::Array2;
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{CliError, CliResult};

const MATRIX_MAGIC: &[u8; 6] = b"LSMAT1";

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> CliResult<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    fs::write(path, bytes)?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    let bytes = fs::read(path)?;
    serde_json::from_slice(&bytes).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

/// Magic, rows and columns (u64 LE), then row-major f64 LE.
pub fn write_matrix(path: &Path, m: &Array2<f64>) -> CliResult<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    w.write_all(MATRIX_MAGIC)?;
    w.write_all(&(m.nrows() as u64).to_le_bytes())?;
    w.write_all(&(m.ncols() as u64).to_le_bytes())?;
    for v in m.iter() {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_matrix(path: &Path) -> CliResult<Array2<f64>> {
    let bad = |m: &str| CliError::Data(format!("{}: {m}", path.display()));
    let mut r = BufReader::new(fs::File::open(path)?);
    let mut magic = [0u8; 6];
    r.read_exact(&mut magic).map_err(|_| bad("truncated header"))?;
    if &magic != MATRIX_MAGIC {
        return Err(bad("not a matrix file"));
    }
    let mut word = [0u8; 8];
    r.read_exact(&mut word).map_err(|_| bad("truncated header"))?;
    let rows = u64::from_le_bytes(word) as usize;
    r.read_exact(&mut word).map_err(|_| bad("truncated header"))?;
    let cols = u64::from_le_bytes(word) as usize;
    let mut data = Vec::with_capacity(rows * cols);
    for _ in 0..rows * cols {
        r.read_exact(&mut word).map_err(|_| bad("truncated body"))?;
        data.push(f64::from_le_bytes(word));
    }
    if r.read(&mut word)? != 0 {
        return Err(bad("trailing bytes"));
    }
    Array2::from_shape_vec((rows, cols), data).map_err(|e| bad(&e.to_string()))
}

/// Row table: key columns followed by one probability column per class.
pub struct ProbTable {
    pub key_names: Vec<String>,
    pub keys: Vec<Vec<String>>,
    pub class_names: Vec<String>,
    pub probs: Array2<f64>,
}

impl ProbTable {
    pub fn write(&self, path: &Path) -> CliResult<()> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        let mut w = csv::Writer::from_path(path)?;
        let header: Vec<&str> = self
            .key_names
            .iter()
            .map(String::as_str)
            .chain(self.class_names.iter().map(String::as_str))
            .collect();
        w.write_record(&header)?;
        for (i, k) in self.keys.iter().enumerate() {
            let rec: Vec<String> = k.iter().cloned().chain(self.probs.row(i).iter().map(|v| v.to_string())).collect();
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read(path: &Path, n_keys: usize) -> CliResult<Self> {
        let mut r = csv::Reader::from_path(path)?;
        let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
        if header.len() <= n_keys {
            return Err(CliError::Data(format!("{}: no probability columns", path.display())));
        }
        let k = header.len() - n_keys;
        let mut keys = Vec::new();
        let mut data = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            keys.push(rec.iter().take(n_keys).map(str::to_string).collect());
            for v in rec.iter().skip(n_keys) {
                data.push(
                    v.parse::<f64>()
                        .map_err(|e| CliError::Data(format!("{}: `{v}`: {e}", path.display())))?,
                );
            }
        }
        let n = keys.len();
        Ok(ProbTable {
            key_names: header[..n_keys].to_vec(),
            keys,
            class_names: header[n_keys..].to_vec(),
            probs: Array2::from_shape_vec((n, k), data).map_err(|e| CliError::Data(e.to_string()))?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matrix_round_trips_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.bin");
        let m = Array2::from_shape_fn((3, 4), |(i, j)| (i as f64 + 0.1).powf(j as f64 + 0.3) / 7.0);
        write_matrix(&p, &m).unwrap();
        assert_eq!(read_matrix(&p).unwrap(), m);
        let mut bytes = fs::read(&p).unwrap();
        bytes.pop();
        fs::write(&p, bytes).unwrap();
        assert!(read_matrix(&p).is_err());
    }

    #[test]
    fn prob_table_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.csv");
        let t = ProbTable {
            key_names: vec!["event_id".into(), "fold".into()],
            keys: vec![vec!["a".into(), "0".into()], vec!["b".into(), "1".into()]],
            class_names: vec!["x".into(), "y".into()],
            probs: ndarray::array![[1.0 / 3.0, 2.0 / 3.0], [0.1, 0.9]],
        };
        t.write(&p).unwrap();
        let back = ProbTable::read(&p, 2).unwrap();
        assert_eq!(back.probs, t.probs);
        assert_eq!(back.keys, t.keys);
        assert_eq!(back.class_names, t.class_names);
    }
}
