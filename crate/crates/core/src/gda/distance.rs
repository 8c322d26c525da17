//! Probe x gallery distance matrices and the `GDST` file format.
//!
//! Layout (little-endian): magic `GDST`, `u32` rows, `u32` cols, `u32` JSON
//! length, JSON `{"rows": [meta...], "cols": [meta...]}`, then rows·cols
//! `f64` values row-major.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::embedding::{meta_cells, write_file, EmbeddingSet};
use crate::error::{GaitError, Result};
use crate::model::SequenceMeta;
use crate::parallel;

pub const DISTANCE_MAGIC: &[u8; 4] = b"GDST";

/// Rows are probes, columns gallery items.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
    row_meta: Vec<SequenceMeta>,
    col_meta: Vec<SequenceMeta>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MetaBlock {
    rows: Vec<SequenceMeta>,
    cols: Vec<SequenceMeta>,
}

pub fn euclidean(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum::<f64>()
        .sqrt()
}

impl DistanceMatrix {
    pub fn new(
        values: Vec<f64>,
        row_meta: Vec<SequenceMeta>,
        col_meta: Vec<SequenceMeta>,
    ) -> Result<Self> {
        let (rows, cols) = (row_meta.len(), col_meta.len());
        if values.len() != rows * cols {
            return Err(GaitError::Shape(format!(
                "{} values for a {rows} x {cols} matrix",
                values.len()
            )));
        }
        Ok(DistanceMatrix {
            rows,
            cols,
            values,
            row_meta,
            col_meta,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.values[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.values[r * self.cols..(r + 1) * self.cols]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row_meta(&self) -> &[SequenceMeta] {
        &self.row_meta
    }

    pub fn col_meta(&self) -> &[SequenceMeta] {
        &self.col_meta
    }

    /// Applies `f` to every value, keeping labels.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> DistanceMatrix {
        DistanceMatrix {
            values: self.values.iter().map(|&v| f(v)).collect(),
            ..self.clone()
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let json = serde_json::to_vec(&MetaBlock {
            rows: self.row_meta.clone(),
            cols: self.col_meta.clone(),
        })?;
        let mut out = Vec::with_capacity(16 + json.len() + 8 * self.values.len());
        out.extend_from_slice(DISTANCE_MAGIC);
        out.extend_from_slice(&(self.rows as u32).to_le_bytes());
        out.extend_from_slice(&(self.cols as u32).to_le_bytes());
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8], origin: &Path) -> Result<Self> {
        let bad = |r: String| GaitError::format(origin, r);
        if bytes.len() < 16 || &bytes[..4] != DISTANCE_MAGIC {
            return Err(bad("missing GDST magic".into()));
        }
        let word = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap()) as usize;
        let (rows, cols, jlen) = (word(4), word(8), word(12));
        let json = bytes
            .get(16..16 + jlen)
            .ok_or_else(|| bad("truncated metadata".into()))?;
        let meta: MetaBlock =
            serde_json::from_slice(json).map_err(|e| bad(format!("metadata: {e}")))?;
        if meta.rows.len() != rows || meta.cols.len() != cols {
            return Err(bad("metadata does not match the matrix size".into()));
        }
        let payload = &bytes[16 + jlen..];
        if payload.len() != 8 * rows * cols {
            return Err(bad(format!(
                "expected {} payload bytes, found {}",
                8 * rows * cols,
                payload.len()
            )));
        }
        let values = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        DistanceMatrix::new(values, meta.rows, meta.cols)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_file(path, &self.to_bytes()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| GaitError::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }

    /// Long-form CSV: one line per (probe, gallery) pair.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "probe,probe_subject,probe_condition,probe_seq,probe_view,\
             gallery,gallery_subject,gallery_condition,gallery_seq,gallery_view,distance\n",
        );
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.push_str(&format!(
                    "{r},{},{c},{},{}\n",
                    meta_cells(&self.row_meta[r]),
                    meta_cells(&self.col_meta[c]),
                    self.get(r, c)
                ));
            }
        }
        out
    }
}

/// Pairwise Euclidean distances between probe and gallery embeddings.
pub fn distance_matrix(probes: &EmbeddingSet, gallery: &EmbeddingSet) -> Result<DistanceMatrix> {
    if probes.dim() != gallery.dim() {
        return Err(GaitError::Shape(format!(
            "probe dimension {} differs from gallery dimension {}",
            probes.dim(),
            gallery.dim()
        )));
    }
    let idx: Vec<usize> = (0..probes.len()).collect();
    let rows = parallel::map(&idx, |&r| {
        gallery
            .rows()
            .map(|g| euclidean(probes.row(r), g))
            .collect::<Vec<_>>()
    });
    DistanceMatrix::new(
        rows.concat(),
        probes.meta().to_vec(),
        gallery.meta().to_vec(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(rows: Vec<Vec<f32>>) -> EmbeddingSet {
        let meta = vec![SequenceMeta::default(); rows.len()];
        EmbeddingSet::from_rows(rows, meta).unwrap()
    }

    #[test]
    fn three_four_five() {
        let d = distance_matrix(
            &set(vec![vec![0.0, 0.0]]),
            &set(vec![vec![3.0, 4.0], vec![0.0, 0.0]]),
        )
        .unwrap();
        assert_eq!(d.row(0), [5.0, 0.0]);
    }

    #[test]
    fn symmetric_on_self() {
        let s = set(vec![
            vec![1.0, 2.0, 3.0],
            vec![-1.0, 0.5, 2.0],
            vec![0.0, 0.0, 7.0],
        ]);
        let d = distance_matrix(&s, &s).unwrap();
        for i in 0..3 {
            assert_eq!(d.get(i, i), 0.0);
            for j in 0..3 {
                assert_eq!(d.get(i, j), d.get(j, i));
            }
        }
    }

    #[test]
    fn dimension_mismatch() {
        assert!(distance_matrix(&set(vec![vec![0.0]]), &set(vec![vec![0.0, 1.0]])).is_err());
    }

    #[test]
    fn gdst_round_trip() {
        let mut rows = vec![SequenceMeta::labeled("a", "nm", 5, 0)];
        rows.push(SequenceMeta::default());
        let d = DistanceMatrix::new(
            vec![0.1, -2.0, 3.5, f64::MIN_POSITIVE],
            rows,
            vec![SequenceMeta::default(); 2],
        )
        .unwrap();
        let bytes = d.to_bytes().unwrap();
        assert_eq!(&bytes[..4], b"GDST");
        assert_eq!(
            DistanceMatrix::from_bytes(&bytes, Path::new("m")).unwrap(),
            d
        );
        assert!(d
            .to_csv()
            .lines()
            .nth(1)
            .unwrap()
            .starts_with("0,a,nm,5,0,0,,,,,0.1"));
    }
}
