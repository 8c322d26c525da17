//! Sets of flat embeddings with per-item labels, and the `GEMB` file format.
//!
//! Layout (little-endian): magic `GEMB`, `u32` count n, `u32` dim d, `u32`
//! length of a JSON array holding one `{subject, condition, seq, view}`
//! object per item (fields may be null), then n·d `f32` values row-major.

use std::io::Write;
use std::path::Path;

use crate::error::{GaitError, Result};
use crate::model::{embed_sequence, SequenceMeta, SfeParams, SilhouetteSequence};
use crate::parallel;

pub const EMBEDDING_MAGIC: &[u8; 4] = b"GEMB";

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    dim: usize,
    values: Vec<f32>,
    meta: Vec<SequenceMeta>,
}

impl EmbeddingSet {
    pub fn new(dim: usize, values: Vec<f32>, meta: Vec<SequenceMeta>) -> Result<Self> {
        if dim == 0 {
            return Err(GaitError::Shape(
                "embedding dimension must be positive".into(),
            ));
        }
        if values.len() != dim * meta.len() {
            return Err(GaitError::Shape(format!(
                "{} values do not form {} rows of dimension {dim}",
                values.len(),
                meta.len()
            )));
        }
        Ok(EmbeddingSet { dim, values, meta })
    }

    pub fn from_rows(rows: Vec<Vec<f32>>, meta: Vec<SequenceMeta>) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if let Some(r) = rows.iter().find(|r| r.len() != dim) {
            return Err(GaitError::Shape(format!(
                "rows of length {} and {dim} mixed",
                r.len()
            )));
        }
        EmbeddingSet::new(dim, rows.concat(), meta)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.meta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.meta.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f32]> {
        self.values.chunks_exact(self.dim)
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn meta(&self) -> &[SequenceMeta] {
        &self.meta
    }

    /// Rows whose index satisfies `keep`, in order.
    pub fn filter(&self, mut keep: impl FnMut(usize, &SequenceMeta) -> bool) -> EmbeddingSet {
        let mut values = Vec::new();
        let mut meta = Vec::new();
        for (i, m) in self.meta.iter().enumerate() {
            if keep(i, m) {
                values.extend_from_slice(self.row(i));
                meta.push(m.clone());
            }
        }
        EmbeddingSet {
            dim: self.dim,
            values,
            meta,
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let json = serde_json::to_vec(&self.meta)?;
        let mut out = Vec::with_capacity(16 + json.len() + 4 * self.values.len());
        out.extend_from_slice(EMBEDDING_MAGIC);
        out.extend_from_slice(&(self.len() as u32).to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8], origin: &Path) -> Result<Self> {
        let bad = |r: String| GaitError::format(origin, r);
        if bytes.len() < 16 || &bytes[..4] != EMBEDDING_MAGIC {
            return Err(bad("missing GEMB magic".into()));
        }
        let word = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap()) as usize;
        let (n, dim, jlen) = (word(4), word(8), word(12));
        let json = bytes
            .get(16..16 + jlen)
            .ok_or_else(|| bad("truncated metadata".into()))?;
        let meta: Vec<SequenceMeta> =
            serde_json::from_slice(json).map_err(|e| bad(format!("metadata: {e}")))?;
        if meta.len() != n {
            return Err(bad(format!(
                "header says {n} items, metadata lists {}",
                meta.len()
            )));
        }
        let payload = &bytes[16 + jlen..];
        if payload.len() != 4 * n * dim {
            return Err(bad(format!(
                "expected {} payload bytes, found {}",
                4 * n * dim,
                payload.len()
            )));
        }
        let values = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        EmbeddingSet::new(dim, values, meta).map_err(|e| bad(e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_file(path, &self.to_bytes()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| GaitError::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }

    /// CSV mirror: `subject,condition,seq,view,e0,...` with empty cells for
    /// missing labels.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("subject,condition,seq,view");
        for k in 0..self.dim {
            out.push_str(&format!(",e{k}"));
        }
        out.push('\n');
        for (m, row) in self.meta.iter().zip(self.rows()) {
            out.push_str(&meta_cells(m));
            for v in row {
                out.push_str(&format!(",{v}"));
            }
            out.push('\n');
        }
        out
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        write_file(path, self.to_csv().as_bytes())
    }
}

pub(crate) fn meta_cells(m: &SequenceMeta) -> String {
    format!(
        "{},{},{},{}",
        m.subject.as_deref().unwrap_or(""),
        m.condition.as_deref().unwrap_or(""),
        m.seq.map(|s| s.to_string()).unwrap_or_default(),
        m.view.map(|v| v.to_string()).unwrap_or_default()
    )
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::File::create(path)
        .and_then(|mut f| f.write_all(bytes))
        .map_err(|e| GaitError::io(path, e))
}

/// Embeds every sequence with all of its frames, keeping input order.
pub fn embed_sequences(
    sequences: &[SilhouetteSequence],
    params: &SfeParams<f32>,
) -> Result<EmbeddingSet> {
    let rows = parallel::try_map(sequences, |s| Ok(embed_sequence(s, params)?.into_flat()))?;
    let meta = sequences.iter().map(|s| s.meta.clone()).collect();
    if rows.is_empty() {
        return EmbeddingSet::new(params.config.embedding_dim(), Vec::new(), meta);
    }
    EmbeddingSet::from_rows(rows, meta)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> EmbeddingSet {
        let meta = vec![
            SequenceMeta::labeled("001", "nm", 5, 90),
            SequenceMeta::default(),
        ];
        EmbeddingSet::new(3, vec![0.5, -1.0, 2.0, 0.0, 1e-8, f32::MAX], meta).unwrap()
    }

    #[test]
    fn gemb_round_trip() {
        let set = sample();
        let bytes = set.to_bytes().unwrap();
        assert_eq!(&bytes[..4], b"GEMB");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 2);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 3);
        assert_eq!(
            EmbeddingSet::from_bytes(&bytes, Path::new("m")).unwrap(),
            set
        );
        assert!(EmbeddingSet::from_bytes(&bytes[..bytes.len() - 1], Path::new("m")).is_err());
    }

    #[test]
    fn unlabeled_items_serialize_as_nulls() {
        let bytes = sample().to_bytes().unwrap();
        let jlen = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
        let meta: serde_json::Value = serde_json::from_slice(&bytes[16..16 + jlen]).unwrap();
        assert_eq!(meta[1]["subject"], serde_json::Value::Null);
        assert_eq!(meta[0]["view"], 90);
    }

    #[test]
    fn csv_mirror() {
        let csv = sample().to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "subject,condition,seq,view,e0,e1,e2");
        assert_eq!(lines[1], "001,nm,5,90,0.5,-1,2");
        assert!(lines[2].starts_with(",,,,0,"));
    }

    #[test]
    fn filter_keeps_order() {
        let f = sample().filter(|_, m| m.subject.is_none());
        assert_eq!(f.len(), 1);
        assert_eq!(f.row(0)[2], f32::MAX);
    }
}
