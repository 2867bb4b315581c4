use std::fs;
use std::io::Write;
use std::ops::Index;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Length of every colour embedding.
pub const EMBEDDING_DIM: usize = 256;

/// A 256-entry colour code. Always finite.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct ColourEmbedding(Vec<f64>);

impl ColourEmbedding {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.len() != EMBEDDING_DIM {
            return Err(Error::shape(format!("embedding must have {EMBEDDING_DIM} entries, got {}", values.len())));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Validation(format!("embedding entry {i} is not finite")));
        }
        Ok(Self(values))
    }

    pub fn zeros() -> Self {
        Self(vec![0.0; EMBEDDING_DIM])
    }

    /// Zero embedding with the leading entries set from `head` (handy for low-dimensional examples).
    pub fn from_prefix(head: &[f64]) -> Result<Self> {
        let mut v = vec![0.0; EMBEDDING_DIM];
        if head.len() > EMBEDDING_DIM {
            return Err(Error::shape(format!("prefix longer than {EMBEDDING_DIM}")));
        }
        v[..head.len()].copy_from_slice(head);
        Self::new(v)
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn into_values(self) -> Vec<f64> {
        self.0
    }

    pub fn with_entry(&self, index: usize, value: f64) -> Result<Self> {
        if index >= EMBEDDING_DIM {
            return Err(Error::argument(format!("entry index {index} out of range [0, {EMBEDDING_DIM})")));
        }
        if !value.is_finite() {
            return Err(Error::argument(format!("entry value for {index} is not finite")));
        }
        let mut v = self.0.clone();
        v[index] = value;
        Ok(Self(v))
    }

    pub fn distance(&self, other: &ColourEmbedding) -> f64 {
        self.0.iter().zip(&other.0).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
    }
}

impl Index<usize> for ColourEmbedding {
    type Output = f64;

    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl<'de> Deserialize<'de> for ColourEmbedding {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let v = Vec::<f64>::deserialize(d)?;
        ColourEmbedding::new(v).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingRecord {
    pub id: String,
    pub values: ColourEmbedding,
}

pub fn write_embeddings(path: impl AsRef<Path>, records: &[EmbeddingRecord]) -> Result<()> {
    let mut f = fs::File::create(path)?;
    for r in records {
        serde_json::to_writer(&mut f, r)?;
        f.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_embeddings(path: impl AsRef<Path>) -> Result<Vec<EmbeddingRecord>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| Error::Load { path: path.to_path_buf(), source })?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| Error::Parse { line: i + 1, message: e.to_string() }))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_wrong_length_and_non_finite() {
        assert!(matches!(ColourEmbedding::new(vec![0.0; 255]), Err(Error::Shape(_))));
        let mut v = vec![0.0; EMBEDDING_DIM];
        v[3] = f64::NAN;
        assert!(ColourEmbedding::new(v).is_err());
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.jsonl");
        let recs = vec![
            EmbeddingRecord { id: "a".into(), values: ColourEmbedding::from_prefix(&[1.5, -2.0]).unwrap() },
            EmbeddingRecord { id: "b".into(), values: ColourEmbedding::zeros() },
        ];
        write_embeddings(&p, &recs).unwrap();
        assert_eq!(read_embeddings(&p).unwrap(), recs);
    }

    #[test]
    fn short_vector_in_file_is_parse_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.jsonl");
        fs::write(&p, "{\"id\":\"a\",\"values\":[1,2]}\n").unwrap();
        assert!(matches!(read_embeddings(&p), Err(Error::Parse { line: 1, .. })));
    }
}
