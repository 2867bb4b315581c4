//! Statistics, samplers, trajectories and projections over sets of embeddings.

use std::fs;
use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::embedding::{ColourEmbedding, EmbeddingRecord, EMBEDDING_DIM};
use crate::error::{Error, Result};

/// Default fraction of the largest entry variance above which an entry counts as active.
pub const DEFAULT_ACTIVE_THRESHOLD: f64 = 0.01;

/// Embeddings with the ids of the images they came from.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    embeddings: Vec<ColourEmbedding>,
    source_ids: Vec<String>,
}

impl EmbeddingSet {
    pub fn new(embeddings: Vec<ColourEmbedding>, source_ids: Vec<String>) -> Result<Self> {
        if embeddings.len() != source_ids.len() {
            return Err(Error::argument(format!(
                "{} embeddings but {} source ids",
                embeddings.len(),
                source_ids.len()
            )));
        }
        Ok(Self { embeddings, source_ids })
    }

    /// Ids default to the position in the list.
    pub fn from_embeddings(embeddings: Vec<ColourEmbedding>) -> Self {
        let source_ids = (0..embeddings.len()).map(|i| i.to_string()).collect();
        Self { embeddings, source_ids }
    }

    pub fn from_records(records: Vec<EmbeddingRecord>) -> Self {
        let (source_ids, embeddings) = records.into_iter().map(|r| (r.id, r.values)).unzip();
        Self { embeddings, source_ids }
    }

    pub fn to_records(&self) -> Vec<EmbeddingRecord> {
        self.iter().map(|(id, e)| EmbeddingRecord { id: id.to_string(), values: e.clone() }).collect()
    }

    pub fn len(&self) -> usize {
        self.embeddings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.embeddings.is_empty()
    }

    pub fn embeddings(&self) -> &[ColourEmbedding] {
        &self.embeddings
    }

    pub fn source_ids(&self) -> &[String] {
        &self.source_ids
    }

    pub fn get(&self, i: usize) -> Option<(&str, &ColourEmbedding)> {
        Some((self.source_ids.get(i)?.as_str(), self.embeddings.get(i)?))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &ColourEmbedding)> {
        self.source_ids.iter().map(String::as_str).zip(&self.embeddings)
    }

    fn require_non_empty(&self) -> Result<()> {
        if self.is_empty() {
            return Err(Error::argument("embedding set is empty"));
        }
        Ok(())
    }
}

/// Entry-wise arithmetic mean.
pub fn mean_embedding(set: &EmbeddingSet) -> Result<ColourEmbedding> {
    set.require_non_empty()?;
    let n = set.len() as f64;
    let mut sum = vec![0.0; EMBEDDING_DIM];
    for e in set.embeddings() {
        for (s, v) in sum.iter_mut().zip(e.values()) {
            *s += v;
        }
    }
    ColourEmbedding::new(sum.into_iter().map(|s| s / n).collect())
}

/// Population variance of every entry.
pub fn entry_variances(set: &EmbeddingSet) -> Result<Vec<f64>> {
    if set.len() < 2 {
        return Err(Error::argument(format!("variance needs at least 2 embeddings, got {}", set.len())));
    }
    let mean = mean_embedding(set)?;
    let n = set.len() as f64;
    let mut var = vec![0.0; EMBEDDING_DIM];
    for e in set.embeddings() {
        for ((acc, v), m) in var.iter_mut().zip(e.values()).zip(mean.values()) {
            *acc += (v - m) * (v - m);
        }
    }
    Ok(var.into_iter().map(|v| v / n).collect())
}

/// Indices whose variance is at least `threshold_fraction` of the largest, ascending.
/// All-zero variances give an empty list.
pub fn active_entries_from_variances(variances: &[f64], threshold_fraction: f64) -> Result<Vec<usize>> {
    if !(threshold_fraction > 0.0 && threshold_fraction <= 1.0) {
        return Err(Error::argument(format!("threshold fraction must lie in (0,1], got {threshold_fraction}")));
    }
    let max = variances.iter().copied().fold(0.0, f64::max);
    if max <= 0.0 {
        return Ok(Vec::new());
    }
    let cut = threshold_fraction * max;
    Ok(variances.iter().enumerate().filter(|(_, &v)| v >= cut).map(|(i, _)| i).collect())
}

pub fn active_entries(set: &EmbeddingSet, threshold_fraction: f64) -> Result<Vec<usize>> {
    active_entries_from_variances(&entry_variances(set)?, threshold_fraction)
}

/// The `k` highest-variance indices, largest first (ties by index).
pub fn top_entries(variances: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..variances.len()).collect();
    idx.sort_by(|&a, &b| variances[b].total_cmp(&variances[a]).then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

/// A draw from a sampler, with the member it was copied from if any.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledEmbedding {
    pub embedding: ColourEmbedding,
    pub member: Option<usize>,
}

/// Produces embeddings resembling those of a target set.
pub trait EmbeddingSampler: Send + Sync {
    fn name(&self) -> &'static str;
    fn sample(&self, set: &EmbeddingSet, rng: &mut dyn RngCore) -> Result<SampledEmbedding>;
}

/// Copies a uniformly chosen member.
#[derive(Debug, Clone, Copy, Default)]
pub struct ReuseSampler;

impl EmbeddingSampler for ReuseSampler {
    fn name(&self) -> &'static str {
        "reuse"
    }

    fn sample(&self, set: &EmbeddingSet, rng: &mut dyn RngCore) -> Result<SampledEmbedding> {
        set.require_non_empty()?;
        let i = rng.gen_range(0..set.len());
        Ok(SampledEmbedding { embedding: set.embeddings[i].clone(), member: Some(i) })
    }
}

/// Draws every entry independently from that entry's empirical marginal.
#[derive(Debug, Clone, Copy, Default)]
pub struct IndependentMarginalSampler;

impl EmbeddingSampler for IndependentMarginalSampler {
    fn name(&self) -> &'static str {
        "independent_marginal"
    }

    fn sample(&self, set: &EmbeddingSet, rng: &mut dyn RngCore) -> Result<SampledEmbedding> {
        set.require_non_empty()?;
        let values = (0..EMBEDDING_DIM).map(|k| set.embeddings[rng.gen_range(0..set.len())][k]).collect();
        Ok(SampledEmbedding { embedding: ColourEmbedding::new(values)?, member: None })
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplerKind {
    #[default]
    Reuse,
    IndependentMarginal,
}

impl SamplerKind {
    pub fn sampler(self) -> Box<dyn EmbeddingSampler> {
        match self {
            SamplerKind::Reuse => Box::new(ReuseSampler),
            SamplerKind::IndependentMarginal => Box::new(IndependentMarginalSampler),
        }
    }
}

impl std::str::FromStr for SamplerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "reuse" => Ok(SamplerKind::Reuse),
            "independent_marginal" | "independent-marginal" => Ok(SamplerKind::IndependentMarginal),
            other => Err(Error::argument(format!("unknown sampler {other:?}"))),
        }
    }
}

pub fn reuse_sample(set: &EmbeddingSet, seed: u64) -> Result<ColourEmbedding> {
    Ok(ReuseSampler.sample(set, &mut ChaCha8Rng::seed_from_u64(seed))?.embedding)
}

pub fn independent_marginal_sample(set: &EmbeddingSet, seed: u64) -> Result<ColourEmbedding> {
    Ok(IndependentMarginalSampler.sample(set, &mut ChaCha8Rng::seed_from_u64(seed))?.embedding)
}

/// A piecewise-linear path through embedding space.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    waypoints: Vec<ColourEmbedding>,
    labels: Vec<Option<String>>,
}

#[derive(Serialize, Deserialize)]
struct WaypointLine {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    label: Option<String>,
    embedding: ColourEmbedding,
}

impl Trajectory {
    pub fn new(waypoints: Vec<ColourEmbedding>) -> Result<Self> {
        let labels = vec![None; waypoints.len()];
        Self::with_labels(waypoints, labels)
    }

    pub fn with_labels(waypoints: Vec<ColourEmbedding>, labels: Vec<Option<String>>) -> Result<Self> {
        if waypoints.len() < 2 {
            return Err(Error::argument(format!("a trajectory needs at least 2 waypoints, got {}", waypoints.len())));
        }
        if labels.len() != waypoints.len() {
            return Err(Error::argument("one label slot per waypoint required"));
        }
        Ok(Self { waypoints, labels })
    }

    pub fn waypoints(&self) -> &[ColourEmbedding] {
        &self.waypoints
    }

    pub fn labels(&self) -> &[Option<String>] {
        &self.labels
    }

    fn segment_lengths(&self) -> Vec<f64> {
        self.waypoints.windows(2).map(|w| w[0].distance(&w[1])).collect()
    }

    pub fn arc_length(&self) -> f64 {
        self.segment_lengths().iter().sum()
    }

    /// The point a fraction `t` of the total arc length along the path.
    pub fn point(&self, t: f64) -> Result<ColourEmbedding> {
        if !(0.0..=1.0).contains(&t) {
            return Err(Error::argument(format!("t must lie in [0,1], got {t}")));
        }
        let lengths = self.segment_lengths();
        let total: f64 = lengths.iter().sum();
        let last = self.waypoints.len() - 1;
        if t == 1.0 {
            return Ok(self.waypoints[last].clone());
        }
        if total == 0.0 || t == 0.0 {
            return Ok(self.waypoints[0].clone());
        }
        let mut remaining = t * total;
        for (i, &len) in lengths.iter().enumerate() {
            if remaining <= len || i + 1 == lengths.len() {
                let s = if len > 0.0 { (remaining / len).min(1.0) } else { 0.0 };
                let (a, b) = (self.waypoints[i].values(), self.waypoints[i + 1].values());
                return ColourEmbedding::new(a.iter().zip(b).map(|(x, y)| x + s * (y - x)).collect());
            }
            remaining -= len;
        }
        unreachable!("loop returns on the final segment")
    }

    /// The same path translated to start at `anchor`.
    pub fn parallel_curve(&self, anchor: &ColourEmbedding) -> Result<Trajectory> {
        let first = self.waypoints[0].values();
        let shift: Vec<f64> = anchor.values().iter().zip(first).map(|(a, f)| a - f).collect();
        let waypoints = self
            .waypoints
            .iter()
            .map(|w| ColourEmbedding::new(w.values().iter().zip(&shift).map(|(v, s)| v + s).collect()))
            .collect::<Result<Vec<_>>>()?;
        Trajectory::with_labels(waypoints, self.labels.clone())
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for (w, l) in self.waypoints.iter().zip(&self.labels) {
            let line = WaypointLine { label: l.clone(), embedding: w.clone() };
            out.push_str(&serde_json::to_string(&line).expect("waypoints serialize"));
            out.push('\n');
        }
        out
    }

    pub fn parse_jsonl(text: &str) -> Result<Self> {
        let mut waypoints = Vec::new();
        let mut labels = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let w: WaypointLine =
                serde_json::from_str(line).map_err(|e| Error::Parse { line: i + 1, message: e.to_string() })?;
            waypoints.push(w.embedding);
            labels.push(w.label);
        }
        Self::with_labels(waypoints, labels)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_jsonl())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| Error::Load { path: path.to_path_buf(), source })?;
        Self::parse_jsonl(&text)
    }
}

/// Projects the centred set onto its top `dims` principal axes. Axis signs are
/// fixed so the largest-magnitude loading is positive. A set without variance
/// projects to zeros.
pub fn pca_project(set: &EmbeddingSet, dims: usize) -> Result<Vec<Vec<f64>>> {
    if dims == 0 || dims > set.len() {
        return Err(Error::argument(format!("need 1 <= dims <= set size ({}), got {dims}", set.len())));
    }
    if dims > EMBEDDING_DIM {
        return Err(Error::argument(format!("dims {dims} exceeds embedding size")));
    }
    let mean = mean_embedding(set)?;
    let n = set.len();
    let centred = DMatrix::from_fn(n, EMBEDDING_DIM, |i, k| set.embeddings[i][k] - mean[k]);
    let cov = centred.transpose() * &centred / n as f64;
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..EMBEDDING_DIM).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let axes: Vec<Vec<f64>> = order[..dims]
        .iter()
        .map(|&j| {
            let col: Vec<f64> = eig.eigenvectors.column(j).iter().copied().collect();
            let pivot = col.iter().copied().fold(0.0f64, |m, v| if v.abs() > m.abs() { v } else { m });
            if pivot < 0.0 {
                col.into_iter().map(|v| -v).collect()
            } else {
                col
            }
        })
        .collect();
    Ok((0..n)
        .map(|i| {
            axes.iter()
                .map(|a| {
                    let p: f64 = centred.row(i).iter().zip(a).map(|(x, y)| x * y).sum();
                    if p.abs() < 1e-12 { 0.0 } else { p }
                })
                .collect()
        })
        .collect())
}

/// Writes `index,c0,c1,...` rows.
pub fn write_pca_csv(path: impl AsRef<Path>, points: &[Vec<f64>]) -> Result<()> {
    let mut f = fs::File::create(path)?;
    let dims = points.first().map_or(0, Vec::len);
    let header: Vec<String> = std::iter::once("index".to_string()).chain((0..dims).map(|d| format!("pc{}", d + 1))).collect();
    writeln!(f, "{}", header.join(","))?;
    for (i, p) in points.iter().enumerate() {
        let cols: Vec<String> = p.iter().map(|v| v.to_string()).collect();
        writeln!(f, "{i},{}", cols.join(","))?;
    }
    Ok(())
}
