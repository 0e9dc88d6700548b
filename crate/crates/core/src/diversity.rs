//! Two-stage selection: an IFD pre-filter followed by facility-location
//! greedy maximization over sample embeddings.
//!
//! The objective over ground set `V` is
//! `F(S) = sum_{i in V} max_{j in S} sim(i, j)` with `sim` the cosine
//! similarity clipped below at zero (and `F(empty) = 0`). Clipping keeps
//! `F` monotone submodular, so marginal gains never increase as `S` grows.
//!
//! # Embedding cache layout
//!
//! All integers little-endian.
//!
//! ```text
//! offset  size           field
//! 0       8              magic "SFEMB001"
//! 8       4              dim   (u32)
//! 12      8              count (u64)
//! 20      4*dim*count    vectors, row-major f32
//! ...     per id         id index: u32 byte length + UTF-8 bytes, `count` times
//! ...     4 + len        embedder name: u32 byte length + UTF-8 bytes
//! ```

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap};
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, InstructionSample};
use crate::error::{Error, Result};
use crate::numfmt::{serialize_sig, serialize_sig_vec};
use crate::remote::RemoteClient;
use crate::scoring::ScoredSample;
use crate::selection::{budget_for, select_top_ifd, SelectionConfig, SelectionResult};

pub const CACHE_MAGIC: &[u8; 8] = b"SFEMB001";
pub const DEFAULT_HASHED_DIM: usize = 1024;

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    ids: Vec<String>,
    /// Row-major, `ids.len() * dim` values.
    vectors: Vec<f32>,
    dim: usize,
    embedder: String,
}

impl EmbeddingSet {
    pub fn new(ids: Vec<String>, vectors: Vec<f32>, dim: usize, embedder: impl Into<String>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Data("embedding dimension must be >= 1".into()));
        }
        if vectors.len() != ids.len() * dim {
            return Err(Error::Data(format!(
                "{} values do not form {} vectors of dim {dim}",
                vectors.len(),
                ids.len()
            )));
        }
        for (id, row) in ids.iter().zip(vectors.chunks_exact(dim)) {
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::Data(format!("embedding of {id:?} has non-finite entries")));
            }
            if row.iter().all(|&v| v == 0.0) {
                return Err(Error::Data(format!("embedding of {id:?} has zero norm")));
            }
        }
        Ok(Self {
            ids,
            vectors,
            dim,
            embedder: embedder.into(),
        })
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn embedder(&self) -> &str {
        &self.embedder
    }

    pub fn vector(&self, index: usize) -> &[f32] {
        &self.vectors[index * self.dim..(index + 1) * self.dim]
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.ids.iter().position(|x| x == id)
    }

    /// Cosine similarity of rows `i` and `j` (unclipped).
    pub fn cosine(&self, i: usize, j: usize) -> f64 {
        let (a, b) = (self.vector(i), self.vector(j));
        let dot: f64 = a.iter().zip(b).map(|(x, y)| f64::from(*x) * f64::from(*y)).sum();
        let na: f64 = a.iter().map(|x| f64::from(*x).powi(2)).sum::<f64>().sqrt();
        let nb: f64 = b.iter().map(|x| f64::from(*x).powi(2)).sum::<f64>().sqrt();
        dot / (na * nb)
    }

    pub fn write_cache(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::with_capacity(24 + self.vectors.len() * 4 + self.ids.len() * 12);
        buf.extend_from_slice(CACHE_MAGIC);
        let dim = u32::try_from(self.dim).map_err(|_| Error::Data("dimension exceeds u32".into()))?;
        buf.extend_from_slice(&dim.to_le_bytes());
        buf.extend_from_slice(&(self.ids.len() as u64).to_le_bytes());
        for v in &self.vectors {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        let mut put_str = |s: &str| -> Result<()> {
            let len = u32::try_from(s.len()).map_err(|_| Error::Data("string exceeds u32 length".into()))?;
            buf.extend_from_slice(&len.to_le_bytes());
            buf.extend_from_slice(s.as_bytes());
            Ok(())
        };
        for id in &self.ids {
            put_str(id)?;
        }
        put_str(&self.embedder)?;
        crate::data::ensure_parent(path)?;
        fs::write(path, buf).map_err(|e| Error::io(path, e))
    }

    pub fn read_cache(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let bad = |what: &str| Error::Data(format!("{}: corrupt embedding cache: {what}", path.display()));
        let mut cursor = 0usize;
        let mut take = |n: usize| -> Result<&[u8]> {
            let end = cursor.checked_add(n).filter(|&e| e <= bytes.len()).ok_or_else(|| bad("truncated"))?;
            let slice = &bytes[cursor..end];
            cursor = end;
            Ok(slice)
        };
        if take(8)? != CACHE_MAGIC {
            return Err(bad("bad magic"));
        }
        let dim = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
        let count = u64::from_le_bytes(take(8)?.try_into().unwrap()) as usize;
        let n_values = count.checked_mul(dim).ok_or_else(|| bad("size overflow"))?;
        let vectors = take(n_values.checked_mul(4).ok_or_else(|| bad("size overflow"))?)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let mut take_str = || -> Result<String> {
            let len = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
            String::from_utf8(take(len)?.to_vec()).map_err(|_| bad("non-UTF-8 string"))
        };
        let ids = (0..count).map(|_| take_str()).collect::<Result<Vec<_>>>()?;
        let embedder = take_str()?;
        Self::new(ids, vectors, dim, embedder)
    }
}

/// 64-bit FNV-1a.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    bytes
        .iter()
        .fold(OFFSET, |h, b| (h ^ u64::from(*b)).wrapping_mul(PRIME))
}

/// Text that gets embedded for a sample: instruction then response.
pub fn embedding_text(sample: &InstructionSample) -> String {
    format!("{}\n{}", sample.instruction, sample.response)
}

/// Lowercased whitespace tokens hashed into `dim` buckets, L2-normalized.
pub fn hashed_bow_vector(text: &str, dim: usize) -> Vec<f32> {
    let mut counts = vec![0.0f64; dim];
    for token in text.split_whitespace() {
        let token = token.to_lowercase();
        counts[(fnv1a64(token.as_bytes()) % dim as u64) as usize] += 1.0;
    }
    let norm = counts.iter().map(|c| c * c).sum::<f64>().sqrt();
    if norm > 0.0 {
        counts.iter().map(|c| (c / norm) as f32).collect()
    } else {
        vec![0.0; dim]
    }
}

pub enum Embedder<'a> {
    HashedBow { dim: usize },
    Remote(&'a RemoteClient),
}

impl Embedder<'_> {
    pub fn name(&self) -> String {
        match self {
            Embedder::HashedBow { dim } => format!("hashed-bow-{dim}"),
            Embedder::Remote(client) => client.base_url().to_owned(),
        }
    }
}

const REMOTE_EMBED_BATCH: usize = 64;

pub fn embed(samples: &[InstructionSample], embedder: &Embedder<'_>) -> Result<EmbeddingSet> {
    if samples.is_empty() {
        return Err(Error::Data("no samples to embed".into()));
    }
    let ids: Vec<String> = samples.iter().map(|s| s.id.clone()).collect();
    match embedder {
        Embedder::HashedBow { dim } => {
            if *dim == 0 {
                return Err(Error::Config("hashed-bow dimension must be >= 1".into()));
            }
            let vectors = samples
                .iter()
                .flat_map(|s| hashed_bow_vector(&embedding_text(s), *dim))
                .collect();
            EmbeddingSet::new(ids, vectors, *dim, embedder.name())
        }
        Embedder::Remote(client) => {
            let mut vectors = Vec::new();
            let mut dim = None;
            let mut model = String::new();
            for chunk in samples.chunks(REMOTE_EMBED_BATCH) {
                let texts: Vec<String> = chunk.iter().map(embedding_text).collect();
                let response = client.embed(&texts).map_err(|e| e.with_sample(&chunk[0].id))?;
                if *dim.get_or_insert(response.dim) != response.dim {
                    return Err(Error::Data("embedding dimension changed between batches".into()));
                }
                model = response.model;
                vectors.extend(response.vectors.into_iter().flatten().map(|v| v as f32));
            }
            let name = if model.is_empty() { embedder.name() } else { model };
            EmbeddingSet::new(ids, vectors, dim.unwrap_or(0), name)
        }
    }
}

/// Outcome of a greedy run: ids in pick order with their marginal gains.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GreedyResult {
    pub picks: Vec<String>,
    #[serde(serialize_with = "serialize_sig_vec")]
    pub gains: Vec<f64>,
    #[serde(serialize_with = "serialize_sig")]
    pub objective: f64,
}

/// Ground set with unit vectors, indexed by position in dataset order.
struct GroundSet {
    ids: Vec<String>,
    unit: Vec<f64>,
    dim: usize,
}

impl GroundSet {
    fn new(embeddings: &EmbeddingSet, ground_ids: &[String], k: usize) -> Result<Self> {
        let mut positions = Vec::with_capacity(ground_ids.len());
        let index: HashMap<&str, usize> =
            embeddings.ids.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect();
        for id in ground_ids {
            let pos = *index
                .get(id.as_str())
                .ok_or_else(|| Error::Consistency(format!("ground id {id:?} has no embedding")))?;
            positions.push(pos);
        }
        positions.sort_unstable();
        positions.dedup();
        if k == 0 || k > positions.len() {
            return Err(Error::Config(format!(
                "k must be within 1..={}, got {k}",
                positions.len()
            )));
        }
        let dim = embeddings.dim;
        let mut unit = Vec::with_capacity(positions.len() * dim);
        for &p in &positions {
            let row = embeddings.vector(p);
            let norm = row.iter().map(|x| f64::from(*x).powi(2)).sum::<f64>().sqrt();
            unit.extend(row.iter().map(|x| f64::from(*x) / norm));
        }
        Ok(Self {
            ids: positions.iter().map(|&p| embeddings.ids[p].clone()).collect(),
            unit,
            dim,
        })
    }

    fn len(&self) -> usize {
        self.ids.len()
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.unit[i * self.dim..(i + 1) * self.dim]
    }

    /// Cosine similarity clipped at zero.
    fn sim(&self, i: usize, j: usize) -> f64 {
        let dot: f64 = self.row(i).iter().zip(self.row(j)).map(|(a, b)| a * b).sum();
        dot.max(0.0)
    }

    /// Marginal gain of adding `candidate` given current coverage `best`.
    /// Summed sequentially in index order, so the value is monotone in `best`.
    fn gain(&self, candidate: usize, best: &[f64]) -> f64 {
        let mut total = 0.0;
        for (i, b) in best.iter().enumerate() {
            let d = self.sim(i, candidate) - b;
            if d > 0.0 {
                total += d;
            }
        }
        total
    }

    fn commit(&self, pick: usize, best: &mut [f64]) {
        for (i, b) in best.iter_mut().enumerate() {
            let s = self.sim(i, pick);
            if s > *b {
                *b = s;
            }
        }
    }
}

/// (gain, position) ordered so that larger gain wins and, for equal gain,
/// the earlier position wins.
#[derive(Debug, Clone, Copy)]
struct Candidate {
    gain: f64,
    pos: usize,
    step: usize,
}

impl PartialEq for Candidate {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Candidate {}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.gain
            .total_cmp(&other.gain)
            .then_with(|| other.pos.cmp(&self.pos))
    }
}

fn finish(ground: &GroundSet, picks: Vec<usize>, gains: Vec<f64>, best: &[f64]) -> GreedyResult {
    GreedyResult {
        picks: picks.into_iter().map(|p| ground.ids[p].clone()).collect(),
        gains,
        objective: best.iter().sum(),
    }
}

/// Reference greedy: every remaining candidate is re-evaluated at every step.
pub fn facility_location_greedy_naive(
    embeddings: &EmbeddingSet,
    ground_ids: &[String],
    k: usize,
) -> Result<GreedyResult> {
    let ground = GroundSet::new(embeddings, ground_ids, k)?;
    let m = ground.len();
    let mut best = vec![0.0; m];
    let mut chosen = vec![false; m];
    let (mut picks, mut gains) = (Vec::with_capacity(k), Vec::with_capacity(k));
    for _ in 0..k {
        let top = (0..m)
            .into_par_iter()
            .filter(|&c| !chosen[c])
            .map(|c| Candidate { gain: ground.gain(c, &best), pos: c, step: 0 })
            .max()
            .expect("k <= |V| leaves a candidate");
        chosen[top.pos] = true;
        ground.commit(top.pos, &mut best);
        picks.push(top.pos);
        gains.push(top.gain);
    }
    Ok(finish(&ground, picks, gains, &best))
}

/// Lazy greedy with a max-heap of stale upper bounds.
///
/// A popped candidate is taken only if its gain was computed at the current
/// step. Stale bounds are never below the current gain, so this returns the
/// same picks as [`facility_location_greedy_naive`], ties included.
pub fn facility_location_greedy(
    embeddings: &EmbeddingSet,
    ground_ids: &[String],
    k: usize,
) -> Result<GreedyResult> {
    let ground = GroundSet::new(embeddings, ground_ids, k)?;
    let m = ground.len();
    let mut best = vec![0.0; m];
    let initial: Vec<Candidate> = (0..m)
        .into_par_iter()
        .map(|c| Candidate { gain: ground.gain(c, &best), pos: c, step: 0 })
        .collect();
    let mut heap = BinaryHeap::from(initial);
    let (mut picks, mut gains) = (Vec::with_capacity(k), Vec::with_capacity(k));
    for step in 0..k {
        loop {
            let top = heap.pop().expect("k <= |V| leaves a candidate");
            if top.step == step {
                ground.commit(top.pos, &mut best);
                picks.push(top.pos);
                gains.push(top.gain);
                break;
            }
            heap.push(Candidate { gain: ground.gain(top.pos, &best), pos: top.pos, step });
        }
    }
    Ok(finish(&ground, picks, gains, &best))
}

/// Facility-location value of `selected` over `ground_ids`.
pub fn facility_location_value(
    embeddings: &EmbeddingSet,
    ground_ids: &[String],
    selected: &[String],
) -> Result<f64> {
    let ground = GroundSet::new(embeddings, ground_ids, ground_ids.len().max(1))?;
    let index: HashMap<&str, usize> =
        ground.ids.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect();
    let mut best = vec![0.0; ground.len()];
    for id in selected {
        let pos = *index
            .get(id.as_str())
            .ok_or_else(|| Error::Consistency(format!("{id:?} is not in the ground set")))?;
        ground.commit(pos, &mut best);
    }
    Ok(best.iter().sum())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiversityConfig {
    /// Fraction of the dataset kept by the IFD stage.
    pub pre_ratio: f64,
    /// Fraction of the full dataset in the final output.
    pub final_ratio: f64,
    pub ifd_cap: f64,
}

impl Default for DiversityConfig {
    fn default() -> Self {
        Self {
            pre_ratio: 0.20,
            final_ratio: 0.02,
            ifd_cap: SelectionConfig::DEFAULT_IFD_CAP,
        }
    }
}

impl DiversityConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.final_ratio > 0.0 && self.final_ratio < self.pre_ratio && self.pre_ratio <= 1.0) {
            return Err(Error::Config(format!(
                "need 0 < final_ratio < pre_ratio <= 1, got final {} and pre {}",
                self.final_ratio, self.pre_ratio
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiversityResult {
    /// Final picks in greedy order; `budget` is the final k.
    pub selection: SelectionResult,
    pub stage1: SelectionResult,
    pub stage1_size: usize,
    pub k: usize,
    #[serde(serialize_with = "serialize_sig_vec")]
    pub gains: Vec<f64>,
    #[serde(serialize_with = "serialize_sig")]
    pub objective: f64,
    pub ground_set: String,
    pub similarity: String,
    pub embedder: String,
}

/// IFD pre-filter to `pre_ratio` of the dataset, then facility-location
/// greedy over that pool down to `floor(final_ratio * n)` samples.
pub fn superfilter_d(
    dataset: &Dataset,
    scores: &[ScoredSample],
    embeddings: &EmbeddingSet,
    config: &DiversityConfig,
) -> Result<DiversityResult> {
    config.validate()?;
    let by_id: HashMap<&str, &ScoredSample> = scores.iter().map(|s| (s.id.as_str(), s)).collect();
    let aligned = dataset
        .samples
        .iter()
        .map(|s| {
            by_id
                .get(s.id.as_str())
                .map(|sc| (*sc).clone())
                .ok_or_else(|| Error::Consistency(format!("sample {:?} has no score", s.id)))
        })
        .collect::<Result<Vec<_>>>()?;

    let n = dataset.n();
    let k = budget_for(config.final_ratio, n);
    if k == 0 {
        return Err(Error::Config(format!(
            "final ratio {} of {n} samples gives an empty selection",
            config.final_ratio
        )));
    }
    let stage1 = select_top_ifd(&aligned, &SelectionConfig::new(config.pre_ratio).with_cap(config.ifd_cap))?;
    let pool = stage1.selected_ids.len();
    if pool < k {
        return Err(Error::Config(format!(
            "stage-1 pool has {pool} samples but the final selection needs {k}"
        )));
    }
    let greedy = facility_location_greedy(embeddings, &stage1.selected_ids, k)?;
    Ok(DiversityResult {
        selection: SelectionResult {
            selected_ids: greedy.picks,
            budget: k,
            n_excluded_by_cap: stage1.n_excluded_by_cap,
            underfilled: false,
        },
        stage1_size: pool,
        k,
        gains: greedy.gains,
        objective: greedy.objective,
        stage1,
        ground_set: "stage-1 pool".into(),
        similarity: "cosine clipped at 0".into(),
        embedder: embeddings.embedder.clone(),
    })
}
