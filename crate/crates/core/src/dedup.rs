//! Containment-based contamination checking.
//!
//! Texts are normalized, cut into hashed k-token shingles, sketched with
//! MinHash and bucketed by LSH bands. LSH only proposes candidate pairs;
//! every flag is decided by exact containment `|S(q) ∩ S(x)| / |S(q)|`.

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_K: usize = 5;
pub const DEFAULT_HASHES: usize = 256;
pub const DEFAULT_BANDS: usize = 64;
pub const DEFAULT_THRESHOLD: f64 = 0.8;
pub const DEFAULT_SEED: u64 = 0x5EED_D0C5;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(FNV_OFFSET, |h, b| (h ^ *b as u64).wrapping_mul(FNV_PRIME))
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// A text record as read from newline-delimited JSON.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub text: String,
}

impl Document {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            text: text.into(),
        }
    }
}

/// Lowercased tokens with punctuation removed.
pub fn normalize_tokens(text: &str) -> Vec<String> {
    let cleaned: String = text
        .chars()
        .filter(|c| c.is_alphanumeric() || c.is_whitespace())
        .flat_map(char::to_lowercase)
        .collect();
    cleaned.split_whitespace().map(str::to_owned).collect()
}

/// The k-gram strings before hashing, each joined by single spaces.
pub fn shingle_strings(text: &str, k: usize) -> Vec<String> {
    let tokens = normalize_tokens(text);
    if k == 0 || tokens.len() < k {
        return Vec::new();
    }
    tokens.windows(k).map(|w| w.join(" ")).collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShingleSet {
    pub id: String,
    pub k: usize,
    /// Sorted, distinct shingle hashes.
    pub shingles: Vec<u64>,
}

impl ShingleSet {
    pub fn len(&self) -> usize {
        self.shingles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.shingles.is_empty()
    }

    pub fn intersection_size(&self, other: &ShingleSet) -> usize {
        let (a, b) = (&self.shingles, &other.shingles);
        let (mut i, mut j, mut n) = (0, 0, 0);
        while i < a.len() && j < b.len() {
            match a[i].cmp(&b[j]) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    n += 1;
                    i += 1;
                    j += 1;
                }
            }
        }
        n
    }
}

pub fn shingle(id: impl Into<String>, text: &str, k: usize) -> Result<ShingleSet> {
    if k == 0 {
        return Err(Error::Config("shingle width must be at least 1".into()));
    }
    let mut shingles: Vec<u64> = shingle_strings(text, k)
        .iter()
        .map(|s| fnv1a64(s.as_bytes()))
        .collect();
    shingles.sort_unstable();
    shingles.dedup();
    Ok(ShingleSet {
        id: id.into(),
        k,
        shingles,
    })
}

pub fn containment(q: &ShingleSet, x: &ShingleSet) -> Result<f64> {
    if q.is_empty() {
        return Err(Error::Domain(format!("query {:?} has no shingles", q.id)));
    }
    Ok(q.intersection_size(x) as f64 / q.len() as f64)
}

pub fn jaccard(a: &ShingleSet, b: &ShingleSet) -> f64 {
    let inter = a.intersection_size(b);
    let union = a.len() + b.len() - inter;
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

/// Multiply-shift family `h_i(x) = (a_i·x + b_i mod 2^64) >> 32` with odd
/// `a_i`; coefficients come from a splitmix64 stream seeded by `seed`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HashFamily {
    coeffs: Vec<(u64, u64)>,
}

impl HashFamily {
    pub fn new(h: usize, seed: u64) -> Self {
        let mut state = seed;
        let coeffs = (0..h)
            .map(|_| {
                let a = splitmix64(&mut state) | 1;
                let b = splitmix64(&mut state);
                (a, b)
            })
            .collect();
        Self { coeffs }
    }

    pub fn len(&self) -> usize {
        self.coeffs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coeffs.is_empty()
    }

    #[inline]
    pub fn hash(&self, i: usize, x: u64) -> u32 {
        let (a, b) = self.coeffs[i];
        (a.wrapping_mul(x).wrapping_add(b) >> 32) as u32
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MinHashSignature {
    pub id: String,
    pub mins: Vec<u32>,
}

impl MinHashSignature {
    pub fn h(&self) -> usize {
        self.mins.len()
    }

    /// Fraction of agreeing positions, an estimate of Jaccard similarity.
    pub fn agreement(&self, other: &MinHashSignature) -> f64 {
        let same = self.mins.iter().zip(&other.mins).filter(|(a, b)| a == b).count();
        same as f64 / self.mins.len().max(1) as f64
    }
}

pub fn minhash_signature(s: &ShingleSet, h: usize, seed: u64) -> Result<MinHashSignature> {
    minhash_with(s, &HashFamily::new(h, seed))
}

pub fn minhash_with(s: &ShingleSet, family: &HashFamily) -> Result<MinHashSignature> {
    if family.is_empty() {
        return Err(Error::Config("at least one hash function is required".into()));
    }
    if s.is_empty() {
        return Err(Error::Domain(format!("{:?} has no shingles to sketch", s.id)));
    }
    let mins = (0..family.len())
        .map(|i| s.shingles.iter().map(|&x| family.hash(i, x)).min().unwrap_or(u32::MAX))
        .collect();
    Ok(MinHashSignature {
        id: s.id.clone(),
        mins,
    })
}

fn band_key(rows: &[u32]) -> u64 {
    let mut bytes = Vec::with_capacity(rows.len() * 4);
    for r in rows {
        bytes.extend_from_slice(&r.to_le_bytes());
    }
    fnv1a64(&bytes)
}

fn check_bands(h: usize, bands: usize, rows: usize) -> Result<()> {
    if bands == 0 || rows == 0 || bands * rows != h {
        return Err(Error::Config(format!(
            "{bands} bands × {rows} rows does not cover {h} hashes"
        )));
    }
    Ok(())
}

/// Band buckets over a set of signatures.
#[derive(Debug, Clone)]
pub struct LshIndex {
    bands: usize,
    rows: usize,
    buckets: Vec<HashMap<u64, Vec<usize>>>,
    len: usize,
}

impl LshIndex {
    pub fn new(bands: usize, rows: usize) -> Self {
        Self {
            bands,
            rows,
            buckets: vec![HashMap::new(); bands],
            len: 0,
        }
    }

    /// Adds a signature and returns its index.
    pub fn insert(&mut self, sig: &MinHashSignature) -> Result<usize> {
        check_bands(sig.h(), self.bands, self.rows)?;
        let idx = self.len;
        for (b, chunk) in sig.mins.chunks(self.rows).enumerate() {
            self.buckets[b].entry(band_key(chunk)).or_default().push(idx);
        }
        self.len += 1;
        Ok(idx)
    }

    /// Indexed entries sharing at least one band with `sig`, ascending.
    pub fn query(&self, sig: &MinHashSignature) -> Result<Vec<usize>> {
        check_bands(sig.h(), self.bands, self.rows)?;
        let mut hits = BTreeSet::new();
        for (b, chunk) in sig.mins.chunks(self.rows).enumerate() {
            if let Some(ids) = self.buckets[b].get(&band_key(chunk)) {
                hits.extend(ids.iter().copied());
            }
        }
        Ok(hits.into_iter().collect())
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }
}

/// Index pairs `(i, j)` with `i < j` that share a band bucket.
pub fn lsh_candidates(signatures: &[MinHashSignature], bands: usize, rows: usize) -> Result<BTreeSet<(usize, usize)>> {
    let mut index = LshIndex::new(bands, rows);
    let mut pairs = BTreeSet::new();
    for sig in signatures {
        let earlier = index.query(sig)?;
        let j = index.insert(sig)?;
        pairs.extend(earlier.into_iter().map(|i| (i, j)));
    }
    Ok(pairs)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DedupParams {
    pub k: usize,
    pub hashes: usize,
    pub bands: usize,
    pub threshold: f64,
    pub seed: u64,
}

impl Default for DedupParams {
    fn default() -> Self {
        Self {
            k: DEFAULT_K,
            hashes: DEFAULT_HASHES,
            bands: DEFAULT_BANDS,
            threshold: DEFAULT_THRESHOLD,
            seed: DEFAULT_SEED,
        }
    }
}

impl DedupParams {
    pub fn rows(&self) -> usize {
        self.hashes.checked_div(self.bands).unwrap_or(0)
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::Config("k must be at least 1".into()));
        }
        if !(self.threshold > 0.0 && self.threshold <= 1.0) {
            return Err(Error::Config(format!("threshold {} outside (0, 1]", self.threshold)));
        }
        check_bands(self.hashes, self.bands, self.rows())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContaminationFlag {
    pub eval_id: String,
    pub train_id: String,
    pub containment: f64,
}

/// Flags `(eval, train)` pairs whose exact containment reaches the threshold.
///
/// Output is sorted by eval id then train id. Eval prompts shorter than
/// `k` tokens have no shingles and are never flagged.
pub fn flag_contaminated(
    eval_prompts: &[Document],
    train_views: &[Document],
    params: &DedupParams,
) -> Result<Vec<ContaminationFlag>> {
    params.validate()?;
    let family = HashFamily::new(params.hashes, params.seed);
    let mut index = LshIndex::new(params.bands, params.rows());
    let mut train = Vec::new();
    for doc in train_views {
        let s = shingle(doc.id.clone(), &doc.text, params.k)?;
        if s.is_empty() {
            continue;
        }
        index.insert(&minhash_with(&s, &family)?)?;
        train.push(s);
    }
    if train.is_empty() {
        return Err(Error::Domain("training index is empty".into()));
    }

    let mut flags = Vec::new();
    for doc in eval_prompts {
        let q = shingle(doc.id.clone(), &doc.text, params.k)?;
        if q.is_empty() {
            continue;
        }
        for i in index.query(&minhash_with(&q, &family)?)? {
            let c = containment(&q, &train[i])?;
            if c >= params.threshold {
                flags.push(ContaminationFlag {
                    eval_id: q.id.clone(),
                    train_id: train[i].id.clone(),
                    containment: c,
                });
            }
        }
    }
    flags.sort_by(|a, b| (&a.eval_id, &a.train_id).cmp(&(&b.eval_id, &b.train_id)));
    flags.dedup_by(|a, b| a.eval_id == b.eval_id && a.train_id == b.train_id);
    Ok(flags)
}

/// Sorted, distinct eval ids among the flags.
pub fn flagged_ids(flags: &[ContaminationFlag]) -> Vec<String> {
    let ids: BTreeSet<&str> = flags.iter().map(|f| f.eval_id.as_str()).collect();
    ids.into_iter().map(str::to_owned).collect()
}

/// Overlapping windows of `window` whitespace tokens taken every `stride`
/// tokens; ids are `"{id}@{start}"`. A document shorter than the window
/// yields a single view.
pub fn sliding_window_views(doc: &Document, window: usize, stride: usize) -> Result<Vec<Document>> {
    if window == 0 || stride == 0 {
        return Err(Error::Config("window and stride must be positive".into()));
    }
    let tokens: Vec<&str> = doc.text.split_whitespace().collect();
    if tokens.len() <= window {
        return Ok(vec![Document::new(format!("{}@0", doc.id), tokens.join(" "))]);
    }
    let mut views = Vec::new();
    let mut start = 0;
    loop {
        let end = (start + window).min(tokens.len());
        views.push(Document::new(format!("{}@{start}", doc.id), tokens[start..end].join(" ")));
        if end == tokens.len() {
            break;
        }
        start += stride;
    }
    Ok(views)
}
