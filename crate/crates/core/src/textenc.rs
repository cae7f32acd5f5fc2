//! Tokenization and the three text-encoder families: hash vectors, frozen
//! pretrained embeddings + GRU, and trainable embeddings + GRU, plus a
//! synthetic pretraining generator that gives a concept's synonyms nearby
//! vectors.

use crate::engine::ConceptPool;
use crate::numcore::{gru_forward, GruCache, GruParams, Mat, NumError};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use std::collections::BTreeMap;
use std::io::{BufRead, Write};

#[derive(Debug, thiserror::Error)]
pub enum TextEncError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("parse error on line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("inconsistent embedding dimension on line {line}: expected {expected}, got {got}")]
    InconsistentDim { line: usize, expected: usize, got: usize },
    #[error(transparent)]
    Num(#[from] NumError),
}

/// Lowercase tokens split on whitespace and punctuation; punctuation dropped.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect()
}

/// FNV-1a, 64-bit. A stable hash across runs and platforms.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

/// Hashes the whole (lowercased) text to seed a PRNG and draws a unit-norm
/// random vector. Carries no semantic structure by construction.
pub fn hash_encode(text: &str, dim: usize, salt: u64) -> Vec<f64> {
    assert!(dim >= 1, "hash_encode needs dim >= 1");
    let key = fnv1a64(text.to_lowercase().as_bytes()) ^ salt;
    let mut rng = ChaCha8Rng::seed_from_u64(key);
    let mut v: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        for x in &mut v {
            *x /= norm;
        }
    }
    v
}

pub const UNK_TOKEN: &str = "<unk>";

/// Token embedding table with a frozen copy of the matrix at load time,
/// used later to measure drift.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct EmbeddingTable {
    pub tokens: Vec<String>,
    pub index: BTreeMap<String, usize>,
    pub dim: usize,
    /// |V| x dim, row per token.
    pub matrix: Mat,
    pub unk_row: usize,
    pub pretrained_snapshot: Mat,
}

impl EmbeddingTable {
    fn from_rows(tokens: Vec<String>, dim: usize, rows: Vec<Vec<f64>>) -> Self {
        let mut tokens = tokens;
        let mut rows = rows;
        // Mean-vector unk row appended last.
        let mut mean = vec![0.0; dim];
        for r in &rows {
            for (m, v) in mean.iter_mut().zip(r) {
                *m += v;
            }
        }
        let n = rows.len().max(1) as f64;
        for m in &mut mean {
            *m /= n;
        }
        tokens.push(UNK_TOKEN.to_string());
        rows.push(mean);
        let matrix = Mat::from_rows(rows);
        let index = tokens.iter().cloned().zip(0..).collect();
        let unk_row = tokens.len() - 1;
        EmbeddingTable {
            tokens,
            index,
            dim,
            pretrained_snapshot: matrix.clone(),
            matrix,
            unk_row,
        }
    }

    pub fn vocab_size(&self) -> usize {
        self.tokens.len()
    }

    pub fn row_of(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(self.unk_row)
    }

    /// Per-token cosine distance between the current row and the pretrained
    /// snapshot row. The bool flags a degenerate (zero-norm) row.
    pub fn drift(&self) -> Vec<(String, f64, bool)> {
        let mut out = Vec::with_capacity(self.tokens.len());
        for (i, token) in self.tokens.iter().enumerate() {
            let now = self.matrix.row(i);
            let then = self.pretrained_snapshot.row(i);
            let (dist, degenerate) = cosine_distance_flagged(now, then);
            out.push((token.clone(), dist, degenerate));
        }
        out
    }

    /// Writes the current matrix in GloVe text format.
    pub fn write_glove(&self, path: &std::path::Path) -> Result<(), TextEncError> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        for (i, token) in self.tokens.iter().enumerate() {
            write!(f, "{token}")?;
            for v in self.matrix.row(i) {
                // ryu shortest representation round-trips f64 exactly
                write!(f, " {v}")?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

fn cosine_distance_flagged(a: &[f64], b: &[f64]) -> (f64, bool) {
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        (1.0, true)
    } else {
        // Clamp: rounding can push the self-distance a hair below zero.
        ((1.0 - cosine(a, b)).max(0.0), false)
    }
}

/// Loads a GloVe-format text file: one token plus d floats per line.
pub fn load_embedding_file(path: &std::path::Path) -> Result<EmbeddingTable, TextEncError> {
    let file = std::fs::File::open(path)?;
    let reader = std::io::BufReader::new(file);
    let mut tokens = Vec::new();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut dim: Option<usize> = None;
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split_whitespace();
        let token = parts
            .next()
            .ok_or(TextEncError::Parse { line: lineno + 1, message: "empty line".into() })?;
        let values: Result<Vec<f64>, _> = parts.map(str::parse::<f64>).collect();
        let values = values.map_err(|e| TextEncError::Parse {
            line: lineno + 1,
            message: e.to_string(),
        })?;
        if values.is_empty() {
            return Err(TextEncError::Parse {
                line: lineno + 1,
                message: "no vector values".into(),
            });
        }
        match dim {
            None => dim = Some(values.len()),
            Some(d) if d != values.len() => {
                return Err(TextEncError::InconsistentDim {
                    line: lineno + 1,
                    expected: d,
                    got: values.len(),
                })
            }
            _ => {}
        }
        if !values.iter().all(|v| v.is_finite()) {
            return Err(TextEncError::Parse {
                line: lineno + 1,
                message: "non-finite value".into(),
            });
        }
        tokens.push(token.to_string());
        rows.push(values);
    }
    let dim = dim.ok_or(TextEncError::Parse { line: 0, message: "empty file".into() })?;
    Ok(EmbeddingTable::from_rows(tokens, dim, rows))
}

/// Builds a synthetic pretrained table over the concept pool: each synonym
/// group (a concept's ID and OOD names, a furniture name with its synonyms,
/// a surface verb group) gets one random unit centroid, and each member is
/// the centroid plus per-coordinate Gaussian noise (sigma = 0.05),
/// re-normalized. Remaining function words get independent random unit
/// vectors. Deterministic in `seed`.
pub fn synth_pretrain(
    pool: &ConceptPool,
    function_words: &[String],
    dim: usize,
    seed: u64,
) -> EmbeddingTable {
    assert!(dim >= 2, "synth_pretrain needs dim >= 2");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let noise = Normal::new(0.0, 0.05).unwrap();

    let unit = |rng: &mut ChaCha8Rng| -> Vec<f64> {
        let mut v: Vec<f64> = (0..dim).map(|_| normal.sample(rng)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        for x in &mut v {
            *x /= n;
        }
        v
    };

    let mut tokens = Vec::new();
    let mut rows = Vec::new();
    for concept in &pool.concepts {
        let centroid = unit(&mut rng);
        for name in concept.names_id.iter().chain(&concept.names_ood) {
            let mut v: Vec<f64> =
                centroid.iter().map(|&c| c + noise.sample(&mut rng)).collect();
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            for x in &mut v {
                *x /= n;
            }
            tokens.push(name.clone());
            rows.push(v);
        }
    }
    for f in &pool.furniture {
        let centroid = unit(&mut rng);
        for name in std::iter::once(&f.name).chain(&f.synonyms) {
            let mut v: Vec<f64> =
                centroid.iter().map(|&c| c + noise.sample(&mut rng)).collect();
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            for x in &mut v {
                *x /= n;
            }
            tokens.push(name.clone());
            rows.push(v);
        }
    }
    for group in crate::engine::surface_synonym_groups() {
        let centroid = unit(&mut rng);
        for word in &group {
            if tokens.contains(word) {
                continue;
            }
            let mut v: Vec<f64> =
                centroid.iter().map(|&c| c + noise.sample(&mut rng)).collect();
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            for x in &mut v {
                *x /= n;
            }
            tokens.push(word.clone());
            rows.push(v);
        }
    }
    for w in function_words {
        if !tokens.contains(w) {
            tokens.push(w.clone());
            rows.push(unit(&mut rng));
        }
    }
    EmbeddingTable::from_rows(tokens, dim, rows)
}

/// Column t = embedding row of token t; OOV tokens map to the unk row.
pub fn embed_sequence(tokens: &[String], table: &EmbeddingTable) -> Vec<Vec<f64>> {
    tokens.iter().map(|t| table.matrix.row(table.row_of(t)).to_vec()).collect()
}

/// A GRU-based text encoder: embedding table plus recurrent weights. When
/// `frozen` is set, training steps must leave both bit-identical.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct EncoderParams {
    pub embedding: EmbeddingTable,
    pub gru: GruParams,
    pub frozen: bool,
}

impl EncoderParams {
    pub fn new(embedding: EmbeddingTable, hidden: usize, frozen: bool, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let gru = GruParams::glorot(embedding.dim, hidden, &mut rng);
        EncoderParams { embedding, gru, frozen }
    }

    pub fn hidden(&self) -> usize {
        self.gru.hidden
    }

    /// Encodes text to the final GRU hidden state.
    pub fn encode(&self, text: &str) -> Vec<f64> {
        self.encode_cached(text).0
    }

    /// Encoding plus the caches needed for backprop.
    pub fn encode_cached(&self, text: &str) -> (Vec<f64>, GruCache, Vec<usize>) {
        let tokens = tokenize(text);
        let row_ids: Vec<usize> = tokens.iter().map(|t| self.embedding.row_of(t)).collect();
        let xs = embed_sequence(&tokens, &self.embedding);
        let (h, cache) = gru_forward(&self.gru, &xs).expect("encoder dims consistent");
        (h, cache, row_ids)
    }
}

/// Per-token cosine distance to the pretrained snapshot.
pub fn embedding_drift(table: &EmbeddingTable) -> Vec<(String, f64, bool)> {
    table.drift()
}
