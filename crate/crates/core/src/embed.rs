//! Text-embedding matrices and their providers.
//!
//! `EMB1` layout (little-endian): magic `b"EMB1"`, `n: u64`, `d: u64`,
//! then `n * d` `f32` values row-major.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::http::JsonClient;

const MAGIC: &[u8; 4] = b"EMB1";

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    n_rows: usize,
    dim: usize,
    data: Vec<f32>,
}

/// Engineered per-node features; same shape contract and file format as
/// text embeddings.
pub type FeatureMatrix = EmbeddingMatrix;

impl EmbeddingMatrix {
    pub fn new(n_rows: usize, dim: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != n_rows * dim {
            return Err(Error::Shape(format!(
                "{} values for a {n_rows}x{dim} matrix",
                data.len()
            )));
        }
        let m = EmbeddingMatrix { n_rows, dim, data };
        m.check_finite()?;
        Ok(m)
    }

    pub fn zeros(n_rows: usize, dim: usize) -> Self {
        EmbeddingMatrix {
            n_rows,
            dim,
            data: vec![0.0; n_rows * dim],
        }
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    fn check_finite(&self) -> Result<()> {
        if self.dim == 0 {
            return Ok(());
        }
        match self
            .data
            .chunks_exact(self.dim)
            .position(|row| row.iter().any(|v| !v.is_finite()))
        {
            Some(r) => Err(Error::NonFinite(format!("embedding row {r}"))),
            None => Ok(()),
        }
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&(self.n_rows as u64).to_le_bytes())?;
        w.write_all(&(self.dim as u64).to_le_bytes())?;
        for v in &self.data {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)
            .map_err(|_| Error::Format("embedding file truncated in header".into()))?;
        if &magic != MAGIC {
            return Err(Error::Format(format!(
                "bad embedding magic {:?}, expected EMB1",
                String::from_utf8_lossy(&magic)
            )));
        }
        let mut b8 = [0u8; 8];
        r.read_exact(&mut b8)
            .map_err(|_| Error::Format("embedding file truncated in header".into()))?;
        let n = u64::from_le_bytes(b8) as usize;
        r.read_exact(&mut b8)
            .map_err(|_| Error::Format("embedding file truncated in header".into()))?;
        let d = u64::from_le_bytes(b8) as usize;
        let expected = n
            .checked_mul(d)
            .and_then(|x| x.checked_mul(4))
            .ok_or_else(|| Error::Format(format!("header {n}x{d} overflows")))?;
        let mut payload = Vec::with_capacity(expected);
        r.take(expected as u64)
            .read_to_end(&mut payload)
            .map_err(|e| Error::Format(format!("reading payload: {e}")))?;
        if payload.len() < expected {
            return Err(Error::Format(format!(
                "embedding payload truncated: header says {n}x{d} ({expected} bytes), found {}",
                payload.len()
            )));
        }
        let data = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        EmbeddingMatrix::new(n, d, data)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        self.write_to(&mut w).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// Horizontal concatenation `[self | other]`.
    pub fn concat_columns(&self, other: &EmbeddingMatrix) -> Result<EmbeddingMatrix> {
        if self.n_rows != other.n_rows {
            return Err(Error::Shape(format!(
                "cannot concatenate {} rows with {} rows",
                self.n_rows, other.n_rows
            )));
        }
        let dim = self.dim + other.dim;
        let mut data = Vec::with_capacity(self.n_rows * dim);
        for i in 0..self.n_rows {
            data.extend_from_slice(self.row(i));
            data.extend_from_slice(other.row(i));
        }
        Ok(EmbeddingMatrix {
            n_rows: self.n_rows,
            dim,
            data,
        })
    }
}

pub fn load_embeddings(path: &Path) -> Result<EmbeddingMatrix> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    EmbeddingMatrix::read_from(BufReader::new(file))
}

pub fn save_embeddings(path: &Path, m: &EmbeddingMatrix) -> Result<()> {
    m.save(path)
}

fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seeded 64-bit token hash (FNV-1a folded through a splitmix finalizer).
/// Stable across platforms and compiler versions.
pub fn token_hash(token: &str, seed: u64) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325 ^ mix64(seed);
    for b in token.as_bytes() {
        h ^= *b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    mix64(h)
}

/// Feature-hashing embedder: lowercase whitespace tokens are hashed into
/// `dim` buckets with a hash-derived sign, counted, then L2-normalized.
pub fn hash_embed<S: AsRef<str>>(texts: &[S], dim: usize, seed: u64) -> Result<EmbeddingMatrix> {
    if dim < 8 {
        return Err(Error::InvalidArgument(format!(
            "hash embedding dim must be >= 8, got {dim}"
        )));
    }
    let mut data = vec![0f32; texts.len() * dim];
    for (row, text) in data.chunks_exact_mut(dim).zip(texts) {
        let mut acc = vec![0f64; dim];
        for tok in text.as_ref().split_whitespace() {
            let h = token_hash(&tok.to_lowercase(), seed);
            let bucket = (h % dim as u64) as usize;
            let sign = if h >> 63 == 1 { -1.0 } else { 1.0 };
            acc[bucket] += sign;
        }
        let norm = acc.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            for (dst, v) in row.iter_mut().zip(&acc) {
                *dst = (v / norm) as f32;
            }
        }
    }
    Ok(EmbeddingMatrix {
        n_rows: texts.len(),
        dim,
        data,
    })
}

/// Client for an embedding service speaking
/// `POST {"texts": [...]}` -> `{"vectors": [[...], ...]}`.
#[derive(Debug, Clone)]
pub struct EmbeddingClient {
    http: JsonClient,
    pub batch_size: usize,
    pub concurrency: usize,
}

pub const EMBED_KEY_VAR: &str = "EMBED_API_KEY";

impl EmbeddingClient {
    pub fn new(http: JsonClient, batch_size: usize, concurrency: usize) -> Self {
        EmbeddingClient {
            http,
            batch_size: batch_size.max(1),
            concurrency: concurrency.max(1),
        }
    }

    pub fn from_env(endpoint: &str, batch_size: usize, concurrency: usize) -> Result<Self> {
        Ok(Self::new(
            JsonClient::from_env(endpoint, EMBED_KEY_VAR)?,
            batch_size,
            concurrency,
        ))
    }

    fn fetch_batch(&self, texts: &[String]) -> Result<Vec<Vec<f32>>> {
        let resp = self.http.post(&json!({ "texts": texts }))?;
        let vectors = resp
            .get("vectors")
            .and_then(Value::as_array)
            .ok_or_else(|| Error::Protocol("response lacks a `vectors` array".into()))?;
        if vectors.len() != texts.len() {
            return Err(Error::Protocol(format!(
                "sent {} texts, received {} vectors",
                texts.len(),
                vectors.len()
            )));
        }
        vectors
            .iter()
            .map(|v| {
                v.as_array()
                    .ok_or_else(|| Error::Protocol("vector is not an array".into()))?
                    .iter()
                    .map(|x| {
                        x.as_f64()
                            .map(|f| f as f32)
                            .ok_or_else(|| Error::Protocol("vector entry is not a number".into()))
                    })
                    .collect()
            })
            .collect()
    }

    /// Embeds `texts` in input order. Batches run `concurrency` at a time.
    pub fn fetch(&self, texts: &[String]) -> Result<EmbeddingMatrix> {
        if texts.is_empty() {
            return Ok(EmbeddingMatrix::zeros(0, 0));
        }
        let batches: Vec<&[String]> = texts.chunks(self.batch_size).collect();
        let mut results: Vec<Result<Vec<Vec<f32>>>> = Vec::with_capacity(batches.len());
        for wave in batches.chunks(self.concurrency) {
            let wave_results: Vec<_> = std::thread::scope(|s| {
                let handles: Vec<_> = wave
                    .iter()
                    .map(|b| s.spawn(move || self.fetch_batch(b)))
                    .collect();
                handles
                    .into_iter()
                    .map(|h| h.join().expect("embedding worker panicked"))
                    .collect()
            });
            results.extend(wave_results);
        }
        let mut dim: Option<usize> = None;
        let mut data = Vec::new();
        for (b, res) in results.into_iter().enumerate() {
            for v in res? {
                match dim {
                    None => dim = Some(v.len()),
                    Some(d) if d != v.len() => {
                        return Err(Error::Shape(format!(
                            "embedding dimension mismatch: expected {d}, batch {b} returned {}",
                            v.len()
                        )))
                    }
                    _ => {}
                }
                data.extend(v);
            }
        }
        EmbeddingMatrix::new(texts.len(), dim.unwrap_or(0), data)
    }
}

pub fn fetch_embeddings(client: &EmbeddingClient, texts: &[String]) -> Result<EmbeddingMatrix> {
    client.fetch(texts)
}
