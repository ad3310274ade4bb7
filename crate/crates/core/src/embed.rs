//! Frozen review features: hashed TF-IDF fallback vectors, whitening, and the
//! `RGEB` binary embedding format.
//!
//! Every edge carries one `d`-dimensional review vector. Raw vectors come either
//! from an external sentence encoder (import mode) or from the built-in hashed
//! TF-IDF vectorizer; in both cases a whitening transform is fitted on the
//! training rows only and applied to every row.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{Corpus, DatasetSplit};
use crate::error::{Error, IoContext, Result};

const EMBEDDING_MAGIC: &[u8; 4] = b"RGEB";
const EMBEDDING_VERSION: u32 = 1;

/// Eigenvalues below this are clamped before inversion.
pub const EIGENVALUE_FLOOR: f64 = 1e-10;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// 64-bit FNV-1a.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes.iter().fold(FNV_OFFSET, |h, b| (h ^ u64::from(*b)).wrapping_mul(FNV_PRIME))
}

/// Lowercased alphanumeric runs.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_owned)
        .collect()
}

/// Bucket and sign of a token in a `raw_dim`-wide hashed space.
pub fn hash_bucket(token: &str, raw_dim: usize) -> (usize, f64) {
    let h = fnv1a64(token.as_bytes());
    let sign = if h >> 63 == 1 { -1.0 } else { 1.0 };
    ((h % raw_dim as u64) as usize, sign)
}

/// Smoothed inverse document frequencies fitted on a set of documents.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct IdfTable {
    num_docs: usize,
    doc_freq: HashMap<String, usize>,
}

impl IdfTable {
    pub fn fit<'a>(docs: impl IntoIterator<Item = &'a str>) -> Self {
        let mut table = Self::default();
        for doc in docs {
            table.num_docs += 1;
            let distinct: HashSet<String> = tokenize(doc).into_iter().collect();
            for tok in distinct {
                *table.doc_freq.entry(tok).or_default() += 1;
            }
        }
        table
    }

    /// `ln((1 + n) / (1 + df)) + 1`; unseen tokens get `df = 0`.
    pub fn idf(&self, token: &str) -> f64 {
        let df = self.doc_freq.get(token).copied().unwrap_or(0);
        ((1.0 + self.num_docs as f64) / (1.0 + df as f64)).ln() + 1.0
    }
}

/// Hashed TF-IDF vector of a review, L2-normalized unless zero.
pub fn hashed_tfidf_embed(text: &str, idf: &IdfTable, raw_dim: usize) -> Array1<f64> {
    let mut out = Array1::zeros(raw_dim);
    if raw_dim == 0 {
        return out;
    }
    let mut tf: HashMap<String, usize> = HashMap::new();
    for tok in tokenize(text) {
        *tf.entry(tok).or_default() += 1;
    }
    // Accumulate in sorted token order so the float sums are order-independent of the map.
    let mut terms: Vec<(String, usize)> = tf.into_iter().collect();
    terms.sort_unstable();
    for (tok, count) in terms {
        let (bucket, sign) = hash_bucket(&tok, raw_dim);
        out[bucket] += sign * (1.0 + count as f64).ln() * idf.idf(&tok);
    }
    let norm = out.dot(&out).sqrt();
    if norm > 0.0 {
        out /= norm;
    }
    out
}

/// Affine map `x -> (x - mean) * projection` that whitens and truncates.
#[derive(Clone, Debug, PartialEq)]
pub struct WhitenTransform {
    pub mean: Array1<f64>,
    /// `raw_dim x dim`; column `k` is the `k`-th eigenvector over `sqrt(lambda_k)`.
    pub projection: Array2<f64>,
    pub fitted_on: Vec<usize>,
}

impl WhitenTransform {
    /// Fit on the rows of `rows` (one vector per row), keeping the top `target_dim`
    /// principal directions.
    pub fn fit(rows: ArrayView2<f64>, target_dim: usize) -> Result<Self> {
        let (n, raw_dim) = rows.dim();
        if n < target_dim + 1 {
            return Err(Error::InsufficientWhiteningData {
                needed: target_dim + 1,
                got: n,
            });
        }
        if raw_dim < target_dim {
            return Err(Error::DimensionMismatch {
                expected: target_dim,
                got: raw_dim,
            });
        }
        let mean = rows.mean_axis(Axis(0)).expect("non-empty rows");
        let centered = &rows - &mean;
        let cov = centered.t().dot(&centered) / n as f64;

        let eigen = SymmetricEigen::new(DMatrix::from_fn(raw_dim, raw_dim, |i, j| {
            // exact symmetry for the solver
            0.5 * (cov[[i, j]] + cov[[j, i]])
        }));
        let mut order: Vec<usize> = (0..raw_dim).collect();
        order.sort_by(|&a, &b| eigen.eigenvalues[b].total_cmp(&eigen.eigenvalues[a]));

        let mut projection = Array2::zeros((raw_dim, target_dim));
        for (k, &src) in order.iter().take(target_dim).enumerate() {
            let vector = eigen.eigenvectors.column(src);
            let pivot = vector
                .iter()
                .enumerate()
                .fold((0, 0.0f64), |best, (i, v)| if v.abs() > best.1.abs() { (i, *v) } else { best });
            let sign = if pivot.1 < 0.0 { -1.0 } else { 1.0 };
            let scale = sign / eigen.eigenvalues[src].max(EIGENVALUE_FLOOR).sqrt();
            for i in 0..raw_dim {
                projection[[i, k]] = vector[i] * scale;
            }
        }
        Ok(Self {
            mean,
            projection,
            fitted_on: (0..n).collect(),
        })
    }

    pub fn raw_dim(&self) -> usize {
        self.projection.nrows()
    }

    pub fn dim(&self) -> usize {
        self.projection.ncols()
    }

    pub fn apply(&self, x: ArrayView1<f64>) -> Result<Array1<f64>> {
        if x.len() != self.raw_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.raw_dim(),
                got: x.len(),
            });
        }
        Ok((&x - &self.mean).dot(&self.projection))
    }

    pub fn apply_rows(&self, rows: ArrayView2<f64>) -> Result<Array2<f64>> {
        if rows.ncols() != self.raw_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.raw_dim(),
                got: rows.ncols(),
            });
        }
        Ok((&rows - &self.mean).dot(&self.projection))
    }
}

/// Contents of an `RGEB` file: `row_count x dim` float32 values in edge order.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingFile {
    pub rows: Array2<f32>,
}

impl EmbeddingFile {
    pub fn to_bytes(&self) -> Vec<u8> {
        let (n, dim) = self.rows.dim();
        let mut out = Vec::with_capacity(20 + 4 * n * dim);
        out.extend_from_slice(EMBEDDING_MAGIC);
        out.extend_from_slice(&EMBEDDING_VERSION.to_le_bytes());
        out.extend_from_slice(&(n as u64).to_le_bytes());
        out.extend_from_slice(&(dim as u32).to_le_bytes());
        for v in self.rows.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let bad = |message: &str| Error::Format {
            path: path.to_path_buf(),
            message: message.into(),
        };
        let mut r = bytes;
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(|_| bad("truncated header"))?;
        if &magic != EMBEDDING_MAGIC {
            return Err(bad("bad magic, expected RGEB"));
        }
        let mut u32buf = [0u8; 4];
        let mut u64buf = [0u8; 8];
        r.read_exact(&mut u32buf).map_err(|_| bad("truncated header"))?;
        if u32::from_le_bytes(u32buf) != EMBEDDING_VERSION {
            return Err(bad("unsupported version"));
        }
        r.read_exact(&mut u64buf).map_err(|_| bad("truncated header"))?;
        let n = u64::from_le_bytes(u64buf) as usize;
        r.read_exact(&mut u32buf).map_err(|_| bad("truncated header"))?;
        let dim = u32::from_le_bytes(u32buf) as usize;
        let expected = n.checked_mul(dim).and_then(|c| c.checked_mul(4)).ok_or_else(|| bad("size overflow"))?;
        if r.len() != expected {
            return Err(bad(&format!("payload is {} bytes, header implies {expected}", r.len())));
        }
        let values: Vec<f32> = r
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let rows = Array2::from_shape_vec((n, dim), values).expect("checked length");
        Ok(Self { rows })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut f = fs::File::create(path).at(path)?;
        f.write_all(&self.to_bytes()).at(path)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).at(path)?;
        Self::from_bytes(&bytes, path)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    ImportedWhitened,
    HashedWhitened,
}

/// Frozen `|E| x d` review features, row `k` belonging to edge `k`.
#[derive(Clone, Debug, PartialEq)]
pub struct ReviewEmbeddingTable {
    rows: Array2<f32>,
    provenance: Option<Provenance>,
}

impl ReviewEmbeddingTable {
    pub fn new(rows: Array2<f32>, provenance: Option<Provenance>) -> Self {
        Self { rows, provenance }
    }

    pub fn dim(&self) -> usize {
        self.rows.ncols()
    }

    pub fn len(&self) -> usize {
        self.rows.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.nrows() == 0
    }

    pub fn rows(&self) -> ArrayView2<'_, f32> {
        self.rows.view()
    }

    pub fn provenance(&self) -> Option<Provenance> {
        self.provenance
    }

    /// Double-precision copy for the model.
    pub fn to_f64(&self) -> Array2<f64> {
        self.rows.mapv(f64::from)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        EmbeddingFile {
            rows: self.rows.clone(),
        }
        .write(path)
    }

    pub fn read(path: &Path) -> Result<Self> {
        Ok(Self {
            rows: EmbeddingFile::read(path)?.rows,
            provenance: None,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum EmbedMode {
    Hashed { raw_dim: usize },
    Import { path: PathBuf },
}

/// Raw (pre-whitening) vectors for every edge.
pub fn raw_vectors(corpus: &Corpus, split: &DatasetSplit, mode: &EmbedMode) -> Result<Array2<f64>> {
    match mode {
        EmbedMode::Hashed { raw_dim } => {
            let idf = IdfTable::fit(split.train.iter().map(|&k| corpus.records[k].review_text.as_str()));
            let mut rows = Array2::zeros((corpus.num_edges(), *raw_dim));
            for (k, rec) in corpus.records.iter().enumerate() {
                rows.row_mut(k)
                    .assign(&hashed_tfidf_embed(&rec.review_text, &idf, *raw_dim));
            }
            Ok(rows)
        }
        EmbedMode::Import { path } => {
            let file = EmbeddingFile::read(path)?;
            if file.rows.nrows() != corpus.num_edges() {
                return Err(Error::RowCountMismatch {
                    expected: corpus.num_edges(),
                    got: file.rows.nrows(),
                });
            }
            if let Some((edge_id, _)) = file
                .rows
                .axis_iter(Axis(0))
                .enumerate()
                .find(|(_, row)| row.iter().any(|v| !v.is_finite()))
            {
                return Err(Error::NonFiniteEmbedding { edge_id });
            }
            Ok(file.rows.mapv(f64::from))
        }
    }
}

/// Build the frozen table: whitening is fitted on training rows, applied to all.
pub fn build_embedding_table(
    corpus: &Corpus,
    split: &DatasetSplit,
    mode: &EmbedMode,
    dim: usize,
) -> Result<(ReviewEmbeddingTable, WhitenTransform)> {
    if split.num_edges() != corpus.num_edges() {
        return Err(Error::RowCountMismatch {
            expected: corpus.num_edges(),
            got: split.num_edges(),
        });
    }
    let raw = raw_vectors(corpus, split, mode)?;
    if raw.ncols() < dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: raw.ncols(),
        });
    }
    let train_rows = raw.select(Axis(0), &split.train);
    let mut transform = WhitenTransform::fit(train_rows.view(), dim)?;
    transform.fitted_on = split.train.clone();
    let whitened = transform.apply_rows(raw.view())?;
    let provenance = match mode {
        EmbedMode::Hashed { .. } => Provenance::HashedWhitened,
        EmbedMode::Import { .. } => Provenance::ImportedWhitened,
    };
    Ok((
        ReviewEmbeddingTable::new(whitened.mapv(|v| v as f32), Some(provenance)),
        transform,
    ))
}

/// Sidecar written by the external encoder export tool.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExportManifest {
    pub encoder: String,
    pub pooling: String,
    pub raw_dim: usize,
    pub row_count: usize,
    /// Lowercase hex SHA-256 of the canonical interaction file.
    pub checksum: String,
}

/// Conventional sidecar location: `<import path>.manifest.json`.
pub fn manifest_path(import_path: &Path) -> PathBuf {
    let mut name = import_path.as_os_str().to_owned();
    name.push(".manifest.json");
    PathBuf::from(name)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

impl ExportManifest {
    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).at(path)?;
        serde_json::from_str(&text).map_err(|e| Error::Format {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }

    /// Check the manifest against the canonical file bytes and the edge count.
    pub fn validate(&self, canonical_bytes: &[u8], num_edges: usize) -> Result<()> {
        let actual = sha256_hex(canonical_bytes);
        if !self.checksum.eq_ignore_ascii_case(&actual) {
            return Err(Error::ChecksumMismatch {
                expected: self.checksum.clone(),
                actual,
            });
        }
        if self.row_count != num_edges {
            return Err(Error::RowCountMismatch {
                expected: num_edges,
                got: self.row_count,
            });
        }
        Ok(())
    }
}
