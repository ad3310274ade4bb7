use std::fmt::Write as _;
use std::io::Cursor;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use rgcl::data::{ingest_reader, split, Corpus, DatasetSplit, FieldMap, RatingScale, DEFAULT_FRACTIONS};
use rgcl::dataset::{Dataset, Part, EMBEDDINGS_FILE, INTERACTIONS_FILE, SPLIT_FILE};
use rgcl::embed::{build_embedding_table, manifest_path, sha256_hex, EmbedMode, EmbeddingFile, ExportManifest};
use rgcl::eval::{evaluate_params, sparsity_report};
use rgcl::train::{train, TrainConfig};
use rgcl::Error;

const WORDS: [&str; 12] = [
    "great", "awful", "fine", "cheap", "sturdy", "broke", "love", "meh", "fast", "slow", "tiny", "huge",
];

/// A toy review dump where every user rates most items.
fn jsonl(seed: u64) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = String::new();
    for u in 0..12 {
        for i in 0..10 {
            if rng.random::<f64>() < 0.2 {
                continue;
            }
            let rating = rng.random_range(1..=5);
            let text: Vec<&str> = (0..6).map(|_| WORDS[rng.random_range(0..WORDS.len())]).collect();
            let _ = writeln!(
                out,
                r#"{{"reviewerID": "U{u}", "asin": "B{i:03}", "overall": {rating}.0, "reviewText": "{}"}}"#,
                text.join(" ")
            );
        }
    }
    out
}

fn prepared() -> (Corpus, DatasetSplit) {
    let (corpus, ids) = ingest_reader(Cursor::new(jsonl(1)), &FieldMap::default(), 5, RatingScale::default()).unwrap();
    assert_eq!(ids.users.len(), corpus.num_users);
    let split = split(corpus.num_edges(), 7, DEFAULT_FRACTIONS).unwrap();
    (corpus, split)
}

fn cfg() -> TrainConfig {
    TrainConfig {
        dim: 6,
        batch_size: 32,
        max_epochs: 4,
        ..TrainConfig::default()
    }
}

#[test]
fn hashed_pipeline_end_to_end() {
    let (corpus, split) = prepared();
    let (table, transform) = build_embedding_table(&corpus, &split, &EmbedMode::Hashed { raw_dim: 32 }, 6).unwrap();
    assert_eq!(table.len(), corpus.num_edges());
    assert_eq!(transform.fitted_on, split.train);

    // through the on-disk layout
    let dir = tempfile::tempdir().unwrap();
    corpus.write(&dir.path().join(INTERACTIONS_FILE)).unwrap();
    split.write(&dir.path().join(SPLIT_FILE)).unwrap();
    table.write(&dir.path().join(EMBEDDINGS_FILE)).unwrap();
    let ds = Dataset::load(dir.path()).unwrap();
    assert_eq!(ds.corpus, corpus);
    assert_eq!(ds.graph.num_edges(), split.train.len());

    let out = train(&ds, &cfg()).unwrap();
    assert_eq!(out.trace.len(), 4);
    let test = evaluate_params(&out.params, &ds, Part::Test, false).unwrap();
    assert_eq!(test.count, split.test.len());
    assert!(test.mse.is_finite());
    let report = sparsity_report(&out.params, &ds, false).unwrap();
    assert!((report.recombined_mse() - test.mse).abs() < 1e-12);
}

fn write_import(dir: &std::path::Path, corpus: &Corpus, raw_dim: usize) -> std::path::PathBuf {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let rows = Array2::from_shape_simple_fn((corpus.num_edges(), raw_dim), || rng.random_range(-1.0f32..1.0));
    let path = dir.join("encoder.rgeb");
    EmbeddingFile { rows }.write(&path).unwrap();
    path
}

#[test]
fn imported_pipeline_with_manifest() {
    let (corpus, split) = prepared();
    let dir = tempfile::tempdir().unwrap();
    let path = write_import(dir.path(), &corpus, 16);
    let manifest = ExportManifest {
        encoder: "toy".into(),
        pooling: "mean".into(),
        raw_dim: 16,
        row_count: corpus.num_edges(),
        checksum: sha256_hex(corpus.to_canonical_string().as_bytes()),
    };
    std::fs::write(manifest_path(&path), serde_json::to_string(&manifest).unwrap()).unwrap();

    let read = ExportManifest::read(&manifest_path(&path)).unwrap();
    read.validate(corpus.to_canonical_string().as_bytes(), corpus.num_edges()).unwrap();
    let (table, _) = build_embedding_table(&corpus, &split, &EmbedMode::Import { path: path.clone() }, 6).unwrap();
    let ds = Dataset::from_table(corpus.clone(), split, &table).unwrap();
    let out = train(&ds, &cfg()).unwrap();
    assert!(evaluate_params(&out.params, &ds, Part::Test, false).unwrap().mse.is_finite());

    // a manifest for different interactions is refused
    let mut other = corpus.clone();
    other.records[0].rating = if other.records[0].rating == 5 { 4 } else { 5 };
    assert!(matches!(
        read.validate(other.to_canonical_string().as_bytes(), other.num_edges()),
        Err(Error::ChecksumMismatch { .. })
    ));
    assert!(matches!(
        read.validate(corpus.to_canonical_string().as_bytes(), corpus.num_edges() + 1),
        Err(Error::RowCountMismatch { .. })
    ));
}

#[test]
fn import_with_wrong_row_count_is_refused() {
    let (corpus, split) = prepared();
    let dir = tempfile::tempdir().unwrap();
    let mut short = corpus.clone();
    short.records.pop();
    let path = write_import(dir.path(), &short, 16);
    let err = build_embedding_table(&corpus, &split, &EmbedMode::Import { path }, 6).unwrap_err();
    assert!(matches!(err, Error::RowCountMismatch { .. }), "{err}");
}

#[test]
fn import_narrower_than_model_is_refused() {
    let (corpus, split) = prepared();
    let dir = tempfile::tempdir().unwrap();
    let path = write_import(dir.path(), &corpus, 4);
    let err = build_embedding_table(&corpus, &split, &EmbedMode::Import { path }, 6).unwrap_err();
    assert!(matches!(err, Error::DimensionMismatch { .. }), "{err}");
}
