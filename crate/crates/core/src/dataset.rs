//! Multi-label annotations, split assignment, label statistics and the binary
//! feature store.
//!
//! Annotation files are JSON Lines, one image per line:
//!
//! ```text
//! {"image_id": "2017_1234", "labels": ["a3_gender", "a8_face_complete"], "split": "train"}
//! ```
//!
//! Feature files (`VPAF`) are little-endian:
//!
//! ```text
//! magic "VPAF" | u32 version = 1 | u32 count | u32 dim
//! count × ( u16 id_len | id bytes (UTF-8) | dim × f32 )
//! ```

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::taxonomy::AttributeTaxonomy;

pub const FEATURE_MAGIC: &[u8; 4] = b"VPAF";
pub const FEATURE_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("parse error at {location}: {message}")]
    Parse { location: String, message: String },
    #[error("unknown attribute `{key}` for image `{image_id}`")]
    UnknownAttribute { image_id: String, key: String },
    #[error("duplicate image id `{0}`")]
    DuplicateImageId(String),
    #[error("image `{0}` has no labels")]
    NoLabels(String),
    #[error("feature dimension mismatch for `{image_id}`: expected {expected}, got {actual}")]
    DimensionMismatch {
        image_id: String,
        expected: usize,
        actual: usize,
    },
    #[error("non-finite feature value for `{0}`")]
    NonFiniteValue(String),
    #[error("split fractions must be non-negative and sum to 1, got {0:?}")]
    BadFractions((f64, f64, f64)),
    #[error("no features for image `{0}`")]
    MissingFeatures(String),
}

fn parse_err(location: impl Into<String>, message: impl fmt::Display) -> DatasetError {
    DatasetError::Parse {
        location: location.into(),
        message: message.to_string(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnnotatedExample {
    pub image_id: String,
    /// k-hot vector indexed by attribute id.
    pub labels: Vec<bool>,
    pub split: Option<Split>,
}

impl AnnotatedExample {
    pub fn label_count(&self) -> usize {
        self.labels.iter().filter(|&&l| l).count()
    }

    pub fn label_ids(&self) -> impl Iterator<Item = usize> + '_ {
        self.labels
            .iter()
            .enumerate()
            .filter_map(|(i, &l)| l.then_some(i))
    }
}

#[derive(Serialize, Deserialize)]
struct AnnotationRecord {
    image_id: String,
    labels: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    split: Option<Split>,
}

/// Parse annotation JSON Lines from a reader. Blank lines are ignored.
pub fn parse_annotations<R: BufRead>(
    reader: R,
    taxonomy: &AttributeTaxonomy,
) -> Result<Vec<AnnotatedExample>, DatasetError> {
    let mut examples = Vec::new();
    let mut seen = HashSet::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: AnnotationRecord = serde_json::from_str(&line)
            .map_err(|e| parse_err(format!("line {}", lineno + 1), e))?;
        let mut labels = vec![false; taxonomy.len()];
        for key in &record.labels {
            let id = taxonomy
                .index_of(key)
                .map_err(|_| DatasetError::UnknownAttribute {
                    image_id: record.image_id.clone(),
                    key: key.clone(),
                })?;
            labels[id] = true;
        }
        if !labels.iter().any(|&l| l) {
            return Err(DatasetError::NoLabels(record.image_id));
        }
        if !seen.insert(record.image_id.clone()) {
            return Err(DatasetError::DuplicateImageId(record.image_id));
        }
        examples.push(AnnotatedExample {
            image_id: record.image_id,
            labels,
            split: record.split,
        });
    }
    Ok(examples)
}

pub fn load_annotations(
    path: impl AsRef<Path>,
    taxonomy: &AttributeTaxonomy,
) -> Result<Vec<AnnotatedExample>, DatasetError> {
    let file = File::open(path)?;
    parse_annotations(BufReader::new(file), taxonomy)
}

pub fn write_annotations<W: Write>(
    mut writer: W,
    examples: &[AnnotatedExample],
    taxonomy: &AttributeTaxonomy,
) -> Result<(), DatasetError> {
    for ex in examples {
        let record = AnnotationRecord {
            image_id: ex.image_id.clone(),
            labels: ex
                .label_ids()
                .map(|id| taxonomy.attributes()[id].key.clone())
                .collect(),
            split: ex.split,
        };
        serde_json::to_writer(&mut writer, &record).map_err(io::Error::from)?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}

pub fn save_annotations(
    path: impl AsRef<Path>,
    examples: &[AnnotatedExample],
    taxonomy: &AttributeTaxonomy,
) -> Result<(), DatasetError> {
    let mut w = BufWriter::new(File::create(path)?);
    write_annotations(&mut w, examples, taxonomy)?;
    w.flush()?;
    Ok(())
}

/// Label statistics for a set of images.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub n_images: usize,
    pub n_labels: usize,
    pub avg_labels_per_image: f64,
    pub max_images_per_label: usize,
    pub min_images_per_label: usize,
    pub per_attribute_counts: Vec<usize>,
}

/// Label statistics, optionally restricted to one split.
///
/// `num_attributes` fixes the length of the per-attribute count vector so
/// that attributes without any image still count towards the minimum.
pub fn compute_stats(
    examples: &[AnnotatedExample],
    num_attributes: usize,
    split: Option<Split>,
) -> DatasetStats {
    let mut counts = vec![0usize; num_attributes];
    let mut n_images = 0;
    for ex in examples.iter().filter(|ex| split.is_none() || ex.split == split) {
        n_images += 1;
        for id in ex.label_ids() {
            counts[id] += 1;
        }
    }
    let n_labels: usize = counts.iter().sum();
    if n_images == 0 {
        return DatasetStats {
            n_images: 0,
            n_labels: 0,
            avg_labels_per_image: 0.0,
            max_images_per_label: 0,
            min_images_per_label: 0,
            per_attribute_counts: counts,
        };
    }
    DatasetStats {
        n_images,
        n_labels,
        avg_labels_per_image: n_labels as f64 / n_images as f64,
        max_images_per_label: counts.iter().copied().max().unwrap_or(0),
        min_images_per_label: counts.iter().copied().min().unwrap_or(0),
        per_attribute_counts: counts,
    }
}

/// Randomly assign splits.
///
/// Train receives `floor(f_train·N)` images, val `floor(f_val·N)`, test the
/// remainder. The permutation is drawn from a ChaCha8 stream seeded by `seed`.
pub fn split_dataset(
    examples: &[AnnotatedExample],
    fractions: (f64, f64, f64),
    seed: u64,
) -> Result<Vec<AnnotatedExample>, DatasetError> {
    let (ft, fv, fte) = fractions;
    let ok = [ft, fv, fte].iter().all(|f| f.is_finite() && *f >= 0.0)
        && ((ft + fv + fte) - 1.0).abs() <= 1e-9;
    if !ok {
        return Err(DatasetError::BadFractions(fractions));
    }
    let n = examples.len();
    // The epsilon absorbs products such as 0.2·20 = 3.9999… in binary.
    let n_train = ((ft * n as f64) + 1e-9).floor() as usize;
    let n_val = (((fv * n as f64) + 1e-9).floor() as usize).min(n - n_train.min(n));
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let mut out = examples.to_vec();
    for (rank, &idx) in order.iter().enumerate() {
        out[idx].split = Some(if rank < n_train {
            Split::Train
        } else if rank < n_train + n_val {
            Split::Val
        } else {
            Split::Test
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub image_id: String,
    pub values: Vec<f32>,
}

/// Image features keyed by image id, with a uniform dimension.
///
/// Insertion order is preserved so that writing a store is deterministic.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FeatureStore {
    dim: usize,
    ids: Vec<String>,
    index: HashMap<String, usize>,
    values: Vec<f32>,
}

impl FeatureStore {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            ..Self::default()
        }
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

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn insert(&mut self, image_id: impl Into<String>, values: &[f32]) -> Result<(), DatasetError> {
        let image_id = image_id.into();
        if values.len() != self.dim {
            return Err(DatasetError::DimensionMismatch {
                image_id,
                expected: self.dim,
                actual: values.len(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(DatasetError::NonFiniteValue(image_id));
        }
        if self.index.contains_key(&image_id) {
            return Err(DatasetError::DuplicateImageId(image_id));
        }
        self.index.insert(image_id.clone(), self.ids.len());
        self.ids.push(image_id);
        self.values.extend_from_slice(values);
        Ok(())
    }

    pub fn get(&self, image_id: &str) -> Option<&[f32]> {
        self.index
            .get(image_id)
            .map(|&i| &self.values[i * self.dim..(i + 1) * self.dim])
    }

    /// Feature vector widened to `f64`, the precision used by all models.
    pub fn get_f64(&self, image_id: &str) -> Option<Vec<f64>> {
        self.get(image_id).map(|v| v.iter().map(|&x| f64::from(x)).collect())
    }

    pub fn iter(&self) -> impl Iterator<Item = FeatureVector> + '_ {
        self.ids.iter().enumerate().map(move |(i, id)| FeatureVector {
            image_id: id.clone(),
            values: self.values[i * self.dim..(i + 1) * self.dim].to_vec(),
        })
    }
}

pub fn read_features<R: Read>(mut r: R) -> Result<FeatureStore, DatasetError> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|e| parse_err("header", e))?;
    if &magic != FEATURE_MAGIC {
        return Err(parse_err("header", "bad magic, expected VPAF"));
    }
    let version = r.read_u32::<LittleEndian>().map_err(|e| parse_err("header", e))?;
    if version != FEATURE_VERSION {
        return Err(parse_err("header", format!("unsupported version {version}")));
    }
    let count = r.read_u32::<LittleEndian>().map_err(|e| parse_err("header", e))? as usize;
    let dim = r.read_u32::<LittleEndian>().map_err(|e| parse_err("header", e))? as usize;
    let mut store = FeatureStore::new(dim);
    let mut values = vec![0f32; dim];
    for rec in 0..count {
        let loc = || format!("record {rec}");
        let id_len = r.read_u16::<LittleEndian>().map_err(|e| parse_err(loc(), e))? as usize;
        let mut id = vec![0u8; id_len];
        r.read_exact(&mut id).map_err(|e| parse_err(loc(), e))?;
        let id = String::from_utf8(id).map_err(|e| parse_err(loc(), e))?;
        r.read_f32_into::<LittleEndian>(&mut values)
            .map_err(|e| parse_err(loc(), e))?;
        store.insert(id, &values)?;
    }
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(parse_err("trailer", "unexpected bytes after last record"));
    }
    Ok(store)
}

pub fn write_features<W: Write>(mut w: W, store: &FeatureStore) -> Result<(), DatasetError> {
    w.write_all(FEATURE_MAGIC)?;
    w.write_u32::<LittleEndian>(FEATURE_VERSION)?;
    w.write_u32::<LittleEndian>(store.len() as u32)?;
    w.write_u32::<LittleEndian>(store.dim() as u32)?;
    for (i, id) in store.ids.iter().enumerate() {
        let bytes = id.as_bytes();
        let len = u16::try_from(bytes.len())
            .map_err(|_| parse_err(id.clone(), "image id longer than 65535 bytes"))?;
        w.write_u16::<LittleEndian>(len)?;
        w.write_all(bytes)?;
        for &v in &store.values[i * store.dim..(i + 1) * store.dim] {
            w.write_f32::<LittleEndian>(v)?;
        }
    }
    Ok(())
}

pub fn load_features(path: impl AsRef<Path>) -> Result<FeatureStore, DatasetError> {
    read_features(BufReader::new(File::open(path)?))
}

pub fn save_features(path: impl AsRef<Path>, store: &FeatureStore) -> Result<(), DatasetError> {
    let mut w = BufWriter::new(File::create(path)?);
    write_features(&mut w, store)?;
    w.flush()?;
    Ok(())
}

/// Feature/label pairs ready for training or evaluation.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingSet {
    pub image_ids: Vec<String>,
    pub features: Vec<Vec<f64>>,
    pub labels: Vec<Vec<bool>>,
}

impl TrainingSet {
    /// Join examples with their features; every example must have a vector.
    pub fn assemble<'a>(
        examples: impl IntoIterator<Item = &'a AnnotatedExample>,
        store: &FeatureStore,
    ) -> Result<Self, DatasetError> {
        let mut set = TrainingSet::default();
        for ex in examples {
            let x = store
                .get_f64(&ex.image_id)
                .ok_or_else(|| DatasetError::MissingFeatures(ex.image_id.clone()))?;
            set.image_ids.push(ex.image_id.clone());
            set.features.push(x);
            set.labels.push(ex.labels.clone());
        }
        Ok(set)
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn input_dim(&self) -> Option<usize> {
        self.features.first().map(Vec::len)
    }

    pub fn num_attributes(&self) -> Option<usize> {
        self.labels.first().map(Vec::len)
    }
}
