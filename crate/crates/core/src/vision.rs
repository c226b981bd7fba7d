//! Spatial image features: the SPFT container, synthetic features and
//! sentence-to-image index files.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::tensor::{Real, Tensor};

pub const MAGIC: &[u8; 4] = b"SPFT";
pub const VERSION: u16 = 1;
const HEADER_LEN: usize = 4 + 2 + 4 + 4 + 8;

/// One image as an `L×D` matrix of region features.
#[derive(Clone, Debug, PartialEq)]
pub struct SpatialFeatureSet<T> {
    pub image_id: String,
    pub features: Tensor<T>,
}

impl<T: Real> SpatialFeatureSet<T> {
    /// Checks shape and finiteness.
    pub fn check(&self, feat_len: usize, feat_dim: usize) -> Result<()> {
        if self.features.shape() != [feat_len, feat_dim] {
            return Err(self.error(format!(
                "shape {:?} does not match expected [{feat_len}, {feat_dim}]",
                self.features.shape()
            )));
        }
        if !self.features.is_finite() {
            return Err(self.error("contains a non-finite value"));
        }
        Ok(())
    }

    fn error(&self, detail: impl Into<String>) -> Error {
        Error::Feature {
            image_id: self.image_id.clone(),
            detail: detail.into(),
        }
    }
}

/// Feature sets keyed by image id, all of one declared shape.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureStore<T> {
    feat_len: usize,
    feat_dim: usize,
    sets: Vec<SpatialFeatureSet<T>>,
    index: HashMap<String, usize>,
}

impl<T: Real> FeatureStore<T> {
    pub fn new(feat_len: usize, feat_dim: usize, sets: Vec<SpatialFeatureSet<T>>) -> Result<Self> {
        let mut index = HashMap::with_capacity(sets.len());
        for (i, set) in sets.iter().enumerate() {
            set.check(feat_len, feat_dim)?;
            if index.insert(set.image_id.clone(), i).is_some() {
                return Err(set.error("duplicate image id"));
            }
        }
        Ok(Self {
            feat_len,
            feat_dim,
            sets,
            index,
        })
    }

    pub fn get(&self, image_id: &str) -> Option<&Tensor<T>> {
        self.index.get(image_id).map(|&i| &self.sets[i].features)
    }

    pub fn len(&self) -> usize {
        self.sets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sets.is_empty()
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.feat_len, self.feat_dim)
    }

    pub fn sets(&self) -> &[SpatialFeatureSet<T>] {
        &self.sets
    }
}

/// Serialises feature sets in the SPFT format. Values are stored as
/// little-endian `f32`.
pub fn encode_features<T: Real>(feat_len: usize, feat_dim: usize, sets: &[SpatialFeatureSet<T>]) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(HEADER_LEN + sets.len() * (feat_len * feat_dim * 4 + 16));
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(feat_len as u32).to_le_bytes());
    out.extend_from_slice(&(feat_dim as u32).to_le_bytes());
    out.extend_from_slice(&(sets.len() as u64).to_le_bytes());
    for set in sets {
        set.check(feat_len, feat_dim)?;
        let id = set.image_id.as_bytes();
        let id_len = u16::try_from(id.len()).map_err(|_| set.error("image id longer than 65535 bytes"))?;
        out.extend_from_slice(&id_len.to_le_bytes());
        out.extend_from_slice(id);
        for &v in set.features.data() {
            out.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
        }
    }
    Ok(out)
}

pub fn write_features<T: Real>(path: &Path, feat_len: usize, feat_dim: usize, sets: &[SpatialFeatureSet<T>]) -> Result<()> {
    fs::write(path, encode_features(feat_len, feat_dim, sets)?)?;
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let end = self.pos.checked_add(n)?;
        let slice = self.bytes.get(self.pos..end)?;
        self.pos = end;
        Some(slice)
    }
}

/// Parses an SPFT buffer, validating every record against the expected
/// `feat_len × feat_dim` shape.
pub fn decode_features<T: Real>(bytes: &[u8], feat_len: usize, feat_dim: usize) -> Result<FeatureStore<T>> {
    let mut r = Reader { bytes, pos: 0 };
    let header = r
        .take(HEADER_LEN)
        .ok_or_else(|| Error::format("feature file", "truncated header"))?;
    if &header[..4] != MAGIC {
        return Err(Error::format("feature file", "bad magic bytes"));
    }
    let version = u16::from_le_bytes([header[4], header[5]]);
    if version != VERSION {
        return Err(Error::format("feature file", format!("unsupported version {version}")));
    }
    let file_len = u32::from_le_bytes(header[6..10].try_into().unwrap()) as usize;
    let file_dim = u32::from_le_bytes(header[10..14].try_into().unwrap()) as usize;
    let count = u64::from_le_bytes(header[14..22].try_into().unwrap());
    if (file_len, file_dim) != (feat_len, feat_dim) {
        return Err(Error::format(
            "feature file",
            format!("records are {file_len}×{file_dim}, expected {feat_len}×{feat_dim}"),
        ));
    }
    let values = feat_len * feat_dim;
    let mut sets = Vec::new();
    for n in 0..count {
        let truncated = |id: &str| Error::Feature {
            image_id: id.to_string(),
            detail: format!("record {n} is truncated"),
        };
        let id_len = r.take(2).ok_or_else(|| truncated("?"))?;
        let id_len = u16::from_le_bytes([id_len[0], id_len[1]]) as usize;
        let id = r.take(id_len).ok_or_else(|| truncated("?"))?;
        let image_id = std::str::from_utf8(id)
            .map_err(|_| Error::format("feature file", format!("record {n} has a non-UTF-8 id")))?
            .to_string();
        let raw = r.take(values * 4).ok_or_else(|| truncated(&image_id))?;
        let data: Vec<T> = raw
            .chunks_exact(4)
            .map(|c| T::of(f32::from_le_bytes(c.try_into().unwrap()) as f64))
            .collect();
        let features = Tensor::new(&[feat_len, feat_dim], data)?;
        sets.push(SpatialFeatureSet { image_id, features });
    }
    if r.pos != bytes.len() {
        return Err(Error::format(
            "feature file",
            format!("{} trailing bytes after {count} records", bytes.len() - r.pos),
        ));
    }
    FeatureStore::new(feat_len, feat_dim, sets)
}

pub fn load_features<T: Real>(path: &Path, feat_len: usize, feat_dim: usize) -> Result<FeatureStore<T>> {
    decode_features(&fs::read(path)?, feat_len, feat_dim)
}

/// Half-normal features `|z|`, `z ~ N(0, 1)`, with ids `img00000`, ….
pub fn synth_features<T: Real>(seed: u64, feat_len: usize, feat_dim: usize, n: usize) -> Vec<SpatialFeatureSet<T>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let data = (0..feat_len * feat_dim)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    T::of(z.abs())
                })
                .collect();
            SpatialFeatureSet {
                image_id: format!("img{i:05}"),
                features: Tensor::new(&[feat_len, feat_dim], data).expect("synthetic shape"),
            }
        })
        .collect()
}

/// Mean and variance of the half-normal generator.
pub fn half_normal_moments() -> (f64, f64) {
    let mean = (2.0 / std::f64::consts::PI).sqrt();
    (mean, 1.0 - mean * mean)
}

/// Checks a feature set against the image dimensions of a model.
pub fn validate_dims<T: Real>(fs: &SpatialFeatureSet<T>, config: &ModelConfig) -> Result<()> {
    if !config.multimodal {
        return Err(fs.error("model has no image attention"));
    }
    fs.check(config.feat_len, config.feat_dim)
}

/// Validates a batch, failing on the first bad record.
pub fn validate_all<T: Real>(sets: &[SpatialFeatureSet<T>], config: &ModelConfig) -> Result<()> {
    sets.iter().try_for_each(|fs| validate_dims(fs, config))
}

/// Parses an index file of `line<TAB>image_id` rows (1-based line
/// numbers, `#` comments and blank lines ignored).
pub fn parse_index(text: &str) -> Result<HashMap<usize, String>> {
    let mut map = HashMap::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = |detail: &str| Error::format("index file", format!("line {}: {detail}", n + 1));
        let (num, id) = line.split_once('\t').ok_or_else(|| bad("expected `line<TAB>image_id`"))?;
        let num: usize = num.trim().parse().map_err(|_| bad("line number is not an integer"))?;
        if num == 0 {
            return Err(bad("line numbers start at 1"));
        }
        let id = id.trim();
        if id.is_empty() {
            return Err(bad("empty image id"));
        }
        if map.insert(num, id.to_string()).is_some() {
            return Err(bad("duplicate line number"));
        }
    }
    Ok(map)
}

pub fn read_index(path: &Path) -> Result<HashMap<usize, String>> {
    parse_index(&fs::read_to_string(path)?)
}

/// Formats an index mapping (sorted by line number).
pub fn format_index(map: &HashMap<usize, String>) -> String {
    let mut rows: Vec<_> = map.iter().collect();
    rows.sort();
    rows.into_iter().map(|(n, id)| format!("{n}\t{id}\n")).collect()
}
