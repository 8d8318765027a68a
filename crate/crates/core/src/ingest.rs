//! CIFAR-10 binary batches, dataset splits, pair sampling and noise.
//!
//! A batch file is a flat sequence of 3073-byte records: one label byte
//! followed by the 1024 red, 1024 green and 1024 blue bytes of a 32x32 image,
//! each plane in row-major order.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, Rng, Stream};

pub const SIDE: usize = 32;
pub const PLANE: usize = SIDE * SIDE;
pub const PIXELS: usize = 3 * PLANE;
pub const RECORD_BYTES: usize = PIXELS + 1;
pub const NUM_CLASSES: usize = 10;

/// One 32x32 RGB image with its class label.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageRecord {
    pub id: u32,
    pub label: u8,
    /// Planar storage: the R plane, then G, then B.
    pixels: Vec<u8>,
}

impl ImageRecord {
    pub fn new(id: u32, label: u8, pixels: Vec<u8>) -> Result<Self> {
        if pixels.len() != PIXELS {
            return Err(Error::data(format!(
                "image {id}: expected {PIXELS} pixel bytes, got {}",
                pixels.len()
            )));
        }
        if label as usize >= NUM_CLASSES {
            return Err(Error::data(format!("image {id}: label {label} out of range")));
        }
        Ok(Self { id, label, pixels })
    }

    /// Builds a record from interleaved RGB triples in row-major order.
    pub fn from_interleaved(id: u32, label: u8, rgb: &[u8]) -> Result<Self> {
        if rgb.len() != PIXELS {
            return Err(Error::data(format!("expected {PIXELS} interleaved bytes")));
        }
        let mut pixels = vec![0u8; PIXELS];
        for (i, px) in rgb.chunks_exact(3).enumerate() {
            pixels[i] = px[0];
            pixels[PLANE + i] = px[1];
            pixels[2 * PLANE + i] = px[2];
        }
        Self::new(id, label, pixels)
    }

    pub fn planes(&self) -> &[u8] {
        &self.pixels
    }

    #[inline]
    pub fn rgb(&self, x: usize, y: usize) -> [u8; 3] {
        let i = y * SIDE + x;
        [self.pixels[i], self.pixels[PLANE + i], self.pixels[2 * PLANE + i]]
    }

    /// Iterates pixels as RGB triples in row-major order.
    pub fn rgb_iter(&self) -> impl Iterator<Item = [u8; 3]> + '_ {
        (0..PLANE).map(move |i| [self.pixels[i], self.pixels[PLANE + i], self.pixels[2 * PLANE + i]])
    }

    /// ITU-R 601 luma, row-major.
    pub fn grayscale(&self) -> Vec<f64> {
        self.rgb_iter()
            .map(|[r, g, b]| 0.299 * r as f64 + 0.587 * g as f64 + 0.114 * b as f64)
            .collect()
    }

    pub fn with_pixels(&self, pixels: Vec<u8>) -> Result<Self> {
        Self::new(self.id, self.label, pixels)
    }
}

/// Loads every CIFAR-10 batch file in `dir`.
///
/// Training batches (`data_batch_*.bin`) come first in name order, followed by
/// `test_batch.bin`. Ids are assigned consecutively in file order.
pub fn load_cifar10(dir: impl AsRef<Path>) -> Result<Vec<ImageRecord>> {
    let dir = dir.as_ref();
    let files = batch_files(dir)?;
    if files.is_empty() {
        return Err(Error::data(format!("no batch files found in {}", dir.display())));
    }
    let mut records = Vec::new();
    for file in &files {
        let bytes = fs::read(file).map_err(|e| Error::io(file, e))?;
        parse_batch(&bytes, records.len() as u32, &mut records)
            .map_err(|e| Error::data(format!("{}: {e}", file.display())))?;
    }
    let mut per_class = [0usize; NUM_CLASSES];
    for r in &records {
        per_class[r.label as usize] += 1;
    }
    log::info!("loaded {} records from {} batch files, per class {:?}", records.len(), files.len(), per_class);
    Ok(records)
}

fn batch_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut train = Vec::new();
    let mut test = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if name.starts_with("data_batch_") && name.ends_with(".bin") {
            train.push(entry.path());
        } else if name == "test_batch.bin" {
            test.push(entry.path());
        }
    }
    train.sort();
    train.extend(test);
    Ok(train)
}

/// Parses one batch file's bytes, assigning ids from `first_id`.
pub fn parse_batch(bytes: &[u8], first_id: u32, out: &mut Vec<ImageRecord>) -> Result<()> {
    if !bytes.len().is_multiple_of(RECORD_BYTES) {
        return Err(Error::data(format!(
            "truncated record: length {} is not a multiple of {RECORD_BYTES}",
            bytes.len()
        )));
    }
    for (i, chunk) in bytes.chunks_exact(RECORD_BYTES).enumerate() {
        let label = chunk[0];
        if label as usize >= NUM_CLASSES {
            return Err(Error::data(format!("record {i}: label byte {label} >= {NUM_CLASSES}")));
        }
        out.push(ImageRecord {
            id: first_id + i as u32,
            label,
            pixels: chunk[1..].to_vec(),
        });
    }
    Ok(())
}

/// Writes records as a single CIFAR-10 batch file.
pub fn write_cifar10(records: &[ImageRecord], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::with_capacity(records.len() * RECORD_BYTES);
    for r in records {
        buf.push(r.label);
        buf.extend_from_slice(&r.pixels);
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Disjoint train/query/gallery partition of record ids.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub seed: u64,
    pub train: Vec<u32>,
    pub query: Vec<u32>,
    pub gallery: Vec<u32>,
    /// When set the gallery also contains the training ids.
    #[serde(default)]
    pub gallery_includes_train: bool,
}

impl DatasetSplit {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let json = serde_json::to_string_pretty(self)?;
        fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let s = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&s)?)
    }

    /// Adds the training ids to the gallery. Recorded in the manifest.
    pub fn include_train_in_gallery(&mut self) {
        if !self.gallery_includes_train {
            self.gallery.extend_from_slice(&self.train);
            self.gallery.sort_unstable();
            self.gallery_includes_train = true;
        }
    }
}

/// Stratified split with the gallery holding every remaining record.
pub fn make_split(records: &[ImageRecord], n_train: usize, n_query: usize, seed: u64) -> Result<DatasetSplit> {
    make_split_capped(records, n_train, n_query, None, seed)
}

/// Stratified split; the gallery is capped at `n_gallery` records when given.
pub fn make_split_capped(
    records: &[ImageRecord],
    n_train: usize,
    n_query: usize,
    n_gallery: Option<usize>,
    seed: u64,
) -> Result<DatasetSplit> {
    let total = records.len();
    let wanted = n_train + n_query + n_gallery.unwrap_or(0);
    if wanted > total {
        return Err(Error::invalid(format!(
            "split sizes ({n_train} train + {n_query} query + {} gallery) exceed dataset size {total}",
            n_gallery.unwrap_or(0)
        )));
    }
    let mut rng = rng::stream(seed, Stream::Split);
    let mut by_class: BTreeMap<u8, Vec<u32>> = BTreeMap::new();
    for r in records {
        by_class.entry(r.label).or_default().push(r.id);
    }
    let mut pools: Vec<Vec<u32>> = by_class.into_values().collect();
    for pool in &mut pools {
        pool.sort_unstable();
        pool.shuffle(&mut rng);
        // Draw from the back.
        pool.reverse();
    }
    let train = draw_stratified(&mut pools, n_train);
    let query = draw_stratified(&mut pools, n_query);
    let gallery = match n_gallery {
        Some(n) => draw_stratified(&mut pools, n),
        None => {
            let mut rest: Vec<u32> = pools.into_iter().flatten().collect();
            rest.sort_unstable();
            rest
        }
    };
    Ok(DatasetSplit {
        seed,
        train,
        query,
        gallery,
        gallery_includes_train: false,
    })
}

/// Round-robin over classes so per-class counts differ by at most one while
/// every class still has members.
fn draw_stratified(pools: &mut [Vec<u32>], n: usize) -> Vec<u32> {
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let before = out.len();
        for pool in pools.iter_mut() {
            if out.len() == n {
                break;
            }
            if let Some(id) = pool.pop() {
                out.push(id);
            }
        }
        if out.len() == before {
            break;
        }
    }
    out.sort_unstable();
    out
}

/// A pair of images with similarity label `y` = +1 (same class) or -1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairSample {
    pub first: u32,
    pub second: u32,
    pub y: i8,
}

/// Class membership lookup over a subset of ids.
#[derive(Debug, Clone)]
pub struct LabelIndex {
    ids: Vec<u32>,
    labels: BTreeMap<u32, u8>,
    members: BTreeMap<u8, Vec<u32>>,
}

impl LabelIndex {
    pub fn new(ids: &[u32], label_of: impl Fn(u32) -> u8) -> Self {
        let mut labels = BTreeMap::new();
        let mut members: BTreeMap<u8, Vec<u32>> = BTreeMap::new();
        for &id in ids {
            let l = label_of(id);
            labels.insert(id, l);
            members.entry(l).or_default().push(id);
        }
        Self {
            ids: ids.to_vec(),
            labels,
            members,
        }
    }

    pub fn label(&self, id: u32) -> Option<u8> {
        self.labels.get(&id).copied()
    }

    pub fn ids(&self) -> &[u32] {
        &self.ids
    }
}

/// Samples `batch_size` pairs, `round(batch_size * pos_fraction)` of them
/// positive, from the ids of `index`.
pub fn sample_pairs(index: &LabelIndex, batch_size: usize, pos_fraction: f64, seed: u64) -> Result<Vec<PairSample>> {
    let mut rng = rng::stream(seed, Stream::Pairs);
    sample_pairs_with(index, batch_size, pos_fraction, &mut rng)
}

pub fn sample_pairs_with(
    index: &LabelIndex,
    batch_size: usize,
    pos_fraction: f64,
    rng: &mut Rng,
) -> Result<Vec<PairSample>> {
    if batch_size < 2 {
        return Err(Error::invalid("batch_size must be at least 2"));
    }
    if !(0.0..=1.0).contains(&pos_fraction) {
        return Err(Error::invalid(format!("pos_fraction {pos_fraction} outside [0, 1]")));
    }
    if index.ids.len() < 2 {
        return Err(Error::invalid("need at least two ids to sample pairs"));
    }
    let n_pos = (batch_size as f64 * pos_fraction).round() as usize;
    let mut pairs = Vec::with_capacity(batch_size);
    for k in 0..batch_size {
        let first = index.ids[rng.random_range(0..index.ids.len())];
        let label = index.labels[&first];
        let same = &index.members[&label];
        let (second, y) = if k < n_pos {
            if same.len() < 2 {
                return Err(Error::data(format!(
                    "class {label} has fewer than 2 members; cannot sample a positive pair"
                )));
            }
            let mut other = first;
            while other == first {
                other = same[rng.random_range(0..same.len())];
            }
            (other, 1)
        } else {
            if same.len() == index.ids.len() {
                return Err(Error::data("all ids share one class; cannot sample a negative pair"));
            }
            let mut other = first;
            while index.labels[&other] == label {
                other = index.ids[rng.random_range(0..index.ids.len())];
            }
            (other, -1)
        };
        pairs.push(PairSample { first, second, y });
    }
    pairs.shuffle(rng);
    Ok(pairs)
}

/// Returns a copy of `record` with i.i.d. Gaussian pixel noise, rounded and
/// clamped to [0, 255]. The stream is keyed by the record id.
pub fn add_noise(record: &ImageRecord, sigma: f64, seed: u64) -> ImageRecord {
    assert!(sigma >= 0.0, "noise sigma must be non-negative");
    if sigma == 0.0 {
        return record.clone();
    }
    let mut rng = rng::keyed(seed, Stream::Noise, record.id as u64);
    let normal = Normal::new(0.0, sigma).expect("finite sigma");
    let pixels = record
        .pixels
        .iter()
        .map(|&p| (p as f64 + normal.sample(&mut rng)).round().clamp(0.0, 255.0) as u8)
        .collect();
    ImageRecord {
        id: record.id,
        label: record.label,
        pixels,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture(n: usize) -> Vec<ImageRecord> {
        (0..n)
            .map(|i| {
                let pixels = (0..PIXELS).map(|k| ((k * 7 + i * 13) % 256) as u8).collect();
                ImageRecord::new(i as u32, (i % NUM_CLASSES) as u8, pixels).unwrap()
            })
            .collect()
    }

    #[test]
    fn two_record_file_parses_byte_by_byte() {
        let dir = tempfile::tempdir().unwrap();
        let mut bytes = vec![0u8; 2 * RECORD_BYTES];
        bytes[0] = 3;
        bytes[RECORD_BYTES] = 7;
        // first red pixel of record 0, last blue pixel of record 1
        bytes[1] = 200;
        bytes[2 * RECORD_BYTES - 1] = 99;
        fs::write(dir.path().join("data_batch_1.bin"), &bytes).unwrap();
        let recs = load_cifar10(dir.path()).unwrap();
        assert_eq!(recs.len(), 2);
        assert_eq!((recs[0].label, recs[1].label), (3, 7));
        assert_eq!((recs[0].id, recs[1].id), (0, 1));
        assert_eq!(recs[0].rgb(0, 0), [200, 0, 0]);
        assert_eq!(recs[1].rgb(31, 31), [0, 0, 99]);
    }

    #[test]
    fn empty_directory_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let err = load_cifar10(dir.path()).unwrap_err().to_string();
        assert!(err.contains("no batch files found"), "{err}");
    }

    #[test]
    fn truncated_and_bad_label_files_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("data_batch_1.bin"), vec![0u8; RECORD_BYTES + 5]).unwrap();
        assert!(load_cifar10(dir.path()).unwrap_err().to_string().contains("truncated"));
        let mut bytes = vec![0u8; RECORD_BYTES];
        bytes[0] = 10;
        fs::write(dir.path().join("data_batch_1.bin"), bytes).unwrap();
        assert!(load_cifar10(dir.path()).unwrap_err().to_string().contains("label byte 10"));
    }

    #[test]
    fn write_then_load_is_identity() {
        let dir = tempfile::tempdir().unwrap();
        let recs = fixture(25);
        write_cifar10(&recs, dir.path().join("data_batch_1.bin")).unwrap();
        let back = load_cifar10(dir.path()).unwrap();
        assert_eq!(recs, back);
        let raw = fs::read(dir.path().join("data_batch_1.bin")).unwrap();
        assert_eq!(raw.len(), 25 * RECORD_BYTES);
    }

    #[test]
    fn test_batch_comes_after_training_batches() {
        let dir = tempfile::tempdir().unwrap();
        let recs = fixture(4);
        write_cifar10(&recs[2..], dir.path().join("test_batch.bin")).unwrap();
        write_cifar10(&recs[..2], dir.path().join("data_batch_1.bin")).unwrap();
        let back = load_cifar10(dir.path()).unwrap();
        assert_eq!(back, recs);
    }

    #[test]
    fn split_is_disjoint_stratified_and_deterministic() {
        let recs = fixture(600);
        let s = make_split(&recs, 100, 50, 1).unwrap();
        assert_eq!((s.train.len(), s.query.len(), s.gallery.len()), (100, 50, 450));
        let mut all: Vec<u32> = s.train.iter().chain(&s.query).chain(&s.gallery).copied().collect();
        all.sort_unstable();
        all.dedup();
        assert_eq!(all.len(), 600);
        let mut counts = [0usize; NUM_CLASSES];
        for &id in &s.train {
            counts[recs[id as usize].label as usize] += 1;
        }
        assert!(counts.iter().all(|&c| c == 10));
        assert_eq!(s, make_split(&recs, 100, 50, 1).unwrap());
        assert_ne!(s.train, make_split(&recs, 100, 50, 2).unwrap().train);
    }

    #[test]
    fn split_rejects_oversized_requests() {
        let recs = fixture(60);
        assert!(make_split(&recs, 61, 0, 1).is_err());
        assert!(make_split(&recs, 50, 11, 1).is_err());
        assert!(make_split_capped(&recs, 20, 10, Some(31), 1).is_err());
        let s = make_split_capped(&recs, 20, 10, Some(20), 1).unwrap();
        assert_eq!(s.gallery.len(), 20);
    }

    #[test]
    fn manifest_round_trips() {
        let recs = fixture(40);
        let mut s = make_split(&recs, 10, 10, 3).unwrap();
        s.include_train_in_gallery();
        assert_eq!(s.gallery.len(), 30);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("split.json");
        s.save(&p).unwrap();
        assert_eq!(DatasetSplit::load(&p).unwrap(), s);
    }

    #[test]
    fn pair_sampling_fractions_and_labels() {
        let recs = fixture(100);
        let ids: Vec<u32> = (0..100).collect();
        let idx = LabelIndex::new(&ids, |id| recs[id as usize].label);
        let pairs = sample_pairs(&idx, 8, 0.5, 9).unwrap();
        assert_eq!(pairs.iter().filter(|p| p.y == 1).count(), 4);
        assert_eq!(pairs.iter().filter(|p| p.y == -1).count(), 4);
        for p in &pairs {
            assert_ne!(p.first, p.second);
            let same = recs[p.first as usize].label == recs[p.second as usize].label;
            assert_eq!(same, p.y == 1);
        }
        assert!(sample_pairs(&idx, 16, 0.0, 9).unwrap().iter().all(|p| p.y == -1));
        assert_eq!(pairs, sample_pairs(&idx, 8, 0.5, 9).unwrap());
    }

    #[test]
    fn positive_pair_from_singleton_class_fails() {
        let recs = fixture(10); // one member per class
        let ids: Vec<u32> = (0..10).collect();
        let idx = LabelIndex::new(&ids, |id| recs[id as usize].label);
        assert!(sample_pairs(&idx, 4, 1.0, 0).is_err());
        assert!(sample_pairs(&idx, 1, 0.5, 0).is_err());
        assert!(sample_pairs(&idx, 4, 1.5, 0).is_err());
    }

    #[test]
    fn noise_identity_determinism_and_clamp() {
        let recs = fixture(2);
        assert_eq!(add_noise(&recs[0], 0.0, 5), recs[0]);
        let a = add_noise(&recs[0], 5.0, 5);
        assert_eq!(a, add_noise(&recs[0], 5.0, 5));
        assert_ne!(a, recs[0]);
        let black = ImageRecord::new(0, 0, vec![0; PIXELS]).unwrap();
        let noisy = add_noise(&black, 5.0, 1);
        assert!(noisy.planes().iter().any(|&p| p > 0));
        let white = ImageRecord::new(0, 0, vec![255; PIXELS]).unwrap();
        assert!(add_noise(&white, 5.0, 1).planes().iter().any(|&p| p < 255));
    }
}
