//! Hamming-space index: radius-limited multi-probe lookup followed by a
//! re-rank on the relaxed codes, plus an exhaustive ranking mode.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::binio::{put_f64, put_u32, put_u64, Reader};
use crate::error::{Error, Result};
use crate::hashcore::codes::{binarize, words_for, BinaryCode};

pub const DEFAULT_RADIUS: usize = 2;

pub fn hamming_distance(a: &BinaryCode, b: &BinaryCode) -> Result<usize> {
    if a.len() != b.len() {
        return Err(Error::shape(format!("hamming distance between {}-bit and {}-bit codes", a.len(), b.len())));
    }
    Ok(hamming_words(a.words(), b.words()))
}

#[inline]
fn hamming_words(a: &[u64], b: &[u64]) -> usize {
    a.iter().zip(b).map(|(x, y)| (x ^ y).count_ones() as usize).sum()
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Number of probes for a radius-r lookup: sum of C(q, k) for k <= r.
pub fn probe_count(q: usize, radius: usize) -> u128 {
    let mut total = 0u128;
    let mut c = 1u128;
    for k in 0..=radius.min(q) {
        total += c;
        c = c * (q - k) as u128 / (k + 1) as u128;
    }
    total
}

/// Binary and relaxed codes for a set of images, with their ids.
#[derive(Debug, Clone, PartialEq)]
pub struct CodeSet {
    pub q: usize,
    pub ids: Vec<u32>,
    pub binary: Vec<BinaryCode>,
    pub continuous: Vec<Vec<f64>>,
}

const CODE_MAGIC: &[u8; 4] = b"MVHC";
const INDEX_MAGIC: &[u8; 4] = b"MVHI";
const FORMAT_VERSION: u32 = 1;

impl CodeSet {
    /// Binarises relaxed codes. All codes must share one length.
    pub fn from_relaxed(ids: Vec<u32>, continuous: Vec<Vec<f64>>) -> Result<Self> {
        if ids.len() != continuous.len() {
            return Err(Error::shape("one code per id required"));
        }
        let q = continuous.first().map(Vec::len).unwrap_or(0);
        if continuous.iter().any(|c| c.len() != q) {
            return Err(Error::shape("mixed code lengths"));
        }
        let binary = continuous.iter().map(|c| binarize(c)).collect();
        Ok(Self { q, ids, binary, continuous })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    fn to_bytes(&self, magic: &[u8; 4]) -> Vec<u8> {
        let words = words_for(self.q);
        let mut out = Vec::with_capacity(24 + self.len() * (4 + 8 * words + 8 * self.q));
        out.extend_from_slice(magic);
        put_u32(&mut out, FORMAT_VERSION);
        put_u32(&mut out, self.q as u32);
        put_u64(&mut out, self.len() as u64);
        put_u32(&mut out, words as u32);
        for &id in &self.ids {
            put_u32(&mut out, id);
        }
        for b in &self.binary {
            for &w in b.words() {
                put_u64(&mut out, w);
            }
        }
        for c in &self.continuous {
            for &v in c {
                put_f64(&mut out, v);
            }
        }
        out
    }

    fn from_bytes(bytes: &[u8], magic: &[u8; 4], what: &str) -> Result<Self> {
        let mut r = Reader::new(bytes);
        if r.take(4)? != magic {
            return Err(Error::Format(format!("not a {what} file")));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::Format(format!("{what} format version {version}, expected {FORMAT_VERSION}")));
        }
        let q = r.u32()? as usize;
        let n = r.u64()? as usize;
        let words = r.u32()? as usize;
        if words != words_for(q) {
            return Err(Error::Format(format!("{words} words per code for q = {q}")));
        }
        let ids = (0..n).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
        let mut binary = Vec::with_capacity(n);
        for _ in 0..n {
            let w = (0..words).map(|_| r.u64()).collect::<Result<Vec<_>>>()?;
            binary.push(BinaryCode::from_words(q, w)?);
        }
        let mut continuous = Vec::with_capacity(n);
        for _ in 0..n {
            continuous.push((0..q).map(|_| r.f64()).collect::<Result<Vec<_>>>()?);
        }
        r.finish()?;
        Ok(Self { q, ids, binary, continuous })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes(CODE_MAGIC)).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, CODE_MAGIC, "code")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hit {
    pub id: u32,
    pub hamming: usize,
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryResult {
    pub query: u32,
    pub hits: Vec<Hit>,
}

fn sort_hits(hits: &mut [Hit]) {
    hits.sort_by(|a, b| a.distance.total_cmp(&b.distance).then(a.id.cmp(&b.id)));
}

#[derive(Debug, Clone)]
pub struct HammingIndex {
    codes: CodeSet,
    table: BTreeMap<Vec<u64>, Vec<usize>>,
}

impl HammingIndex {
    pub fn build(codes: CodeSet) -> Result<Self> {
        let mut seen = HashSet::with_capacity(codes.len());
        if let Some(dup) = codes.ids.iter().find(|id| !seen.insert(**id)) {
            return Err(Error::invalid(format!("duplicate id {dup} in index")));
        }
        if codes.binary.iter().any(|b| b.len() != codes.q) {
            return Err(Error::shape("mixed code lengths"));
        }
        let mut table: BTreeMap<Vec<u64>, Vec<usize>> = BTreeMap::new();
        for (slot, b) in codes.binary.iter().enumerate() {
            table.entry(b.words().to_vec()).or_default().push(slot);
        }
        Ok(Self { codes, table })
    }

    pub fn q(&self) -> usize {
        self.codes.q
    }

    pub fn len(&self) -> usize {
        self.codes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }

    pub fn codes(&self) -> &CodeSet {
        &self.codes
    }

    /// Bucket keys with the ids they hold, in key order.
    pub fn buckets(&self) -> impl Iterator<Item = (&[u64], Vec<u32>)> {
        self.table.iter().map(|(k, v)| (k.as_slice(), v.iter().map(|&s| self.codes.ids[s]).collect()))
    }

    fn check_query(&self, code: &BinaryCode, continuous: &[f64], radius: usize) -> Result<()> {
        if !self.is_empty() && code.len() != self.q() {
            return Err(Error::shape(format!("{}-bit query against a {}-bit index", code.len(), self.q())));
        }
        if !self.is_empty() && continuous.len() != self.q() {
            return Err(Error::shape("continuous query length differs from q"));
        }
        if radius > code.len() {
            return Err(Error::invalid(format!("radius {radius} exceeds code length {}", code.len())));
        }
        Ok(())
    }

    /// Slots whose codes are within `radius` of `code`. Probes the table by
    /// flipping every combination of at most `radius` bits; when that needs
    /// more probes than there are buckets, the buckets are scanned instead,
    /// which yields the same set.
    pub fn candidates(&self, code: &BinaryCode, radius: usize) -> Vec<usize> {
        let mut out = Vec::new();
        if self.is_empty() {
            return out;
        }
        if probe_count(self.q(), radius) > self.table.len() as u128 {
            for (key, slots) in &self.table {
                if hamming_words(key, code.words()) <= radius {
                    out.extend_from_slice(slots);
                }
            }
        } else {
            let mut key = code.words().to_vec();
            self.probe(&mut key, 0, radius, &mut out);
        }
        out.sort_unstable();
        out
    }

    fn probe(&self, key: &mut Vec<u64>, from: usize, left: usize, out: &mut Vec<usize>) {
        if let Some(slots) = self.table.get(key) {
            out.extend_from_slice(slots);
        }
        if left == 0 {
            return;
        }
        for bit in from..self.q() {
            key[bit / 64] ^= 1 << (bit % 64);
            self.probe(key, bit + 1, left - 1, out);
            key[bit / 64] ^= 1 << (bit % 64);
        }
    }

    /// Radius-limited lookup, re-ranked by Euclidean distance between relaxed
    /// codes (ties by id).
    pub fn query(&self, query: u32, code: &BinaryCode, continuous: &[f64], radius: usize) -> Result<QueryResult> {
        self.check_query(code, continuous, radius)?;
        let mut hits: Vec<Hit> = self
            .candidates(code, radius)
            .into_iter()
            .map(|s| Hit {
                id: self.codes.ids[s],
                hamming: hamming_words(self.codes.binary[s].words(), code.words()),
                distance: euclidean(&self.codes.continuous[s], continuous),
            })
            .collect();
        sort_hits(&mut hits);
        Ok(QueryResult { query, hits })
    }

    /// Every indexed item ordered by Hamming distance, then relaxed-code
    /// distance, then id.
    pub fn rank_all(&self, query: u32, code: &BinaryCode, continuous: &[f64]) -> Result<QueryResult> {
        self.check_query(code, continuous, 0)?;
        let mut hits: Vec<Hit> = (0..self.len())
            .map(|s| Hit {
                id: self.codes.ids[s],
                hamming: hamming_words(self.codes.binary[s].words(), code.words()),
                distance: euclidean(&self.codes.continuous[s], continuous),
            })
            .collect();
        hits.sort_by(|a, b| a.hamming.cmp(&b.hamming).then(a.distance.total_cmp(&b.distance)).then(a.id.cmp(&b.id)));
        Ok(QueryResult { query, hits })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.codes.to_bytes(INDEX_MAGIC)).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::build(CodeSet::from_bytes(&bytes, INDEX_MAGIC, "index")?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{self, Stream};
    use proptest::prelude::*;
    use rand::Rng as _;

    fn random_set(n: usize, q: usize, seed: u64) -> CodeSet {
        let mut r = rng::stream(seed, Stream::Synth);
        let cont: Vec<Vec<f64>> = (0..n).map(|_| (0..q).map(|_| r.random_range(-1.0..1.0)).collect()).collect();
        CodeSet::from_relaxed((0..n as u32).collect(), cont).unwrap()
    }

    fn naive_hamming(a: &BinaryCode, b: &BinaryCode) -> usize {
        (0..a.len()).filter(|&k| a.bit(k) != b.bit(k)).count()
    }

    #[test]
    fn empty_index() {
        let idx = HammingIndex::build(CodeSet::from_relaxed(vec![], vec![]).unwrap()).unwrap();
        let r = idx.query(0, &binarize(&[0.5; 8]), &[0.5; 8], 2).unwrap();
        assert!(r.hits.is_empty());
    }

    #[test]
    fn identical_codes_share_bucket() {
        let set = CodeSet::from_relaxed(vec![10, 11, 12], vec![vec![0.5, -0.5], vec![0.9, -0.1], vec![-0.3, 0.3]]).unwrap();
        let idx = HammingIndex::build(set.clone()).unwrap();
        let buckets: Vec<_> = idx.buckets().map(|(k, ids)| (k.to_vec(), ids)).collect();
        assert_eq!(buckets.len(), 2);
        assert!(buckets.iter().any(|(_, ids)| ids == &vec![10, 11]));
        let again: Vec<_> = HammingIndex::build(set).unwrap().buckets().map(|(k, ids)| (k.to_vec(), ids)).collect();
        assert_eq!(buckets, again);
    }

    #[test]
    fn duplicate_ids_rejected() {
        let set = CodeSet::from_relaxed(vec![1, 1], vec![vec![0.1], vec![0.2]]).unwrap();
        assert!(HammingIndex::build(set).is_err());
    }

    #[test]
    fn probe_counts() {
        assert_eq!(probe_count(8, 2), 37);
        assert_eq!(probe_count(96, 2), 4657);
        assert_eq!(probe_count(3, 5), 8);
    }

    #[test]
    fn exact_match_has_distance_zero() {
        let set = random_set(50, 16, 3);
        let idx = HammingIndex::build(set.clone()).unwrap();
        let r = idx.query(99, &set.binary[7], &set.continuous[7], 2).unwrap();
        let hit = r.hits.iter().find(|h| h.id == 7).unwrap();
        assert_eq!(hit.hamming, 0);
        assert_eq!(r.hits[0].id, 7);
    }

    #[test]
    fn pruning_matches_linear_filter() {
        let set = random_set(1000, 12, 5);
        let idx = HammingIndex::build(set.clone()).unwrap();
        let queries = random_set(30, 12, 6);
        for k in 0..queries.len() {
            let got: Vec<u32> = {
                let mut v: Vec<u32> = idx.query(0, &queries.binary[k], &queries.continuous[k], 2).unwrap().hits.iter().map(|h| h.id).collect();
                v.sort_unstable();
                v
            };
            let want: Vec<u32> = (0..set.len()).filter(|&i| naive_hamming(&set.binary[i], &queries.binary[k]) <= 2).map(|i| set.ids[i]).collect();
            assert_eq!(got, want);
        }
    }

    #[test]
    fn full_radius_returns_everything() {
        let set = random_set(40, 6, 8);
        let idx = HammingIndex::build(set.clone()).unwrap();
        assert_eq!(idx.query(0, &set.binary[0], &set.continuous[0], 6).unwrap().hits.len(), 40);
        assert!(idx.query(0, &set.binary[0], &set.continuous[0], 7).is_err());
    }

    #[test]
    fn complement_distance() {
        let a = BinaryCode::from_words(64, vec![0x0123_4567_89ab_cdef]).unwrap();
        let b = BinaryCode::from_words(64, vec![!0x0123_4567_89ab_cdef]).unwrap();
        assert_eq!(hamming_distance(&a, &b).unwrap(), 64);
        assert_eq!(hamming_distance(&a, &a).unwrap(), 0);
    }

    #[test]
    fn hamming_matches_bit_loop() {
        let set = random_set(2000, 70, 11);
        for k in 0..1000 {
            let (a, b) = (&set.binary[2 * k], &set.binary[2 * k + 1]);
            assert_eq!(hamming_distance(a, b).unwrap(), naive_hamming(a, b));
        }
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let set = random_set(20, 70, 2);
        set.save(dir.path().join("c.bin")).unwrap();
        assert_eq!(CodeSet::load(dir.path().join("c.bin")).unwrap(), set);
        let idx = HammingIndex::build(set.clone()).unwrap();
        idx.save(dir.path().join("i.bin")).unwrap();
        assert_eq!(HammingIndex::load(dir.path().join("i.bin")).unwrap().codes(), &set);
        assert!(CodeSet::load(dir.path().join("i.bin")).is_err());
    }

    fn code(bits: Vec<bool>) -> BinaryCode {
        BinaryCode::from_bits(&bits)
    }

    proptest! {
        #[test]
        fn hamming_is_a_metric(a in proptest::collection::vec(any::<bool>(), 40),
                               b in proptest::collection::vec(any::<bool>(), 40),
                               c in proptest::collection::vec(any::<bool>(), 40)) {
            let (a, b, c) = (code(a), code(b), code(c));
            let ab = hamming_distance(&a, &b).unwrap();
            prop_assert_eq!(ab, hamming_distance(&b, &a).unwrap());
            prop_assert_eq!(ab == 0, a == b);
            prop_assert!(hamming_distance(&a, &c).unwrap() <= ab + hamming_distance(&b, &c).unwrap());
        }

        #[test]
        fn query_order_is_total(seed in 0u64..200) {
            let set = random_set(60, 8, seed);
            let idx = HammingIndex::build(set.clone()).unwrap();
            let r = idx.query(0, &set.binary[0], &set.continuous[0], 2).unwrap();
            for w in r.hits.windows(2) {
                prop_assert!(w[0].distance < w[1].distance || (w[0].distance == w[1].distance && w[0].id < w[1].id));
                prop_assert!(w[0].hamming <= 2);
            }
        }
    }
}
