//! The four handcrafted views: RGB histogram, HSV histogram, LBP texture and
//! HOG.

pub mod color;
pub mod hog;
pub mod lbp;

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{ImageRecord, SIDE};

pub use color::{hsv_histogram, rgb_histogram};
pub use hog::hog_descriptor;
pub use lbp::lbp_descriptor;

pub const NUM_VIEWS: usize = 4;
pub const VIEW_NAMES: [&str; NUM_VIEWS] = ["rgb", "hsv", "lbp", "hog"];

/// Per-view descriptor lengths for 32x32 input.
pub fn view_dims() -> [usize; NUM_VIEWS] {
    [color::RGB_DIM, color::HSV_DIM, lbp::LBP_DIM, hog::hog_dim(SIDE, SIDE)]
}

/// All view descriptors of one image.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureViewSet {
    pub id: u32,
    pub views: Vec<Vec<f64>>,
}

impl FeatureViewSet {
    pub fn dims(&self) -> Vec<usize> {
        self.views.iter().map(Vec::len).collect()
    }

    /// The views joined end to end, the input of the basic head.
    pub fn concatenated(&self) -> Vec<f64> {
        self.views.concat()
    }
}

pub fn extract(record: &ImageRecord) -> FeatureViewSet {
    FeatureViewSet {
        id: record.id,
        views: vec![
            rgb_histogram(record),
            hsv_histogram(record),
            lbp_descriptor(record),
            hog_descriptor(record),
        ],
    }
}

/// Extracts every view for every record, preserving order.
pub fn extract_all(records: &[ImageRecord]) -> Result<Vec<FeatureViewSet>> {
    if records.is_empty() {
        return Err(Error::invalid("extract_all: nonempty required"));
    }
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        Ok(records.par_iter().map(extract).collect())
    }
    #[cfg(not(feature = "parallel"))]
    {
        Ok(records.iter().map(extract).collect())
    }
}

/// Per-dimension z-scoring fitted on training features, one per view.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<Vec<f64>>,
    pub scale: Vec<Vec<f64>>,
}

impl Standardizer {
    pub fn fit(sets: &[FeatureViewSet]) -> Result<Self> {
        let first = sets.first().ok_or_else(|| Error::invalid("cannot fit a standardizer on no features"))?;
        let n = sets.len() as f64;
        let mut mean: Vec<Vec<f64>> = first.views.iter().map(|v| vec![0.0; v.len()]).collect();
        let mut scale = mean.clone();
        for s in sets {
            if s.dims() != first.dims() {
                return Err(Error::shape(format!("feature set {} has dims {:?}", s.id, s.dims())));
            }
            for (m, v) in s.views.iter().enumerate() {
                for (acc, x) in mean[m].iter_mut().zip(v) {
                    *acc += x;
                }
            }
        }
        mean.iter_mut().flatten().for_each(|x| *x /= n);
        for s in sets {
            for (m, v) in s.views.iter().enumerate() {
                for ((acc, x), mu) in scale[m].iter_mut().zip(v).zip(&mean[m]) {
                    *acc += (x - mu) * (x - mu);
                }
            }
        }
        for x in scale.iter_mut().flatten() {
            let sd = (*x / n).sqrt();
            *x = if sd > 1e-9 { 1.0 / sd } else { 1.0 };
        }
        Ok(Self { mean, scale })
    }

    pub fn transform(&self, set: &FeatureViewSet) -> FeatureViewSet {
        let views = set
            .views
            .iter()
            .enumerate()
            .map(|(m, v)| v.iter().zip(&self.mean[m]).zip(&self.scale[m]).map(|((x, mu), s)| (x - mu) * s).collect())
            .collect();
        FeatureViewSet { id: set.id, views }
    }
}

const CACHE_MAGIC: &[u8; 4] = b"MVHF";
const CACHE_VERSION: u32 = 1;

/// Writes a feature cache.
///
/// Layout, little-endian: magic `MVHF`, u32 version, u32 M, M x u32 dims,
/// u64 N, N x u32 ids, N x u8 labels, then N rows of `sum(dims)` f32 values
/// (views concatenated in order).
pub fn write_cache(path: impl AsRef<Path>, sets: &[FeatureViewSet], labels: &[u8]) -> Result<()> {
    let path = path.as_ref();
    if sets.len() != labels.len() {
        return Err(Error::shape("feature cache: one label per feature set required"));
    }
    let dims = sets.first().map(|s| s.dims()).unwrap_or_else(|| view_dims().to_vec());
    let mut buf = Vec::new();
    buf.extend_from_slice(CACHE_MAGIC);
    buf.extend_from_slice(&CACHE_VERSION.to_le_bytes());
    buf.extend_from_slice(&(dims.len() as u32).to_le_bytes());
    for d in &dims {
        buf.extend_from_slice(&(*d as u32).to_le_bytes());
    }
    buf.extend_from_slice(&(sets.len() as u64).to_le_bytes());
    for s in sets {
        buf.extend_from_slice(&s.id.to_le_bytes());
    }
    buf.extend_from_slice(labels);
    for s in sets {
        if s.dims() != dims {
            return Err(Error::shape(format!("feature set {} has dims {:?}, expected {dims:?}", s.id, s.dims())));
        }
        for x in s.views.iter().flatten() {
            buf.extend_from_slice(&(*x as f32).to_le_bytes());
        }
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))
}

/// Reads a feature cache written by [`write_cache`].
pub fn read_cache(path: impl AsRef<Path>) -> Result<(Vec<FeatureViewSet>, Vec<u8>)> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    let mut r = crate::binio::Reader::new(&bytes);
    if r.take(4)? != CACHE_MAGIC {
        return Err(Error::Format("not a feature cache".into()));
    }
    let version = r.u32()?;
    if version != CACHE_VERSION {
        return Err(Error::Format(format!("feature cache version {version}, expected {CACHE_VERSION}")));
    }
    let m = r.u32()? as usize;
    let dims: Vec<usize> = (0..m).map(|_| r.u32().map(|d| d as usize)).collect::<Result<_>>()?;
    let n = r.u64()? as usize;
    let ids: Vec<u32> = (0..n).map(|_| r.u32()).collect::<Result<_>>()?;
    let labels = r.take(n)?.to_vec();
    let mut sets = Vec::with_capacity(n);
    for id in ids {
        let views = dims
            .iter()
            .map(|&d| (0..d).map(|_| r.f32().map(f64::from)).collect::<Result<Vec<_>>>())
            .collect::<Result<Vec<_>>>()?;
        sets.push(FeatureViewSet { id, views });
    }
    r.finish()?;
    Ok((sets, labels))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{PIXELS, PLANE};
    use rand::seq::SliceRandom;
    use rand::SeedableRng;

    fn textured(id: u32) -> ImageRecord {
        let inter: Vec<u8> = (0..PIXELS)
            .map(|k| {
                let p = k / 3;
                let (x, y) = (p % 32, p / 32);
                (((x * 8) ^ ((y * 5) + k % 3 * 40 + id as usize)) % 256) as u8
            })
            .collect();
        ImageRecord::from_interleaved(id, 1, &inter).unwrap()
    }

    #[test]
    fn extract_all_shapes_order_and_errors() {
        let recs: Vec<_> = (0..3).map(textured).collect();
        let sets = extract_all(&recs).unwrap();
        assert_eq!(sets.len(), 3);
        for (s, r) in sets.iter().zip(&recs) {
            assert_eq!(s.dims(), vec![48, 34, 59, 324]);
            assert_eq!(s.id, r.id);
            assert!(s.views.iter().flatten().all(|x| x.is_finite() && *x >= 0.0));
            for v in &s.views[..3] {
                assert!((v.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            }
        }
        assert_eq!(extract_all(&[recs[0].clone(), recs[0].clone()]).unwrap()[1], sets[0]);
        assert!(extract_all(&[]).unwrap_err().to_string().contains("nonempty required"));
    }

    #[test]
    fn histograms_ignore_pixel_order_but_hog_does_not() {
        let rec = textured(3);
        let mut order: Vec<usize> = (0..PLANE).collect();
        order.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(4));
        let inter: Vec<u8> = order.iter().flat_map(|&i| rec.rgb(i % 32, i / 32)).collect();
        let shuffled = ImageRecord::from_interleaved(3, 1, &inter).unwrap();
        let (a, b) = (extract(&rec), extract(&shuffled));
        assert_eq!(a.views[0], b.views[0]);
        assert_eq!(a.views[1], b.views[1]);
        assert_ne!(a.views[3], b.views[3]);
    }

    #[test]
    fn cache_round_trip() {
        let recs: Vec<_> = (0..4).map(textured).collect();
        let sets = extract_all(&recs).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.bin");
        write_cache(&p, &sets, &[1, 2, 3, 4]).unwrap();
        let (back, labels) = read_cache(&p).unwrap();
        assert_eq!(labels, vec![1, 2, 3, 4]);
        for (a, b) in sets.iter().zip(&back) {
            assert_eq!(a.id, b.id);
            for (x, y) in a.views.iter().flatten().zip(b.views.iter().flatten()) {
                assert_eq!(*x as f32, *y as f32);
            }
        }
    }

    #[test]
    fn standardizer_centres_and_scales() {
        let recs: Vec<_> = (0..20).map(textured).collect();
        let sets = extract_all(&recs).unwrap();
        let st = Standardizer::fit(&sets).unwrap();
        let z: Vec<_> = sets.iter().map(|s| st.transform(s)).collect();
        for m in 0..NUM_VIEWS {
            for d in 0..z[0].views[m].len() {
                let mean: f64 = z.iter().map(|s| s.views[m][d]).sum::<f64>() / 20.0;
                assert!(mean.abs() < 1e-9);
            }
        }
    }
}
