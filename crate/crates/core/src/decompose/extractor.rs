//! Cue and global-impression feature extraction.
//!
//! The default extractor is a frozen random linear projection over
//! mean-pooled pixel grids: 8x8 RGB cells per region (192 inputs) and 16x16
//! cells for the whole card (768 inputs). Pixel intensities are mapped to
//! `[-1, 1]` before projecting. A precomputed feature file can stand in for
//! it when features come from an external network.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::regions::{cue_tags, CueTag, RegionSet};
use crate::error::{Error, Result};
use crate::render::{ImpressionCard, RgbImage};
use crate::tensor::Tensor;

pub const REGION_GRID: usize = 8;
pub const GLOBAL_GRID: usize = 16;
pub const FEATURE_MAGIC: &[u8; 4] = b"IMFT";
pub const FEATURE_VERSION: u32 = 1;

/// The ordered cue vectors of one card, `|O| x d_c`.
#[derive(Clone, Debug, PartialEq)]
pub struct CueMemory {
    pub vectors: Tensor<f32>,
    pub tags: Vec<CueTag>,
}

impl CueMemory {
    pub fn len(&self) -> usize {
        self.tags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tags.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.vectors.cols()
    }
}

/// Whole-card embedding `o*`, `1 x d_g`.
#[derive(Clone, Debug, PartialEq)]
pub struct GlobalImpression(pub Tensor<f32>);

/// Mean of each cell of a `grid x grid` partition, RGB interleaved, scaled to `[-1, 1]`.
pub fn pooled_grid(img: &RgbImage, grid: usize) -> Vec<f32> {
    let (w, h) = (img.width(), img.height());
    let mut out = Vec::with_capacity(grid * grid * 3);
    if w == 0 || h == 0 {
        out.resize(grid * grid * 3, 1.0);
        return out;
    }
    let bounds = |i: usize, n: usize| {
        let a = (i * n / grid).min(n - 1);
        let b = ((i + 1) * n / grid).max(a + 1).min(n);
        (a, b)
    };
    for gy in 0..grid {
        let (y0, y1) = bounds(gy, h);
        for gx in 0..grid {
            let (x0, x1) = bounds(gx, w);
            let mut acc = [0u64; 3];
            for y in y0..y1 {
                for x in x0..x1 {
                    let p = img.pixel(x, y);
                    for c in 0..3 {
                        acc[c] += p[c] as u64;
                    }
                }
            }
            let n = ((y1 - y0) * (x1 - x0)) as f64;
            for a in acc {
                out.push((2.0 * (a as f64 / n) / 255.0 - 1.0) as f32);
            }
        }
    }
    out
}

/// Frozen seeded projections for region cues and the global impression.
#[derive(Clone, Debug)]
pub struct FrozenProjection {
    pub seed: u64,
    region: Tensor<f32>,
    global: Tensor<f32>,
}

impl FrozenProjection {
    pub fn new(seed: u64, d_c: usize, d_g: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut gaussian = |rows: usize, cols: usize| {
            let scale = 1.0 / (rows as f64).sqrt();
            let data = (0..rows * cols)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    (z * scale) as f32
                })
                .collect();
            Tensor::new(vec![rows, cols], data).expect("shape")
        };
        let region = gaussian(REGION_GRID * REGION_GRID * 3, d_c);
        let global = gaussian(GLOBAL_GRID * GLOBAL_GRID * 3, d_g);
        Self { seed, region, global }
    }

    pub fn region_dim(&self) -> usize {
        self.region.cols()
    }

    pub fn global_dim(&self) -> usize {
        self.global.cols()
    }

    fn project(inputs: Vec<f32>, rows: usize, w: &Tensor<f32>) -> Tensor<f32> {
        let cols = inputs.len() / rows;
        Tensor::new(vec![rows, cols], inputs)
            .and_then(|x| x.matmul(w))
            .expect("grid size matches projection")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NewsFeatures {
    pub cues: Tensor<f32>,
    pub global: Tensor<f32>,
}

/// Features read from an `IMFT` file, keyed by news id.
///
/// Layout (little-endian): `"IMFT" | version u32 | d_c u32 | d_g u32 | count u32`,
/// then per news `id_len u16 | id | n_cues u16 | cues f32 * n_cues*d_c | global f32 * d_g`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct FeatureFile {
    pub d_c: usize,
    pub d_g: usize,
    /// Insertion order is kept so files are written back byte-identically.
    pub order: Vec<String>,
    pub items: HashMap<String, NewsFeatures>,
}

impl FeatureFile {
    pub fn new(d_c: usize, d_g: usize) -> Self {
        Self {
            d_c,
            d_g,
            ..Self::default()
        }
    }

    pub fn insert(&mut self, id: String, f: NewsFeatures) -> Result<()> {
        if f.cues.cols() != self.d_c || f.global.len() != self.d_g {
            return Err(Error::Dimension(format!(
                "features for {id} are {:?}/{:?}, file holds d_c={} d_g={}",
                f.cues.shape(),
                f.global.shape(),
                self.d_c,
                self.d_g
            )));
        }
        if self.items.insert(id.clone(), f).is_none() {
            self.order.push(id);
        }
        Ok(())
    }

    pub fn write<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        w.write_all(FEATURE_MAGIC)?;
        for v in [FEATURE_VERSION, self.d_c as u32, self.d_g as u32, self.order.len() as u32] {
            w.write_all(&v.to_le_bytes())?;
        }
        for id in &self.order {
            let f = &self.items[id];
            w.write_all(&(id.len() as u16).to_le_bytes())?;
            w.write_all(id.as_bytes())?;
            w.write_all(&(f.cues.rows() as u16).to_le_bytes())?;
            for v in f.cues.data().iter().chain(f.global.data()) {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read<R: Read>(mut r: R) -> Result<Self> {
        let bad = |d: &str| Error::format("feature file", d.to_string());
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(|_| bad("truncated header"))?;
        if &magic != FEATURE_MAGIC {
            return Err(bad("bad magic"));
        }
        let mut u32s = [0u32; 4];
        for v in &mut u32s {
            let mut b = [0u8; 4];
            r.read_exact(&mut b).map_err(|_| bad("truncated header"))?;
            *v = u32::from_le_bytes(b);
        }
        let [version, d_c, d_g, count] = u32s;
        if version != FEATURE_VERSION {
            return Err(bad(&format!("unsupported version {version}")));
        }
        let (d_c, d_g) = (d_c as usize, d_g as usize);
        let mut file = FeatureFile::new(d_c, d_g);
        let read_f32s = |r: &mut R, n: usize| -> Result<Vec<f32>> {
            let mut buf = vec![0u8; n * 4];
            r.read_exact(&mut buf).map_err(|_| bad("truncated vectors"))?;
            Ok(buf.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect())
        };
        for _ in 0..count {
            let mut b2 = [0u8; 2];
            r.read_exact(&mut b2).map_err(|_| bad("truncated entry"))?;
            let mut id = vec![0u8; u16::from_le_bytes(b2) as usize];
            r.read_exact(&mut id).map_err(|_| bad("truncated id"))?;
            let id = String::from_utf8(id).map_err(|_| bad("id is not utf-8"))?;
            r.read_exact(&mut b2).map_err(|_| bad("truncated cue count"))?;
            let n_cues = u16::from_le_bytes(b2) as usize;
            let cues = Tensor::new(vec![n_cues, d_c], read_f32s(&mut r, n_cues * d_c)?)?;
            let global = Tensor::row(read_f32s(&mut r, d_g)?);
            file.insert(id, NewsFeatures { cues, global })?;
        }
        Ok(file)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read(std::io::BufReader::new(f))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(f);
        self.write(&mut w).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }
}

#[derive(Clone, Debug)]
pub enum FeatureExtractor {
    Projection(FrozenProjection),
    Precomputed(FeatureFile),
}

impl FeatureExtractor {
    pub fn projection(seed: u64, d_c: usize, d_g: usize) -> Self {
        Self::Projection(FrozenProjection::new(seed, d_c, d_g))
    }

    pub fn region_dim(&self) -> usize {
        match self {
            Self::Projection(p) => p.region_dim(),
            Self::Precomputed(f) => f.d_c,
        }
    }

    pub fn global_dim(&self) -> usize {
        match self {
            Self::Projection(p) => p.global_dim(),
            Self::Precomputed(f) => f.d_g,
        }
    }

    fn lookup(&self, news_id: &str) -> Result<&NewsFeatures> {
        match self {
            Self::Precomputed(f) => f.items.get(news_id).ok_or_else(|| Error::FeatureMissing(news_id.to_string())),
            Self::Projection(_) => unreachable!("lookup only for precomputed features"),
        }
    }

    /// Cue vectors in region order: title words, image grid, category.
    pub fn extract_cues(&self, regions: &RegionSet) -> Result<CueMemory> {
        let tags: Vec<CueTag> = regions.iter().map(|r| r.tag).collect();
        match self {
            Self::Projection(p) => {
                let mut inputs = Vec::with_capacity(tags.len() * REGION_GRID * REGION_GRID * 3);
                for r in regions.iter() {
                    inputs.extend(pooled_grid(&r.crop, REGION_GRID));
                }
                let vectors = FrozenProjection::project(inputs, tags.len(), &p.region);
                Ok(CueMemory { vectors, tags })
            }
            Self::Precomputed(_) => {
                let f = self.lookup(&regions.news_id)?;
                let tags = if f.cues.rows() == tags.len() {
                    tags
                } else {
                    cue_tags(f.cues.rows().saturating_sub(10))
                };
                Ok(CueMemory {
                    vectors: f.cues.clone(),
                    tags,
                })
            }
        }
    }

    pub fn extract_global(&self, card: &ImpressionCard) -> Result<GlobalImpression> {
        match self {
            Self::Projection(p) => {
                let inputs = pooled_grid(&card.pixels, GLOBAL_GRID);
                Ok(GlobalImpression(FrozenProjection::project(inputs, 1, &p.global)))
            }
            Self::Precomputed(_) => Ok(GlobalImpression(self.lookup(&card.news_id)?.global.clone())),
        }
    }
}
