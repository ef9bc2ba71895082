//! Raster ingestion, tiling, standardization, dataset splitting, and
//! synthetic scene generation.

mod raster;
mod synth;

pub use raster::{
    load_mask_pgm, load_raster, save_mask_pgm, save_raster, Mask, Raster, DEFAULT_NODATA,
};
pub use synth::{synth_scene, SynthConfig};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One standardized training sample: a square image crop and its mask.
#[derive(Clone, Debug)]
pub struct Tile {
    pub size: usize,
    pub image: Vec<f32>,
    pub mask: Vec<u8>,
    /// (row, col) of the top-left corner in the parent raster.
    pub origin: (usize, usize),
    /// Image quarter of the tile center: 1 = top-left, 2 = top-right,
    /// 3 = bottom-left, 4 = bottom-right.
    pub zone: u8,
    pub water_fraction: f32,
}

/// Pixel mean and standard deviation computed on the training subset only.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StandardizationStats {
    pub mu: f64,
    pub sigma: f64,
}

/// Cut the raster and mask into non-overlapping `t`×`t` tiles from (0, 0).
/// Edge remainders are discarded, as is any tile touching a nodata pixel.
pub fn tile(raster: &Raster, mask: &Mask, t: usize) -> Result<Vec<Tile>> {
    if t < 2 {
        return Err(Error::Config(format!("tile size must be >= 2, got {t}")));
    }
    if raster.width != mask.width || raster.height != mask.height {
        return Err(Error::Dimension(format!(
            "raster {}x{} vs mask {}x{}",
            raster.width, raster.height, mask.width, mask.height
        )));
    }
    let rows = raster.height / t;
    let cols = raster.width / t;
    let mut tiles = Vec::with_capacity(rows * cols);
    for tr in 0..rows {
        'next_tile: for tc in 0..cols {
            let (r0, c0) = (tr * t, tc * t);
            let mut image = Vec::with_capacity(t * t);
            let mut mask_data = Vec::with_capacity(t * t);
            let mut water = 0usize;
            for r in r0..r0 + t {
                let row = r * raster.width + c0;
                if let Some(nd) = &raster.nodata_mask {
                    if nd[row..row + t].iter().any(|&b| b) {
                        continue 'next_tile;
                    }
                }
                image.extend_from_slice(&raster.values[row..row + t]);
                let mrow = &mask.data[row..row + t];
                water += mrow.iter().filter(|&&v| v > 0).count();
                mask_data.extend_from_slice(mrow);
            }
            let center = (r0 + t / 2, c0 + t / 2);
            let bottom = center.0 * 2 >= raster.height;
            let right = center.1 * 2 >= raster.width;
            let zone = match (bottom, right) {
                (false, false) => 1,
                (false, true) => 2,
                (true, false) => 3,
                (true, true) => 4,
            };
            tiles.push(Tile {
                size: t,
                image,
                mask: mask_data,
                origin: (r0, c0),
                zone,
                water_fraction: water as f32 / (t * t) as f32,
            });
        }
    }
    Ok(tiles)
}

/// Compute μ/σ over the training tiles' pixels (population σ) and apply the
/// same transform to every tile.
pub fn standardize(tiles: &mut [Tile], train_idx: &[usize]) -> Result<StandardizationStats> {
    if train_idx.is_empty() {
        return Err(Error::Data("standardize needs a non-empty training subset".into()));
    }
    let mut sum = 0.0f64;
    let mut count = 0usize;
    for &i in train_idx {
        for &v in &tiles[i].image {
            sum += v as f64;
        }
        count += tiles[i].image.len();
    }
    let mu = sum / count as f64;
    let mut sse = 0.0f64;
    for &i in train_idx {
        for &v in &tiles[i].image {
            let d = v as f64 - mu;
            sse += d * d;
        }
    }
    let sigma = (sse / count as f64).sqrt();
    if sigma == 0.0 {
        return Err(Error::Data("training pixels have zero variance".into()));
    }
    let stats = StandardizationStats { mu, sigma };
    apply_standardization(tiles, &stats);
    Ok(stats)
}

pub fn apply_standardization(tiles: &mut [Tile], stats: &StandardizationStats) {
    for tile in tiles.iter_mut() {
        standardize_values(&mut tile.image, stats);
    }
}

pub fn standardize_values(values: &mut [f32], stats: &StandardizationStats) {
    let (mu, sigma) = (stats.mu as f32, stats.sigma as f32);
    for v in values.iter_mut() {
        *v = (*v - mu) / sigma;
    }
}

/// Disjoint, exhaustive split of tile indices.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SplitPlan {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
    pub seed: u64,
    /// Water-fraction stratum edges used to bucket tiles (empty for
    /// zone-based folds).
    pub strata_edges: Vec<f64>,
}

impl SplitPlan {
    /// Every tile index appears in exactly one partition.
    pub fn validate(&self, tile_count: usize) -> Result<()> {
        let mut seen = vec![false; tile_count];
        for &i in self.train.iter().chain(&self.val).chain(&self.test) {
            if i >= tile_count {
                return Err(Error::Contract(format!("split references tile {i} of {tile_count}")));
            }
            if seen[i] {
                return Err(Error::Contract(format!("tile {i} appears in two partitions")));
            }
            seen[i] = true;
        }
        if seen.iter().any(|&b| !b) {
            return Err(Error::Contract("split does not cover all tiles".into()));
        }
        Ok(())
    }
}

pub const STRATA_EDGES: [f64; 6] = [0.0, 0.01, 0.1, 0.3, 0.6, 1.0];

/// Largest-remainder allocation of `n` items to the three fractions; each
/// bucket lands within one item of the exact share.
fn allocate(n: usize, fractions: (f64, f64, f64)) -> [usize; 3] {
    let raw = [
        n as f64 * fractions.0,
        n as f64 * fractions.1,
        n as f64 * fractions.2,
    ];
    let mut counts = [raw[0] as usize, raw[1] as usize, raw[2] as usize];
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..3).collect();
    order.sort_by(|&a, &b| {
        let fa = raw[a] - raw[a].floor();
        let fb = raw[b] - raw[b].floor();
        fb.partial_cmp(&fa).unwrap().then(a.cmp(&b))
    });
    for i in 0..n - assigned {
        counts[order[i % 3]] += 1;
    }
    counts
}

/// Seeded stratified split over water-fraction bins. Strata with fewer than
/// 3 tiles merge into their lower neighbor (the next one up when none exists
/// below).
pub fn stratified_split(
    tiles: &[Tile],
    fractions: (f64, f64, f64),
    seed: u64,
) -> Result<SplitPlan> {
    if tiles.len() < 10 {
        return Err(Error::Data(format!(
            "stratified split needs at least 10 tiles, got {}",
            tiles.len()
        )));
    }
    let total = fractions.0 + fractions.1 + fractions.2;
    if (total - 1.0).abs() > 1e-9 || fractions.0 <= 0.0 {
        return Err(Error::Config(format!("split fractions must sum to 1, got {total}")));
    }

    let mut strata: Vec<Vec<usize>> = vec![Vec::new(); STRATA_EDGES.len() - 1];
    for (i, t) in tiles.iter().enumerate() {
        let wf = t.water_fraction as f64;
        let mut bin = STRATA_EDGES.len() - 2;
        for b in 0..STRATA_EDGES.len() - 1 {
            if wf < STRATA_EDGES[b + 1] {
                bin = b;
                break;
            }
        }
        strata[bin].push(i);
    }
    // Merge undersized strata into a neighbor.
    loop {
        let Some(small) = strata.iter().position(|s| !s.is_empty() && s.len() < 3) else {
            break;
        };
        if strata.len() == 1 {
            break;
        }
        let into = if small > 0 { small - 1 } else { small + 1 };
        let moved = std::mem::take(&mut strata[small]);
        strata[into].extend(moved);
        strata.remove(small);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut plan = SplitPlan {
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
        seed,
        strata_edges: STRATA_EDGES.to_vec(),
    };
    for stratum in strata.iter_mut() {
        stratum.shuffle(&mut rng);
        let [n_train, n_val, _] = allocate(stratum.len(), fractions);
        plan.train.extend(&stratum[..n_train]);
        plan.val.extend(&stratum[n_train..n_train + n_val]);
        plan.test.extend(&stratum[n_train + n_val..]);
    }
    plan.train.sort_unstable();
    plan.val.sort_unstable();
    plan.test.sort_unstable();
    plan.validate(tiles.len())?;
    Ok(plan)
}

/// Four zone-based folds: fold i tests on zone i+1 and trains on the other
/// three zones. Validation carving and per-fold standardization are the
/// trainer's job.
pub fn zone_folds(tiles: &[Tile]) -> Result<Vec<SplitPlan>> {
    for zone in 1..=4u8 {
        if !tiles.iter().any(|t| t.zone == zone) {
            return Err(Error::Config(format!("zone {zone} has no tiles")));
        }
    }
    let mut folds = Vec::with_capacity(4);
    for zone in 1..=4u8 {
        let mut plan = SplitPlan {
            train: Vec::new(),
            val: Vec::new(),
            test: Vec::new(),
            seed: 0,
            strata_edges: Vec::new(),
        };
        for (i, t) in tiles.iter().enumerate() {
            if t.zone == zone {
                plan.test.push(i);
            } else {
                plan.train.push(i);
            }
        }
        plan.validate(tiles.len())?;
        folds.push(plan);
    }
    Ok(folds)
}
