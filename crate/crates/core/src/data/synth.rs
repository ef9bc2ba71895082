//! Synthetic bimodal SAR-like scenes: contiguous water blobs from
//! quantile-thresholded low-frequency noise, backscatter drawn per mode in
//! dB, optional multiplicative speckle applied in linear power space.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Normal};
use serde::{Deserialize, Serialize};

use crate::data::raster::{Mask, Raster};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub water_mean_db: f64,
    pub water_std_db: f64,
    pub land_mean_db: f64,
    pub land_std_db: f64,
    /// Target water fraction in [0, 1].
    pub coverage: f64,
    /// Correlation length of the blob field, in pixels.
    pub blob_scale: f64,
    /// Speckle looks L; multiplicative Gamma(L, 1/L) noise when set.
    pub speckle_looks: Option<u32>,
    /// Fraction of the scene, in contiguous patches, whose backscatter is
    /// drawn from the opposite mode of its mask label — an irreducible error
    /// floor no segmenter can cross (flooded vegetation, wind-roughened
    /// water and the like look like the wrong class).
    pub label_noise: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            water_mean_db: -20.0,
            water_std_db: 2.5,
            land_mean_db: -7.0,
            land_std_db: 3.5,
            coverage: 0.35,
            blob_scale: 24.0,
            speckle_looks: None,
            label_noise: 0.0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.coverage) {
            return Err(Error::Config(format!(
                "coverage must be in [0, 1], got {}",
                self.coverage
            )));
        }
        if self.blob_scale < 1.0 {
            return Err(Error::Config("blob_scale must be >= 1".into()));
        }
        if self.water_std_db <= 0.0 || self.land_std_db <= 0.0 {
            return Err(Error::Config("mode standard deviations must be > 0".into()));
        }
        if matches!(self.speckle_looks, Some(0)) {
            return Err(Error::Config("speckle_looks must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.label_noise) {
            return Err(Error::Config(format!(
                "label_noise must be in [0, 1), got {}",
                self.label_noise
            )));
        }
        Ok(())
    }
}

/// Smooth random field: white noise on a coarse grid, bilinearly upsampled.
fn blob_field(width: usize, height: usize, scale: f64, rng: &mut ChaCha8Rng) -> Vec<f32> {
    let gw = (width as f64 / scale).ceil() as usize + 2;
    let gh = (height as f64 / scale).ceil() as usize + 2;
    let coarse: Vec<f64> = (0..gw * gh).map(|_| rng.random::<f64>() - 0.5).collect();
    let mut field = vec![0f32; width * height];
    for r in 0..height {
        let fy = r as f64 / scale;
        let y0 = fy.floor() as usize;
        let ty = fy - y0 as f64;
        for c in 0..width {
            let fx = c as f64 / scale;
            let x0 = fx.floor() as usize;
            let tx = fx - x0 as f64;
            let v00 = coarse[y0 * gw + x0];
            let v01 = coarse[y0 * gw + x0 + 1];
            let v10 = coarse[(y0 + 1) * gw + x0];
            let v11 = coarse[(y0 + 1) * gw + x0 + 1];
            let top = v00 * (1.0 - tx) + v01 * tx;
            let bot = v10 * (1.0 - tx) + v11 * tx;
            field[r * width + c] = (top * (1.0 - ty) + bot * ty) as f32;
        }
    }
    field
}

/// Generate a scene and its water mask. Bit-reproducible for a fixed seed.
pub fn synth_scene(
    width: usize,
    height: usize,
    cfg: &SynthConfig,
    seed: u64,
) -> Result<(Raster, Mask)> {
    cfg.validate()?;
    if width == 0 || height == 0 {
        return Err(Error::Config("scene extents must be positive".into()));
    }
    let n = width * height;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let field = blob_field(width, height, cfg.blob_scale, &mut rng);
    let water: Vec<bool> = if cfg.coverage == 0.0 {
        vec![false; n]
    } else if cfg.coverage == 1.0 {
        vec![true; n]
    } else {
        let k = ((cfg.coverage * n as f64).round() as usize).clamp(1, n - 1);
        let mut sorted = field.clone();
        let (_, thr, _) = sorted.select_nth_unstable_by(k, |a, b| a.total_cmp(b));
        let thr = *thr;
        field.iter().map(|&v| v < thr).collect()
    };

    // Contiguous patches whose observed backscatter contradicts the label.
    let contradicted: Vec<bool> = if cfg.label_noise > 0.0 {
        let field = blob_field(width, height, cfg.blob_scale, &mut rng);
        let k = ((cfg.label_noise * n as f64).round() as usize).clamp(1, n - 1);
        let mut sorted = field.clone();
        let (_, thr, _) = sorted.select_nth_unstable_by(k, |a, b| a.total_cmp(b));
        let thr = *thr;
        field.iter().map(|&v| v < thr).collect()
    } else {
        vec![false; n]
    };

    let water_dist = Normal::new(cfg.water_mean_db, cfg.water_std_db)
        .map_err(|e| Error::Config(format!("water mode: {e}")))?;
    let land_dist = Normal::new(cfg.land_mean_db, cfg.land_std_db)
        .map_err(|e| Error::Config(format!("land mode: {e}")))?;
    let mut values: Vec<f32> = water
        .iter()
        .zip(&contradicted)
        .map(|(&w, &flip)| {
            let looks_like_water = w != flip;
            let v = if looks_like_water {
                water_dist.sample(&mut rng)
            } else {
                land_dist.sample(&mut rng)
            };
            v as f32
        })
        .collect();

    if let Some(looks) = cfg.speckle_looks {
        let gamma = Gamma::new(looks as f64, 1.0 / looks as f64)
            .map_err(|e| Error::Config(format!("speckle: {e}")))?;
        for v in values.iter_mut() {
            let linear = 10f64.powf(*v as f64 / 10.0) * gamma.sample(&mut rng).max(1e-12);
            *v = (10.0 * linear.log10()) as f32;
        }
    }

    Ok((
        Raster {
            width,
            height,
            values,
            nodata_mask: None,
        },
        Mask {
            width,
            height,
            data: water.iter().map(|&w| u8::from(w)).collect(),
        },
    ))
}
