//! Resize → random resized crop → horizontal flip → grayscale → normalize.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Image, PairedDataset, PairedSample};
use crate::error::{Error, Result};
use crate::model::Modality;
use crate::rng::{derive_seed, rng_from};

/// Per-channel mean and standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub mean: Vec<f32>,
    pub std: Vec<f32>,
}

impl ChannelStats {
    pub fn imagenet() -> Self {
        Self {
            mean: vec![0.485, 0.456, 0.406],
            std: vec![0.229, 0.224, 0.225],
        }
    }

    /// Statistics over every pixel of `images`, per channel.
    pub fn compute<'a>(images: impl IntoIterator<Item = &'a Image>) -> Result<Self> {
        let mut sum: Vec<f64> = Vec::new();
        let mut sq: Vec<f64> = Vec::new();
        let mut count = 0usize;
        for img in images {
            if sum.is_empty() {
                sum = vec![0.0; img.channels];
                sq = vec![0.0; img.channels];
            } else if sum.len() != img.channels {
                return Err(Error::DatasetFormat("images disagree on channel count".into()));
            }
            for c in 0..img.channels {
                for &v in img.plane(c) {
                    sum[c] += v as f64;
                    sq[c] += (v as f64) * (v as f64);
                }
            }
            count += img.height * img.width;
        }
        if count == 0 {
            return Err(Error::DatasetFormat("no images to compute statistics from".into()));
        }
        let n = count as f64;
        let mean: Vec<f32> = sum.iter().map(|s| (s / n) as f32).collect();
        let std = sum
            .iter()
            .zip(&sq)
            .map(|(s, q)| ((q / n - (s / n).powi(2)).max(0.0).sqrt().max(1e-3)) as f32)
            .collect();
        Ok(Self { mean, std })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Normalization {
    /// Resolved from the training data by [`AugmentationConfig::resolved_for`].
    Dataset,
    Fixed(ChannelStats),
    Identity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentationConfig {
    pub resize_to: usize,
    pub crop_to: usize,
    /// Range of the crop's area fraction.
    pub crop_scale: [f64; 2],
    pub hflip_prob: f64,
    pub grayscale_prob: f64,
    pub normalization: Normalization,
    /// Grasp data never gets the grayscale transform.
    pub grasp_mode: bool,
}

impl Default for AugmentationConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl AugmentationConfig {
    /// 256 → 224 geometry.
    pub fn paper_scale() -> Self {
        Self {
            resize_to: 256,
            crop_to: 224,
            crop_scale: [0.2, 1.0],
            hflip_prob: 0.5,
            grayscale_prob: 0.2,
            normalization: Normalization::Dataset,
            grasp_mode: false,
        }
    }

    /// Same pipeline with 36 → 32 geometry.
    pub fn desk() -> Self {
        Self {
            resize_to: 36,
            crop_to: 32,
            ..Self::paper_scale()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("augmentation: {m}")));
        if self.crop_to == 0 || self.crop_to > self.resize_to {
            return bad("need 0 < crop_to <= resize_to");
        }
        let [lo, hi] = self.crop_scale;
        if !(lo > 0.0 && lo <= hi && hi <= 1.0) {
            return bad("crop_scale must satisfy 0 < low <= high <= 1");
        }
        for (name, p) in [("hflip_prob", self.hflip_prob), ("grayscale_prob", self.grayscale_prob)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("augmentation: {name} = {p} is not a probability")));
            }
        }
        if let Normalization::Fixed(s) = &self.normalization {
            if s.mean.len() != s.std.len() || s.std.iter().any(|&v| !(v > 0.0)) {
                return bad("normalization needs one positive std per mean");
            }
        }
        Ok(())
    }

    pub fn effective_grayscale_prob(&self) -> f64 {
        if self.grasp_mode {
            0.0
        } else {
            self.grayscale_prob
        }
    }

    /// Replaces [`Normalization::Dataset`] with statistics of `modality` over `dataset`.
    pub fn resolved_for(&self, dataset: &PairedDataset, modality: Modality) -> Result<Self> {
        let mut out = self.clone();
        if out.normalization == Normalization::Dataset {
            let stats = match modality {
                Modality::Visual => ChannelStats::compute(dataset.samples.iter().map(|s| &s.visual)),
                Modality::Tactile => ChannelStats::compute(dataset.samples.iter().map(|s| &s.tactile)),
            }?;
            out.normalization = Normalization::Fixed(stats);
        }
        Ok(out)
    }
}

/// Per-modality augmentation settings, resolved against a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairAugmentation {
    pub visual: AugmentationConfig,
    pub tactile: AugmentationConfig,
}

impl PairAugmentation {
    pub fn resolve(config: &AugmentationConfig, dataset: &PairedDataset) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            visual: config.resolved_for(dataset, Modality::Visual)?,
            tactile: config.resolved_for(dataset, Modality::Tactile)?,
        })
    }

    pub fn for_modality(&self, modality: Modality) -> &AugmentationConfig {
        match modality {
            Modality::Visual => &self.visual,
            Modality::Tactile => &self.tactile,
        }
    }
}

/// Which random branches one augmentation draw took.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AugTrace {
    /// `(top, left, height, width)` in the resized image.
    pub crop: (usize, usize, usize, usize),
    pub flipped: bool,
    pub grayscale: bool,
}

/// Bilinear resample of the region `(top, left, h, w)` to `out_h × out_w`,
/// with half-pixel centers.
fn resample(img: &Image, region: (usize, usize, usize, usize), out_h: usize, out_w: usize) -> Image {
    let (top, left, h, w) = region;
    let sy = h as f32 / out_h as f32;
    let sx = w as f32 / out_w as f32;
    let axis = |o: usize, scale: f32, extent: usize, offset: usize| {
        let pos = ((o as f32 + 0.5) * scale - 0.5).clamp(0.0, (extent - 1) as f32);
        let i0 = pos.floor() as usize;
        let i1 = (i0 + 1).min(extent - 1);
        (offset + i0, offset + i1, pos - i0 as f32)
    };
    let ys: Vec<_> = (0..out_h).map(|o| axis(o, sy, h, top)).collect();
    let xs: Vec<_> = (0..out_w).map(|o| axis(o, sx, w, left)).collect();
    let mut data = Vec::with_capacity(img.channels * out_h * out_w);
    for c in 0..img.channels {
        for &(y0, y1, fy) in &ys {
            for &(x0, x1, fx) in &xs {
                let top_row = img.at(c, y0, x0) * (1.0 - fx) + img.at(c, y0, x1) * fx;
                let bottom = img.at(c, y1, x0) * (1.0 - fx) + img.at(c, y1, x1) * fx;
                data.push(top_row * (1.0 - fy) + bottom * fy);
            }
        }
    }
    Image {
        channels: img.channels,
        height: out_h,
        width: out_w,
        data,
    }
}

fn resize(img: &Image, size: usize) -> Image {
    if img.height == size && img.width == size {
        return img.clone();
    }
    resample(img, (0, 0, img.height, img.width), size, size)
}

/// Area fraction in `scale`, log-uniform aspect in [3/4, 4/3], ten attempts,
/// then the largest centered crop.
fn sample_crop(rng: &mut impl Rng, h: usize, w: usize, scale: [f64; 2]) -> (usize, usize, usize, usize) {
    let area = (h * w) as f64;
    let (log_lo, log_hi) = ((3.0f64 / 4.0).ln(), (4.0f64 / 3.0).ln());
    for _ in 0..10 {
        let target = area * rng.random_range(scale[0]..=scale[1]);
        let aspect = rng.random_range(log_lo..=log_hi).exp();
        let cw = (target * aspect).sqrt().round() as usize;
        let ch = (target / aspect).sqrt().round() as usize;
        if cw > 0 && ch > 0 && cw <= w && ch <= h {
            let top = rng.random_range(0..=h - ch);
            let left = rng.random_range(0..=w - cw);
            return (top, left, ch, cw);
        }
    }
    let side = h.min(w);
    ((h - side) / 2, (w - side) / 2, side, side)
}

fn hflip(img: &mut Image) {
    let w = img.width;
    for row in img.data.chunks_mut(w) {
        row.reverse();
    }
}

/// Luma (0.299, 0.587, 0.114) replicated over each RGB triple; other
/// channel counts are averaged.
fn grayscale(img: &mut Image) {
    let hw = img.height * img.width;
    let groups: Vec<(usize, usize)> = if img.channels % 3 == 0 {
        (0..img.channels / 3).map(|g| (3 * g, 3)).collect()
    } else {
        vec![(0, img.channels)]
    };
    for (start, len) in groups {
        for p in 0..hw {
            let px = |c: usize| img.data[c * hw + p];
            let l = if len == 3 {
                0.299 * px(start) + 0.587 * px(start + 1) + 0.114 * px(start + 2)
            } else {
                (start..start + len).map(px).sum::<f32>() / len as f32
            };
            for c in start..start + len {
                img.data[c * hw + p] = l;
            }
        }
    }
}

fn normalize(img: &mut Image, norm: &Normalization) -> Result<()> {
    match norm {
        Normalization::Identity => Ok(()),
        Normalization::Dataset => Err(Error::Config(
            "normalization statistics are unresolved; call resolved_for first".into(),
        )),
        Normalization::Fixed(stats) => {
            if stats.mean.len() != img.channels {
                return Err(Error::Config(format!(
                    "normalization has {} channels, image has {}",
                    stats.mean.len(),
                    img.channels
                )));
            }
            let hw = img.height * img.width;
            for (c, plane) in img.data.chunks_mut(hw).enumerate() {
                let (m, s) = (stats.mean[c], stats.std[c]);
                plane.iter_mut().for_each(|v| *v = (*v - m) / s);
            }
            Ok(())
        }
    }
}

/// One seeded augmentation draw, reporting which branches fired.
pub fn augment_traced(image: &Image, config: &AugmentationConfig, seed: u64) -> Result<(Image, AugTrace)> {
    config.validate()?;
    let mut rng = rng_from(seed);
    let resized = resize(image, config.resize_to);
    let crop = sample_crop(&mut rng, resized.height, resized.width, config.crop_scale);
    let mut out = resample(&resized, crop, config.crop_to, config.crop_to);
    let flipped = rng.random::<f64>() < config.hflip_prob;
    if flipped {
        hflip(&mut out);
    }
    let gray = rng.random::<f64>() < config.effective_grayscale_prob();
    if gray {
        grayscale(&mut out);
    }
    normalize(&mut out, &config.normalization)?;
    Ok((
        out,
        AugTrace {
            crop,
            flipped,
            grayscale: gray,
        },
    ))
}

/// One seeded augmentation draw producing a `crop_to × crop_to` image.
pub fn augment(image: &Image, config: &AugmentationConfig, seed: u64) -> Result<Image> {
    augment_traced(image, config, seed).map(|(img, _)| img)
}

/// Deterministic evaluation transform: resize, center crop, normalize.
pub fn eval_view(image: &Image, config: &AugmentationConfig) -> Result<Image> {
    config.validate()?;
    let resized = resize(image, config.resize_to);
    let off = (config.resize_to - config.crop_to) / 2;
    let mut out = resample(&resized, (off, off, config.crop_to, config.crop_to), config.crop_to, config.crop_to);
    normalize(&mut out, &config.normalization)?;
    Ok(out)
}

/// Query and key views of both modalities for one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewEntry {
    pub visual_q: Image,
    pub visual_k: Image,
    pub tactile_q: Image,
    pub tactile_k: Image,
}

/// Four independent draws from sub-seeds 0..4 of `seed`.
pub fn make_views(sample: &PairedSample, aug: &PairAugmentation, seed: u64) -> Result<ViewEntry> {
    Ok(ViewEntry {
        visual_q: augment(&sample.visual, &aug.visual, derive_seed(seed, 0))?,
        visual_k: augment(&sample.visual, &aug.visual, derive_seed(seed, 1))?,
        tactile_q: augment(&sample.tactile, &aug.tactile, derive_seed(seed, 2))?,
        tactile_k: augment(&sample.tactile, &aug.tactile, derive_seed(seed, 3))?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(c: usize, size: usize) -> Image {
        let data = (0..c * size * size).map(|i| ((i * 7919) % 251) as f32 / 250.0).collect();
        Image::new(c, size, size, data).unwrap()
    }

    fn identity_cfg() -> AugmentationConfig {
        AugmentationConfig {
            normalization: Normalization::Identity,
            ..AugmentationConfig::desk()
        }
    }

    #[test]
    fn output_is_crop_sized_and_deterministic() {
        let img = ramp(3, 32);
        let cfg = identity_cfg();
        for seed in 0..20 {
            let a = augment(&img, &cfg, seed).unwrap();
            assert_eq!((a.channels, a.height, a.width), (3, 32, 32));
            assert_eq!(a, augment(&img, &cfg, seed).unwrap());
        }
        let full = AugmentationConfig {
            normalization: Normalization::Identity,
            ..AugmentationConfig::paper_scale()
        };
        let out = augment(&ramp(3, 40), &full, 1).unwrap();
        assert_eq!((out.height, out.width), (224, 224));
    }

    #[test]
    fn resize_of_constant_is_constant() {
        let img = Image::filled(3, 20, 20, 0.3);
        let r = resize(&img, 36);
        assert!(r.data.iter().all(|&v| (v - 0.3).abs() < 1e-6));
    }

    #[test]
    fn grasp_mode_never_grays() {
        let cfg = AugmentationConfig {
            grasp_mode: true,
            grayscale_prob: 0.9,
            ..identity_cfg()
        };
        let img = ramp(6, 8);
        for seed in 0..500 {
            assert!(!augment_traced(&img, &cfg, seed).unwrap().1.grayscale);
        }
    }

    #[test]
    fn grayscale_uses_luma() {
        let mut img = Image::new(3, 1, 1, vec![1.0, 0.0, 0.0]).unwrap();
        grayscale(&mut img);
        assert!(img.data.iter().all(|&v| (v - 0.299).abs() < 1e-6));
    }

    #[test]
    fn flip_reverses_rows() {
        let mut img = Image::new(1, 2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        hflip(&mut img);
        assert_eq!(img.data, vec![3.0, 2.0, 1.0, 6.0, 5.0, 4.0]);
    }

    #[test]
    fn degenerate_config_collapses_to_resize() {
        let cfg = AugmentationConfig {
            crop_scale: [1.0, 1.0],
            hflip_prob: 0.0,
            grayscale_prob: 0.0,
            ..identity_cfg()
        };
        let img = ramp(3, 32);
        let a = augment(&img, &cfg, 1).unwrap();
        let b = augment(&img, &cfg, 2).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn malformed_configs_are_rejected() {
        let img = ramp(3, 8);
        for cfg in [
            AugmentationConfig { crop_to: 40, ..identity_cfg() },
            AugmentationConfig { crop_scale: [0.0, 1.0], ..identity_cfg() },
            AugmentationConfig { crop_scale: [0.8, 0.5], ..identity_cfg() },
            AugmentationConfig { hflip_prob: 1.5, ..identity_cfg() },
            AugmentationConfig { grayscale_prob: -0.1, ..identity_cfg() },
        ] {
            assert!(matches!(augment(&img, &cfg, 0), Err(Error::Config(_))));
        }
        let unresolved = AugmentationConfig::desk();
        assert!(augment(&img, &unresolved, 0).is_err());
    }

    #[test]
    fn normalization_statistics() {
        let imgs = [Image::new(1, 1, 2, vec![0.0, 1.0]).unwrap(), Image::new(1, 1, 2, vec![0.0, 1.0]).unwrap()];
        let s = ChannelStats::compute(imgs.iter()).unwrap();
        assert!((s.mean[0] - 0.5).abs() < 1e-6);
        assert!((s.std[0] - 0.5).abs() < 1e-6);
    }

    #[test]
    fn eval_view_is_center_crop() {
        let cfg = AugmentationConfig {
            resize_to: 8,
            crop_to: 4,
            ..identity_cfg()
        };
        let img = ramp(1, 8);
        let v = eval_view(&img, &cfg).unwrap();
        assert_eq!(v.at(0, 0, 0), img.at(0, 2, 2));
        assert_eq!(v.at(0, 3, 3), img.at(0, 5, 5));
    }
}
