//! Seeded synthetic drying world.
//!
//! Two parametric trajectory families stand in for measured data:
//!
//! * `cookie_like`: a late, steep logistic rise, rescaled so `g(0) = 0`;
//! * `apple_like`: gradual saturation `A (1 - exp(-k t))`.
//!
//! Amplitude follows temperature, rate follows air velocity, and a hidden
//! per-sample trait `h` shifts amplitude (and, for cookies, the onset). The
//! trait is only observable through the rendered initial image.
//!
//! Every sample draws from its own ChaCha stream keyed by
//! `(condition index, sample index)`, so generation order does not matter.

use std::f64::consts::PI;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::basis::{uniform_grid, BasisError, Trajectory};
use crate::dataset::{apple_grid, cookie_grid, ProcessCondition, Raster, SampleRecord};

/// Lowest permitted frequency (cycles per trajectory) of the injected
/// periodic noise.
pub const MIN_HF_CYCLES: f64 = 20.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SynthError {
    #[error("invalid world config: {0}")]
    InvalidConfig(String),
    #[error("time {0} lies outside [0, 1]")]
    OutOfDomain(f64),
    #[error(transparent)]
    Trajectory(#[from] BasisError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    CookieLike,
    AppleLike,
}

/// Logistic-rise coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CookieShape {
    pub a0: f64,
    pub a_t: f64,
    pub a_h: f64,
    pub k0: f64,
    pub k_v: f64,
    pub c0: f64,
    pub c_h: f64,
}

impl Default for CookieShape {
    fn default() -> Self {
        Self {
            a0: 30.0,
            a_t: 15.0,
            a_h: 3.0,
            k0: 8.0,
            k_v: 4.0,
            c0: 0.55,
            c_h: 0.05,
        }
    }
}

/// Saturating-exponential coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AppleShape {
    pub amp_base: f64,
    pub amp_spread: f64,
    pub amp_trait: f64,
    pub rate_base: f64,
    pub rate_spread: f64,
}

impl Default for AppleShape {
    fn default() -> Self {
        Self {
            amp_base: 8.0,
            amp_spread: 6.0,
            amp_trait: 1.5,
            rate_base: 2.0,
            rate_spread: 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorldConfig {
    pub family: Family,
    pub conditions: Vec<ProcessCondition>,
    pub samples_per_condition: usize,
    pub trajectory_length: usize,
    pub noise_sigma: f64,
    pub hf_noise_amp: f64,
    /// Cycles of the periodic noise over the whole trajectory.
    pub hf_noise_cycles: f64,
    pub trait_sigma: f64,
    pub image_size: usize,
    pub seed: u64,
    #[serde(default)]
    pub cookie_shape: CookieShape,
    #[serde(default)]
    pub apple_shape: AppleShape,
}

impl WorldConfig {
    /// Eight cookie conditions, nine samples each, 73 frames.
    pub fn cookie_default() -> Self {
        Self {
            family: Family::CookieLike,
            conditions: cookie_grid(),
            samples_per_condition: 9,
            trajectory_length: 73,
            noise_sigma: 0.8,
            hf_noise_amp: 1.0,
            hf_noise_cycles: 24.0,
            trait_sigma: 1.0,
            image_size: 32,
            seed: 0,
            cookie_shape: CookieShape::default(),
            apple_shape: AppleShape::default(),
        }
    }

    /// Six apple conditions, fourteen samples each, 140 frames.
    pub fn apple_default() -> Self {
        Self {
            family: Family::AppleLike,
            conditions: apple_grid(),
            samples_per_condition: 14,
            trajectory_length: 140,
            noise_sigma: 0.3,
            hf_noise_amp: 0.4,
            hf_noise_cycles: 24.0,
            trait_sigma: 1.0,
            image_size: 32,
            seed: 0,
            cookie_shape: CookieShape::default(),
            apple_shape: AppleShape::default(),
        }
    }

    /// Held-out condition used when a split names none: 400°F/1000 RPM for
    /// cookies, 60°C/2.5 m/s for apples, else the last grid condition.
    pub fn default_eval_condition(&self) -> ProcessCondition {
        let preferred = match self.family {
            Family::CookieLike => ProcessCondition::fahrenheit_rpm(400.0, 1000.0),
            Family::AppleLike => ProcessCondition::celsius_mps(60.0, 2.5),
        };
        if self.conditions.contains(&preferred) {
            preferred
        } else {
            *self.conditions.last().expect("validated grid is nonempty")
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::InvalidConfig(m));
        if self.conditions.is_empty() {
            return bad("condition grid is empty".into());
        }
        for c in &self.conditions {
            c.validate().map_err(SynthError::InvalidConfig)?;
            let first = &self.conditions[0];
            if c.temperature_unit != first.temperature_unit || c.velocity_unit != first.velocity_unit {
                return bad("condition units are inconsistent".into());
            }
        }
        if self.samples_per_condition == 0 {
            return bad("samples_per_condition must be positive".into());
        }
        if self.trajectory_length < 2 {
            return bad("trajectory_length must be at least 2".into());
        }
        for (name, v) in [
            ("noise_sigma", self.noise_sigma),
            ("hf_noise_amp", self.hf_noise_amp),
            ("trait_sigma", self.trait_sigma),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(format!("{name} must be non-negative, got {v}"));
            }
        }
        if self.hf_noise_amp > 0.0 {
            let nyquist = (self.trajectory_length - 1) as f64 / 2.0;
            if !(self.hf_noise_cycles >= MIN_HF_CYCLES && self.hf_noise_cycles < nyquist) {
                return bad(format!(
                    "hf_noise_cycles must lie in [{MIN_HF_CYCLES}, {nyquist}), got {}",
                    self.hf_noise_cycles
                ));
            }
        }
        if self.image_size < 8 {
            return bad(format!("image_size must be at least 8, got {}", self.image_size));
        }
        Ok(())
    }

    /// Min-max position of a condition inside this world's grid.
    pub fn normalized(&self, c: &ProcessCondition) -> (f64, f64) {
        let scale = |v: f64, vals: &mut dyn Iterator<Item = f64>| {
            let (lo, hi) = vals.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| (lo.min(x), hi.max(x)));
            if hi > lo {
                (v - lo) / (hi - lo)
            } else {
                0.0
            }
        };
        (
            scale(c.temperature, &mut self.conditions.iter().map(|c| c.temperature)),
            scale(c.air_velocity, &mut self.conditions.iter().map(|c| c.air_velocity)),
        )
    }
}

/// Per-sample latent characteristic.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HiddenTrait(pub f64);

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Ground-truth curve for one (condition, trait) pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GroundTruth {
    Cookie { amplitude: f64, rate: f64, onset: f64 },
    Apple { amplitude: f64, rate: f64 },
}

impl GroundTruth {
    /// `temp_norm` / `vel_norm` are min-max normalized condition values.
    pub fn new(config: &WorldConfig, temp_norm: f64, vel_norm: f64, h: HiddenTrait) -> Self {
        match config.family {
            Family::CookieLike => {
                let s = &config.cookie_shape;
                GroundTruth::Cookie {
                    amplitude: s.a0 + s.a_t * temp_norm + s.a_h * h.0,
                    rate: s.k0 + s.k_v * vel_norm,
                    onset: s.c0 - s.c_h * h.0,
                }
            }
            Family::AppleLike => {
                let s = &config.apple_shape;
                GroundTruth::Apple {
                    amplitude: s.amp_base + s.amp_spread * temp_norm + s.amp_trait * h.0,
                    rate: s.rate_base + s.rate_spread * vel_norm,
                }
            }
        }
    }

    pub fn value(&self, t: f64) -> Result<f64, SynthError> {
        if !(0.0..=1.0).contains(&t) {
            return Err(SynthError::OutOfDomain(t));
        }
        Ok(match *self {
            GroundTruth::Cookie { amplitude, rate, onset } => {
                let base = logistic(-rate * onset);
                amplitude * (logistic(rate * (t - onset)) - base) / (1.0 - base)
            }
            GroundTruth::Apple { amplitude, rate } => amplitude * (1.0 - (-rate * t).exp()),
        })
    }
}

/// Noise-free trajectory value of `family` under `condition` for trait `h`.
pub fn trajectory_ground_truth(
    config: &WorldConfig,
    condition: &ProcessCondition,
    h: HiddenTrait,
    t: f64,
) -> Result<f64, SynthError> {
    let (tn, vn) = config.normalized(condition);
    GroundTruth::new(config, tn, vn, h).value(t)
}

/// Disc brightness and radius used for trait `h` (before pixel noise).
pub fn disc_geometry(h: HiddenTrait, size: usize) -> (f64, f64) {
    let hc = h.0.clamp(-2.0, 2.0);
    let radius = size as f64 * (0.3 + 0.1 * hc / 2.0);
    let brightness = 140.0 + 40.0 * hc / 2.0;
    (brightness, radius)
}

const BACKGROUND_LEVEL: f64 = 20.0;
const PIXEL_NOISE_SIGMA: f64 = 5.0;

/// A bright disc on a dark background whose radius and brightness encode
/// the trait. Pixel noise is seeded by `seed`.
pub fn render_initial_image(h: HiddenTrait, seed: u64, size: usize) -> Raster {
    render_with_noise(h, seed, size, PIXEL_NOISE_SIGMA)
}

pub fn render_with_noise(h: HiddenTrait, seed: u64, size: usize, noise_sigma: f64) -> Raster {
    assert!(size >= 8, "image size must be at least 8");
    let (brightness, radius) = disc_geometry(h, size);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, noise_sigma).expect("valid sigma");
    let center = (size as f64 - 1.0) / 2.0;
    let mut pixels = Vec::with_capacity(size * size);
    for y in 0..size {
        for x in 0..size {
            let (dx, dy) = (x as f64 - center, y as f64 - center);
            let level = if (dx * dx + dy * dy).sqrt() <= radius {
                brightness
            } else {
                BACKGROUND_LEVEL
            };
            let v = level + noise.sample(&mut rng);
            pixels.push(v.round().clamp(0.0, 255.0) as u8);
        }
    }
    Raster::new(size, size, pixels)
}

/// A generated sample together with the quantities hidden from models.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSample {
    pub record: SampleRecord,
    pub hidden_trait: HiddenTrait,
    pub clean: Vec<f64>,
}

fn sample_stream(condition_index: usize, sample_index: usize) -> u64 {
    ((condition_index as u64) << 32) | sample_index as u64
}

/// Generates one sample; identical results regardless of call order.
pub fn generate_sample(
    config: &WorldConfig,
    condition_index: usize,
    sample_index: usize,
) -> Result<SyntheticSample, SynthError> {
    let condition = config.conditions[condition_index];
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(sample_stream(condition_index, sample_index));

    let z: f64 = rand_distr::StandardNormal.sample(&mut rng);
    let h = HiddenTrait(config.trait_sigma * z);
    let phase: f64 = rng.random::<f64>() * 2.0 * PI;
    let image_seed = rng.next_u64();

    let (tn, vn) = config.normalized(&condition);
    let truth = GroundTruth::new(config, tn, vn, h);
    let times = uniform_grid(config.trajectory_length);
    let clean = times.iter().map(|&t| truth.value(t)).collect::<Result<Vec<_>, _>>()?;

    let white = Normal::new(0.0, config.noise_sigma).map_err(|e| SynthError::InvalidConfig(e.to_string()))?;
    let raw: Vec<f64> = times
        .iter()
        .zip(&clean)
        .enumerate()
        .map(|(i, (&t, &g))| {
            let eps = white.sample(&mut rng);
            if i == 0 {
                // ΔE of the first frame against itself
                return 0.0;
            }
            let periodic = if config.hf_noise_amp > 0.0 {
                config.hf_noise_amp * (2.0 * PI * config.hf_noise_cycles * t + phase).sin()
            } else {
                0.0
            };
            (g + eps + periodic).max(0.0)
        })
        .collect();

    let record = SampleRecord {
        id: format!("{}_s{sample_index:02}", condition.label()),
        condition,
        initial_image: Some(render_initial_image(h, image_seed, config.image_size)),
        raw_trajectory: Trajectory::new(times, raw)?,
        smoothed_trajectory: None,
    };
    Ok(SyntheticSample {
        record,
        hidden_trait: h,
        clean,
    })
}

/// Every sample of the world, condition-major.
pub fn generate_world(config: &WorldConfig) -> Result<Vec<SyntheticSample>, SynthError> {
    config.validate()?;
    let mut out = Vec::with_capacity(config.conditions.len() * config.samples_per_condition);
    for ci in 0..config.conditions.len() {
        for si in 0..config.samples_per_condition {
            out.push(generate_sample(config, ci, si)?);
        }
    }
    Ok(out)
}

pub fn generate_dataset(config: &WorldConfig) -> Result<Vec<SampleRecord>, SynthError> {
    Ok(generate_world(config)?.into_iter().map(|s| s.record).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::smooth_lowpass;

    fn rmse(a: &[f64], b: &[f64]) -> f64 {
        (a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len() as f64).sqrt()
    }

    #[test]
    fn curves_start_at_zero() {
        for cfg in [WorldConfig::cookie_default(), WorldConfig::apple_default()] {
            for c in &cfg.conditions {
                for h in [-2.0, 0.0, 1.3] {
                    assert_eq!(trajectory_ground_truth(&cfg, c, HiddenTrait(h), 0.0).unwrap(), 0.0);
                }
            }
        }
    }

    #[test]
    fn reference_curve_values() {
        let apple = GroundTruth::Apple {
            amplitude: 12.0,
            rate: 3.0,
        };
        assert!((apple.value(1.0).unwrap() - 11.4024).abs() < 1e-3);
        let cookie = GroundTruth::Cookie {
            amplitude: 45.0,
            rate: 10.0,
            onset: 0.5,
        };
        assert!((cookie.value(0.5).unwrap() - 22.349).abs() < 1e-2);
        assert_eq!(cookie.value(1.5), Err(SynthError::OutOfDomain(1.5)));
    }

    #[test]
    fn curves_are_monotone_and_non_negative() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for cfg in [WorldConfig::cookie_default(), WorldConfig::apple_default()] {
            for _ in 0..100 {
                let (tn, vn): (f64, f64) = (rng.random(), rng.random());
                let z: f64 = rand_distr::StandardNormal.sample(&mut rng);
                let g = GroundTruth::new(&cfg, tn, vn, HiddenTrait(z));
                let mut prev = 0.0;
                for i in 0..1000 {
                    let v = g.value(i as f64 / 999.0).unwrap();
                    assert!(v >= 0.0 && v >= prev - 1e-12, "{g:?} at {i}");
                    prev = v;
                }
            }
        }
    }

    #[test]
    fn determinism_and_counts() {
        let cfg = WorldConfig::cookie_default().with_seed(5);
        let a = generate_dataset(&cfg).unwrap();
        let b = generate_dataset(&cfg).unwrap();
        assert_eq!(a.len(), 72);
        assert_eq!(a, b);
        let other = generate_dataset(&cfg.clone().with_seed(6)).unwrap();
        assert_ne!(a, other);
    }

    #[test]
    fn order_independent_generation() {
        let cfg = WorldConfig::apple_default().with_seed(9);
        let world = generate_world(&cfg).unwrap();
        let single = generate_sample(&cfg, 4, 7).unwrap();
        assert_eq!(world[4 * cfg.samples_per_condition + 7], single);
    }

    #[test]
    fn noiseless_equals_truth() {
        let mut cfg = WorldConfig::cookie_default();
        cfg.noise_sigma = 0.0;
        cfg.hf_noise_amp = 0.0;
        for s in generate_world(&cfg).unwrap() {
            for (r, c) in s.record.raw_trajectory.values().iter().zip(&s.clean) {
                assert!((r - c).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn white_noise_level_matches_sigma() {
        let mut cfg = WorldConfig::apple_default();
        cfg.hf_noise_amp = 0.0;
        cfg.noise_sigma = 0.3;
        let mut resid = Vec::new();
        for s in generate_world(&cfg).unwrap() {
            for (i, (r, c)) in s.record.raw_trajectory.values().iter().zip(&s.clean).enumerate() {
                // skip the pinned first frame and clamped points
                if i > 0 && *r > 0.0 {
                    resid.push(r - c);
                }
            }
        }
        assert!(resid.len() >= 1000);
        let mean = resid.iter().sum::<f64>() / resid.len() as f64;
        let sd = (resid.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / resid.len() as f64).sqrt();
        assert!((sd - 0.3).abs() < 0.2 * 0.3, "sd {sd}");
    }

    #[test]
    fn lowpass_removes_injected_noise() {
        for cfg in [WorldConfig::cookie_default(), WorldConfig::apple_default()] {
            for s in generate_world(&cfg).unwrap() {
                let raw = s.record.raw_trajectory.values();
                let smooth = smooth_lowpass(raw, 15).unwrap();
                assert!(rmse(&smooth, &s.clean) < rmse(raw, &s.clean), "{}", s.record.id);
            }
        }
    }

    #[test]
    fn images_are_deterministic() {
        let a = render_initial_image(HiddenTrait(0.7), 42, 32);
        let b = render_initial_image(HiddenTrait(0.7), 42, 32);
        assert_eq!(a, b);
        assert_ne!(a, render_initial_image(HiddenTrait(0.7), 43, 32));
    }

    fn disc_mean(img: &Raster) -> f64 {
        let sel: Vec<f64> = img.pixels.iter().filter(|&&p| p > 80).map(|&p| p as f64).collect();
        sel.iter().sum::<f64>() / sel.len() as f64
    }

    #[test]
    fn brightness_tracks_trait() {
        let hi = disc_mean(&render_initial_image(HiddenTrait(2.0), 1, 32));
        let lo = disc_mean(&render_initial_image(HiddenTrait(-2.0), 1, 32));
        assert!((hi - lo - 80.0).abs() <= 2.0, "{hi} {lo}");

        let means: Vec<f64> = [-2.0, -1.0, 0.0, 1.0, 2.0]
            .iter()
            .map(|&h| disc_mean(&render_with_noise(HiddenTrait(h), 0, 32, 0.0)))
            .collect();
        assert!(means.windows(2).all(|w| w[1] > w[0]), "{means:?}");
    }

    #[test]
    fn trait_is_linearly_recoverable_from_images() {
        let cfg = WorldConfig::cookie_default().with_seed(1);
        let world = generate_world(&cfg).unwrap();
        // features: [1, disc mean brightness, disc radius from area]
        let mut xtx = nalgebra::Matrix3::<f64>::zeros();
        let mut xty = nalgebra::Vector3::<f64>::zeros();
        let mut ys = Vec::new();
        let mut feats = Vec::new();
        for s in &world {
            let img = s.record.initial_image.as_ref().unwrap();
            let area = img.pixels.iter().filter(|&&p| p > 80).count() as f64;
            let x = nalgebra::Vector3::new(1.0, disc_mean(img), (area / PI).sqrt());
            xtx += x * x.transpose();
            xty += x * s.hidden_trait.0;
            feats.push(x);
            ys.push(s.hidden_trait.0);
        }
        let w = xtx.lu().solve(&xty).unwrap();
        let mean = ys.iter().sum::<f64>() / ys.len() as f64;
        let ss_tot: f64 = ys.iter().map(|y| (y - mean).powi(2)).sum();
        let ss_res: f64 = feats.iter().zip(&ys).map(|(x, y)| (y - w.dot(x)).powi(2)).sum();
        let r2 = 1.0 - ss_res / ss_tot;
        assert!(r2 > 0.9, "R^2 = {r2}");
    }

    #[test]
    fn invalid_configs() {
        let mut c = WorldConfig::cookie_default();
        c.samples_per_condition = 0;
        assert!(matches!(generate_dataset(&c), Err(SynthError::InvalidConfig(_))));
        let mut c = WorldConfig::cookie_default();
        c.noise_sigma = -1.0;
        assert!(c.validate().is_err());
        let mut c = WorldConfig::cookie_default();
        c.hf_noise_cycles = 5.0;
        assert!(c.validate().is_err());
        let mut c = WorldConfig::cookie_default();
        c.conditions.clear();
        assert!(c.validate().is_err());
    }
}
