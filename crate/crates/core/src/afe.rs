//! Behavioral analog front end: LNA, PGA, first-order LPF, input-referred
//! noise and hard saturation.

use std::f64::consts::PI;

use ndarray::Array2;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use rustfft::{num_complex::Complex64, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::block::RawSignalBlock;
use crate::error::{Error, Result};
use crate::phantom::AcousticConfig;
use crate::rng::{self, Domain};

pub const PGA_GAINS: [f64; 4] = [8.0, 16.0, 32.0, 64.0];

/// Total chain gain at the 3.5 MHz center frequency with the highest PGA
/// setting, in dB.
pub const MAX_CENTER_GAIN_DB: f64 = 41.7;
pub const DEFAULT_LPF_CUTOFF_MHZ: f64 = 10.35;
const CENTER_FREQUENCY_MHZ: f64 = 3.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AfeConfig {
    pub pga_gain: f64,
    pub lpf_extra_gain: f64,
    pub lna_gain: f64,
    pub lpf_cutoff_mhz: f64,
    pub input_noise_density_nv: f64,
    /// 1/f corner; 0 disables flicker noise.
    pub flicker_corner_mhz: f64,
    pub noise_seed: u64,
    pub full_scale: f64,
}

impl Default for AfeConfig {
    fn default() -> Self {
        Self {
            pga_gain: 64.0,
            lpf_extra_gain: 2.0,
            lna_gain: derived_lna_gain(),
            lpf_cutoff_mhz: DEFAULT_LPF_CUTOFF_MHZ,
            input_noise_density_nv: 3.5,
            flicker_corner_mhz: 0.0,
            noise_seed: 0,
            full_scale: 1.0,
        }
    }
}

/// LNA gain that makes LNA × 64 × 2 × |H(3.5 MHz)| equal 41.7 dB.
pub fn derived_lna_gain() -> f64 {
    let total = 10f64.powf(MAX_CENTER_GAIN_DB / 20.0);
    total / (64.0 * 2.0 * lpf_magnitude(CENTER_FREQUENCY_MHZ, DEFAULT_LPF_CUTOFF_MHZ))
}

/// Analog single-pole magnitude response.
pub fn lpf_magnitude(f_mhz: f64, cutoff_mhz: f64) -> f64 {
    let r = f_mhz / cutoff_mhz;
    1.0 / (1.0 + r * r).sqrt()
}

impl AfeConfig {
    pub fn total_gain(&self) -> f64 {
        self.lna_gain * self.pga_gain * self.lpf_extra_gain
    }

    pub fn validate(&self, sample_rate_mhz: f64) -> Result<()> {
        if !PGA_GAINS.contains(&self.pga_gain) {
            return Err(Error::Config(format!("afe.pga_gain {} not one of 8, 16, 32, 64", self.pga_gain)));
        }
        if !(self.lpf_cutoff_mhz > 0.0 && self.lpf_cutoff_mhz < sample_rate_mhz / 2.0) {
            return Err(Error::Config(format!(
                "afe.lpf_cutoff_mhz {} must lie in (0, {})",
                self.lpf_cutoff_mhz,
                sample_rate_mhz / 2.0
            )));
        }
        if !(self.lna_gain > 0.0 && self.lpf_extra_gain > 0.0) {
            return Err(Error::Config("afe gains must be positive".into()));
        }
        if !(self.input_noise_density_nv >= 0.0 && self.flicker_corner_mhz >= 0.0) {
            return Err(Error::Config("afe noise parameters must be non-negative".into()));
        }
        if !(self.full_scale > 0.0) {
            return Err(Error::Config("afe.full_scale must be positive".into()));
        }
        Ok(())
    }

    /// White-noise standard deviation per sample, in volts at the input.
    pub fn input_noise_sigma(&self, sample_rate_mhz: f64) -> f64 {
        self.input_noise_density_nv * 1e-9 * (sample_rate_mhz * 1e6 / 2.0).sqrt()
    }
}

/// Bilinear-transform single-pole low-pass, prewarped at the cutoff.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OnePole {
    b0: f64,
    a1: f64,
}

impl OnePole {
    pub fn new(cutoff_mhz: f64, sample_rate_mhz: f64) -> Self {
        let k = (PI * cutoff_mhz / sample_rate_mhz).tan();
        Self { b0: k / (1.0 + k), a1: (k - 1.0) / (k + 1.0) }
    }

    /// Exact magnitude of the discrete response at `f_mhz`.
    pub fn magnitude(&self, f_mhz: f64, sample_rate_mhz: f64) -> f64 {
        let w = 2.0 * PI * f_mhz / sample_rate_mhz;
        let z1 = Complex64::from_polar(1.0, -w);
        let h = self.b0 * (Complex64::new(1.0, 0.0) + z1) / (Complex64::new(1.0, 0.0) + self.a1 * z1);
        h.norm()
    }

    pub fn filter(&self, x: &mut [f64]) {
        let (mut x1, mut y1) = (0.0, 0.0);
        for v in x.iter_mut() {
            let y = self.b0 * (*v + x1) - self.a1 * y1;
            x1 = *v;
            y1 = y;
            *v = y;
        }
    }
}

fn channel_noise(cfg: &AfeConfig, sample_rate_mhz: f64, channel: usize, len: usize) -> Vec<f64> {
    let sigma = cfg.input_noise_sigma(sample_rate_mhz);
    if sigma == 0.0 {
        return vec![0.0; len];
    }
    let mut rng = rng::stream(cfg.noise_seed, Domain::AfeNoise, &[channel as u64]);
    let normal = Normal::new(0.0, sigma).expect("finite sigma");
    let mut n: Vec<f64> = (0..len).map(|_| normal.sample(&mut rng)).collect();
    if cfg.flicker_corner_mhz > 0.0 {
        shape_flicker(&mut n, cfg.flicker_corner_mhz, sample_rate_mhz);
    }
    n
}

/// Colours white noise to density² × (1 + f_corner / f). DC is removed.
fn shape_flicker(n: &mut [f64], corner_mhz: f64, sample_rate_mhz: f64) {
    let len = n.len();
    let mut planner = FftPlanner::new();
    let fwd = planner.plan_fft_forward(len);
    let inv = planner.plan_fft_inverse(len);
    let mut buf: Vec<Complex64> = n.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fwd.process(&mut buf);
    for (k, c) in buf.iter_mut().enumerate() {
        let bin = k.min(len - k);
        if bin == 0 {
            *c = Complex64::new(0.0, 0.0);
            continue;
        }
        let f = bin as f64 * sample_rate_mhz / len as f64;
        *c *= (1.0 + corner_mhz / f).sqrt();
    }
    inv.process(&mut buf);
    for (v, c) in n.iter_mut().zip(buf) {
        *v = c.re / len as f64;
    }
}

/// Runs every channel through noise injection, gain, the LPF and saturation.
pub fn apply_afe(raw: &RawSignalBlock, cfg: &AfeConfig, acoustic: &AcousticConfig) -> Result<RawSignalBlock> {
    if raw.sample_rate_mhz != acoustic.sample_rate_mhz {
        return Err(Error::SampleRate { block_mhz: raw.sample_rate_mhz, config_mhz: acoustic.sample_rate_mhz });
    }
    let fs = raw.sample_rate_mhz;
    cfg.validate(fs)?;
    let lpf = OnePole::new(cfg.lpf_cutoff_mhz, fs);
    let gain = cfg.total_gain();
    let t = raw.num_samples();
    let rows: Vec<Vec<f64>> = (0..raw.channels())
        .into_par_iter()
        .map(|ch| {
            let noise = channel_noise(cfg, fs, ch, t);
            let mut x: Vec<f64> = raw.samples.row(ch).iter().zip(&noise).map(|(s, n)| gain * (s + n)).collect();
            lpf.filter(&mut x);
            for v in x.iter_mut() {
                *v = v.clamp(-cfg.full_scale, cfg.full_scale);
            }
            x
        })
        .collect();
    let mut out = Array2::zeros((raw.channels(), t));
    for (ch, row) in rows.into_iter().enumerate() {
        out.row_mut(ch).assign(&ndarray::Array1::from(row));
    }
    Ok(RawSignalBlock::new(out, fs))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn acoustic(t: usize) -> AcousticConfig {
        AcousticConfig { num_samples: t, ..Default::default() }
    }

    #[test]
    fn analog_magnitude_points() {
        assert_eq!(lpf_magnitude(0.0, 10.35), 1.0);
        assert!((lpf_magnitude(10.35, 10.35) - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-4);
        // 1 / sqrt(101)
        assert!((lpf_magnitude(103.5, 10.35) - 0.099_503_719).abs() < 1e-6);
    }

    #[test]
    fn derived_gain_hits_center_target() {
        let cfg = AfeConfig::default();
        let g = cfg.total_gain() * lpf_magnitude(3.5, cfg.lpf_cutoff_mhz);
        assert!((20.0 * g.log10() - 41.7).abs() < 1e-9);
        assert!((cfg.lna_gain - 1.0).abs() < 0.01);
    }

    #[test]
    fn digital_pole_is_minus_three_db_at_cutoff() {
        let f = OnePole::new(10.35, 40.82);
        assert!((f.magnitude(10.35, 40.82) - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
        assert!((f.magnitude(0.0, 40.82) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn silent_without_input_or_noise() {
        let cfg = AfeConfig { input_noise_density_nv: 0.0, ..Default::default() };
        let raw = RawSignalBlock::zeros(4, 256, 40.82);
        let out = apply_afe(&raw, &cfg, &acoustic(256)).unwrap();
        assert!(out.samples.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn rejects_bad_config() {
        let raw = RawSignalBlock::zeros(1, 16, 40.82);
        let bad_gain = AfeConfig { pga_gain: 10.0, ..Default::default() };
        assert!(matches!(apply_afe(&raw, &bad_gain, &acoustic(16)), Err(Error::Config(_))));
        let other_rate = AcousticConfig { sample_rate_mhz: 50.0, ..acoustic(16) };
        assert!(matches!(apply_afe(&raw, &AfeConfig::default(), &other_rate), Err(Error::SampleRate { .. })));
        let raw_slow = RawSignalBlock::zeros(1, 16, 20.41);
        let slow = AcousticConfig { sample_rate_mhz: 20.41, ..acoustic(16) };
        assert!(apply_afe(&raw_slow, &AfeConfig::default(), &slow).is_err());
    }

    #[test]
    fn saturates_at_full_scale() {
        let cfg = AfeConfig { input_noise_density_nv: 0.0, ..Default::default() };
        let mut raw = RawSignalBlock::zeros(1, 64, 40.82);
        raw.samples.fill(0.1);
        let out = apply_afe(&raw, &cfg, &acoustic(64)).unwrap();
        assert_eq!(out.samples[[0, 63]], 1.0);
        assert!(out.samples.iter().all(|v| v.abs() <= 1.0));
    }

    #[test]
    fn noise_is_reproducible_per_channel() {
        let cfg = AfeConfig { noise_seed: 9, ..Default::default() };
        let raw = RawSignalBlock::zeros(3, 128, 40.82);
        let a = apply_afe(&raw, &cfg, &acoustic(128)).unwrap();
        let b = apply_afe(&raw, &cfg, &acoustic(128)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.samples.row(0), a.samples.row(1));
    }

    #[test]
    fn flicker_raises_low_frequency_noise() {
        let white = channel_noise(&AfeConfig::default(), 40.82, 0, 1 << 14);
        let pink = channel_noise(&AfeConfig { flicker_corner_mhz: 1.0, ..Default::default() }, 40.82, 0, 1 << 14);
        let e = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>();
        assert!(e(&pink) > e(&white));
    }
}
