//! Converter and system metrology: sine-fit SNDR/ENOB, MVM computing
//! linearity sweeps, NMSE.

use std::collections::HashSet;
use std::f64::consts::PI;

use ndarray::{Array2, ArrayView2};
use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use rustfft::{num_complex::Complex64, FftPlanner};
use serde::Serialize;

use crate::afe::{self, AfeConfig};
use crate::block::RawSignalBlock;
use crate::error::{Error, Result};
use crate::mvm_adc::{self, AdcConfig, CapBank};
use crate::phantom::AcousticConfig;
use crate::rng::{self, Domain};

/// ADC conversion rate of the receiver.
pub const ADC_RATE_MHZ: f64 = 20.41;
const HARMONICS_EXCLUDED: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SpectralMetrics {
    pub sndr_db: f64,
    pub snr_db: f64,
    pub enob: f64,
    pub signal_bin: usize,
}

pub fn enob_from_sndr(sndr_db: f64) -> f64 {
    (sndr_db - 1.76) / 6.02
}

/// Nearest coherent input frequency `J/K · f_s` with `J` odd.
pub fn coherent_frequency(target_mhz: f64, f_s_mhz: f64, k: usize) -> f64 {
    let mut j = (target_mhz / f_s_mhz * k as f64).round() as i64;
    if j % 2 == 0 {
        j += if (target_mhz / f_s_mhz * k as f64) > j as f64 { 1 } else { -1 };
    }
    j as f64 / k as f64 * f_s_mhz
}

fn power_spectrum(x: &[f64]) -> Vec<f64> {
    let k = x.len();
    let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(k).process(&mut buf);
    (0..=k / 2).map(|i| buf[i].norm_sqr()).collect()
}

fn alias_bin(bin: usize, k: usize) -> usize {
    let b = bin % k;
    if b > k / 2 {
        k - b
    } else {
        b
    }
}

/// Rectangular-window FFT metrics of a coherently sampled sine.
pub fn sndr_sine(codes: &[f64], f_in_mhz: f64, f_s_mhz: f64) -> Result<SpectralMetrics> {
    let k = codes.len();
    if k < 4096 || !k.is_power_of_two() {
        return Err(Error::Config(format!("record length {k} must be a power of two >= 4096")));
    }
    let cycles = f_in_mhz / f_s_mhz * k as f64;
    let j = cycles.round();
    if (cycles - j).abs() > 1e-6 || (j as i64) % 2 == 0 || j <= 0.0 || j as usize >= k / 2 {
        return Err(Error::NonCoherent { cycles });
    }
    let j = j as usize;
    let p = power_spectrum(codes);
    let signal = p[j];
    let total: f64 = p[1..].iter().sum();
    let noise_dist = total - signal;
    let mut harmonic_bins: Vec<usize> = (2..2 + HARMONICS_EXCLUDED).map(|h| alias_bin(h * j, k)).collect();
    harmonic_bins.sort_unstable();
    harmonic_bins.dedup();
    let harmonics: f64 = harmonic_bins.iter().filter(|&&b| b != 0 && b != j).map(|&b| p[b]).sum();
    let sndr_db = 10.0 * (signal / noise_dist).log10();
    let snr_db = 10.0 * (signal / (noise_dist - harmonics)).log10();
    Ok(SpectralMetrics { sndr_db, snr_db, enob: enob_from_sndr(sndr_db), signal_bin: j })
}

/// Signed in-phase amplitude at bin `j` relative to a sine reference
/// `sin(2π j n / K)`.
pub fn inphase_amplitude(x: &[f64], j: usize) -> f64 {
    let k = x.len() as f64;
    2.0 / k * x.iter().enumerate().map(|(n, &v)| v * (2.0 * PI * j as f64 * n as f64 / k).sin()).sum::<f64>()
}

pub fn nmse(a: ArrayView2<'_, f64>, reference: ArrayView2<'_, f64>) -> Result<f64> {
    if a.dim() != reference.dim() {
        return Err(Error::Dimension(format!("{:?} vs {:?}", a.dim(), reference.dim())));
    }
    let denom: f64 = reference.iter().map(|v| v * v).sum();
    if denom == 0.0 {
        return Err(Error::ZeroReference);
    }
    let num: f64 = a.iter().zip(reference.iter()).map(|(p, q)| (p - q) * (p - q)).sum();
    Ok(num / denom)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

pub fn fit_line(x: &[f64], y: &[f64]) -> LineFit {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx) * (v - mx)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = if sxx == 0.0 { 0.0 } else { sxy / sxx };
    let intercept = my - slope * mx;
    let ss_tot: f64 = y.iter().map(|v| (v - my) * (v - my)).sum();
    let ss_res: f64 = x.iter().zip(y).map(|(a, b)| (b - (slope * a + intercept)).powi(2)).sum();
    let r_squared = if ss_tot == 0.0 { if ss_res == 0.0 { 1.0 } else { 0.0 } } else { 1.0 - ss_res / ss_tot };
    LineFit { slope, intercept, r_squared }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LinearitySweepResult {
    /// Amplitude (Vpp at the AFE input) for weight sweeps, ΣW for input sweeps.
    pub fixed: f64,
    pub axis: Vec<f64>,
    pub mean_outputs: Vec<f64>,
    pub fit: LineFit,
}

/// Sine test setup shared by the linearity sweeps.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepSettings {
    pub f_in_target_mhz: f64,
    pub adc_rate_mhz: f64,
    /// Analog simulation runs at `oversample × adc_rate`.
    pub oversample: usize,
    pub record_len: usize,
}

impl Default for SweepSettings {
    fn default() -> Self {
        Self { f_in_target_mhz: 3.5, adc_rate_mhz: ADC_RATE_MHZ, oversample: 2, record_len: 4096 }
    }
}

impl SweepSettings {
    fn bin(&self) -> usize {
        let f = coherent_frequency(self.f_in_target_mhz, self.adc_rate_mhz, self.record_len);
        (f / self.adc_rate_mhz * self.record_len as f64).round() as usize
    }
}

/// All 16 AFE outputs for an identical sine of `vpp` at the AFE input,
/// decimated to the ADC grid. Settling transient is excluded by simulating
/// one extra record first.
fn driven_channels(vpp: f64, channels: usize, afe_cfg: &AfeConfig, s: &SweepSettings, noise_seed: u64) -> Result<Array2<f64>> {
    let fs = s.adc_rate_mhz * s.oversample as f64;
    let j = s.bin();
    let total = 2 * s.record_len * s.oversample;
    let amp = vpp / 2.0;
    let raw = Array2::from_shape_fn((channels, total), |(_, n)| {
        amp * (2.0 * PI * j as f64 * n as f64 / (s.record_len * s.oversample) as f64).sin()
    });
    let acoustic = AcousticConfig { sample_rate_mhz: fs, num_samples: total, ..Default::default() };
    let cfg = AfeConfig { noise_seed, ..afe_cfg.clone() };
    let out = afe::apply_afe(&RawSignalBlock::new(raw, fs), &cfg, &acoustic)?;
    let start = s.record_len * s.oversample;
    Ok(out.samples.slice(ndarray::s![.., start..;s.oversample]).to_owned())
}

/// In-phase fundamental amplitude of one ADC row's output, in volts.
fn row_amplitude(x: &Array2<f64>, weights: &[i8], bank: &CapBank, adc: &AdcConfig, noise_key: u64, j: usize) -> f64 {
    let k = x.ncols();
    let mut noise = (adc.comparator_noise_sigma > 0.0).then(|| {
        (
            rng::stream(adc.seed, Domain::Comparator, &[noise_key]),
            rand_distr::Normal::new(0.0, adc.comparator_noise_sigma).expect("finite sigma"),
        )
    });
    let mut col = vec![0.0; x.nrows()];
    let codes: Vec<f64> = (0..k)
        .map(|n| {
            for (c, v) in col.iter_mut().enumerate() {
                *v = x[[c, n]];
            }
            let v = mvm_adc::mac_sample(&col, weights, bank);
            let d = noise.as_mut().map_or(0.0, |(r, dist)| rand_distr::Distribution::sample(dist, r));
            mvm_adc::dequantize(mvm_adc::quantize(v, adc, d), adc.lsb())
        })
        .collect();
    inphase_amplitude(&codes, j)
}

fn count_configs(channels: usize, plus: usize, minus: usize) -> f64 {
    fn ln_fact(n: usize) -> f64 {
        (1..=n).map(|i| (i as f64).ln()).sum()
    }
    (ln_fact(channels) - ln_fact(plus) - ln_fact(minus) - ln_fact(channels - plus - minus)).exp()
}

/// Up to `count` distinct ternary vectors with the given sum, drawn
/// uniformly from all such vectors.
pub fn random_weights_with_sum<R: Rng>(sum: i32, channels: usize, count: usize, rng: &mut R) -> Vec<Vec<i8>> {
    let c = channels as i32;
    let pairs: Vec<(usize, usize, f64)> = (0..=c)
        .filter_map(|plus| {
            let minus = plus - sum;
            (minus >= 0 && plus + minus <= c).then(|| (plus as usize, minus as usize, count_configs(channels, plus as usize, minus as usize)))
        })
        .collect();
    let available: f64 = pairs.iter().map(|p| p.2).sum();
    let want = count.min(available.round() as usize);
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(want);
    while out.len() < want {
        let mut pick = rng.random::<f64>() * available;
        let &(plus, minus, _) = pairs
            .iter()
            .find(|p| {
                pick -= p.2;
                pick < 0.0
            })
            .unwrap_or(pairs.last().expect("sum within range"));
        let mut w = vec![0i8; channels];
        w[..plus].iter_mut().for_each(|v| *v = 1);
        w[plus..plus + minus].iter_mut().for_each(|v| *v = -1);
        w.shuffle(rng);
        if seen.insert(w.clone()) {
            out.push(w);
        }
    }
    out
}

/// Weight-sum sweep: for each amplitude, ΣW from −16 to 16, mean in-phase
/// output over up to `combos_per_sum` random weight vectors, fitted against ΣW.
pub fn linearity_weight_sweep(
    amplitudes_vpp: &[f64],
    afe_cfg: &AfeConfig,
    adc: &AdcConfig,
    combos_per_sum: usize,
    seed: u64,
    settings: &SweepSettings,
) -> Result<Vec<LinearitySweepResult>> {
    if combos_per_sum == 0 {
        return Err(Error::Config("combos_per_sum must be >= 1".into()));
    }
    let ch = adc.channels_per_adc;
    let bank = CapBank::draw(adc, 0);
    let j = settings.bin();
    amplitudes_vpp
        .iter()
        .enumerate()
        .map(|(ai, &vpp)| {
            let x = driven_channels(vpp, ch, afe_cfg, settings, seed ^ (ai as u64) << 32)?;
            let sums: Vec<i32> = (-(ch as i32)..=ch as i32).collect();
            let means: Vec<f64> = sums
                .par_iter()
                .map(|&sum| {
                    let mut rng = rng::stream(seed, Domain::Sweep, &[ai as u64, (sum + 1000) as u64]);
                    let combos = random_weights_with_sum(sum, ch, combos_per_sum, &mut rng);
                    let total: f64 = combos
                        .iter()
                        .enumerate()
                        .map(|(ci, w)| {
                            let key = ((ai as u64) << 40) ^ (((sum + 1000) as u64) << 20) ^ ci as u64;
                            row_amplitude(&x, w, &bank, adc, key, j)
                        })
                        .sum();
                    total / combos.len() as f64
                })
                .collect();
            let axis: Vec<f64> = sums.iter().map(|&s| s as f64).collect();
            let fit = fit_line(&axis, &means);
            Ok(LinearitySweepResult { fixed: vpp, axis, mean_outputs: means, fit })
        })
        .collect()
}

/// Input sweep: per nonzero ΣW, one random weight vector, output fitted
/// against input amplitude. ΣW = 0 is skipped because its output is constant.
pub fn linearity_input_sweep(
    sums: &[i32],
    amplitudes_vpp: &[f64],
    afe_cfg: &AfeConfig,
    adc: &AdcConfig,
    seed: u64,
    settings: &SweepSettings,
) -> Result<Vec<LinearitySweepResult>> {
    if amplitudes_vpp.len() < 3 {
        return Err(Error::Config("input sweep needs at least 3 amplitudes".into()));
    }
    let ch = adc.channels_per_adc;
    let bank = CapBank::draw(adc, 0);
    let j = settings.bin();
    let drives: Vec<Array2<f64>> = amplitudes_vpp
        .iter()
        .enumerate()
        .map(|(ai, &vpp)| driven_channels(vpp, ch, afe_cfg, settings, seed ^ (ai as u64) << 32))
        .collect::<Result<_>>()?;
    Ok(sums
        .par_iter()
        .filter(|&&s| s != 0)
        .map(|&sum| {
            let mut rng = rng::stream(seed, Domain::Sweep, &[u64::MAX, (sum + 1000) as u64]);
            let w = random_weights_with_sum(sum, ch, 1, &mut rng).remove(0);
            let outputs: Vec<f64> = drives
                .iter()
                .enumerate()
                .map(|(ai, x)| {
                    let key = (1u64 << 62) ^ (((sum + 1000) as u64) << 20) ^ ai as u64;
                    row_amplitude(x, &w, &bank, adc, key, j)
                })
                .collect();
            let fit = fit_line(amplitudes_vpp, &outputs);
            LinearitySweepResult { fixed: sum as f64, axis: amplitudes_vpp.to_vec(), mean_outputs: outputs, fit }
        })
        .collect())
}

/// Runs a coherent sine of `amplitude` volts through the quantizer with the
/// configured comparator noise and reports its spectral metrics.
pub fn adc_sine_test(adc: &AdcConfig, amplitude: f64, settings: &SweepSettings, record_len: usize) -> Result<SpectralMetrics> {
    let f = coherent_frequency(settings.f_in_target_mhz, settings.adc_rate_mhz, record_len);
    let j = (f / settings.adc_rate_mhz * record_len as f64).round();
    let mut noise = (adc.comparator_noise_sigma > 0.0).then(|| {
        (
            rng::stream(adc.seed, Domain::Comparator, &[u64::MAX - 1]),
            rand_distr::Normal::new(0.0, adc.comparator_noise_sigma).expect("finite sigma"),
        )
    });
    let codes: Vec<f64> = (0..record_len)
        .map(|n| {
            let v = amplitude * (2.0 * PI * j * n as f64 / record_len as f64).sin();
            let d = noise.as_mut().map_or(0.0, |(r, dist)| rand_distr::Distribution::sample(dist, r));
            mvm_adc::quantize(v, adc, d) as f64
        })
        .collect();
    sndr_sine(&codes, f, settings.adc_rate_mhz)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nmse_examples() {
        let b = Array2::from_shape_fn((3, 4), |(i, j)| (i * 4 + j) as f64 - 5.0);
        assert_eq!(nmse(b.view(), b.view()).unwrap(), 0.0);
        assert_eq!(nmse(Array2::zeros((3, 4)).view(), b.view()).unwrap(), 1.0);
        assert_eq!(nmse((&b + &b).view(), b.view()).unwrap(), 1.0);
        assert!(matches!(nmse(b.view(), Array2::zeros((3, 4)).view()), Err(Error::ZeroReference)));
        assert!(nmse(b.view(), Array2::zeros((4, 3)).view()).is_err());
    }

    #[test]
    fn exact_affine_fit() {
        let x: Vec<f64> = (-16..=16).map(|v| v as f64).collect();
        let y: Vec<f64> = x.iter().map(|v| 0.37 * v - 1.5).collect();
        let f = fit_line(&x, &y);
        assert!((f.r_squared - 1.0).abs() < 1e-12);
        assert!((f.slope - 0.37).abs() < 1e-12);
    }

    #[test]
    fn coherence_is_enforced() {
        let k = 4096;
        let codes = vec![0.0; k];
        assert!(matches!(sndr_sine(&codes, 3.5, 20.41, ), Err(Error::NonCoherent { .. })));
        assert!(sndr_sine(&codes[..1000], 1.0, 20.0).is_err());
        let f = coherent_frequency(3.5, 20.41, k);
        let j = (f / 20.41 * k as f64).round() as i64;
        assert_eq!(j % 2, 1);
        assert!((f - 3.5).abs() < 20.41 / k as f64 * 1.01);
    }

    #[test]
    fn inphase_sign_tracks_polarity() {
        let k = 4096;
        let x: Vec<f64> = (0..k).map(|n| -0.25 * (2.0 * PI * 51.0 * n as f64 / k as f64).sin()).collect();
        assert!((inphase_amplitude(&x, 51) + 0.25).abs() < 1e-12);
    }

    #[test]
    fn weight_sampling() {
        let mut rng = rng::stream(1, Domain::Sweep, &[]);
        let w = random_weights_with_sum(16, 16, 50, &mut rng);
        assert_eq!(w, vec![vec![1i8; 16]]);
        let w = random_weights_with_sum(-3, 16, 50, &mut rng);
        assert_eq!(w.len(), 50);
        assert!(w.iter().all(|v| v.iter().map(|&x| x as i32).sum::<i32>() == -3));
        let distinct: HashSet<_> = w.iter().collect();
        assert_eq!(distinct.len(), 50);
        let w = random_weights_with_sum(15, 16, 50, &mut rng);
        // 16 ways with fifteen +1 and one 0.
        assert_eq!(w.len(), 16);
    }
}
