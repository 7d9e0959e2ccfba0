//! Behavioral model of the matrix-vector-multiplying SAR ADC.
//!
//! Each ADC row samples the 16 AFE outputs onto 16 equal capacitor banks
//! (64 unit capacitors each) with ternary bottom-plate selection, shares the
//! charge over the full 1024-unit array and then converts the top-plate
//! voltage with an ideal midrise SAR transfer plus comparator noise.
//!
//! Charge conservation gives `V = Σ wᵢ xᵢ · Cᵢ / C_total`, i.e. `(1/16) Σ wᵢ xᵢ`
//! for matched banks. All voltages are differential with V_cm = 0.

use ndarray::{Array2, ArrayView2};
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::block::RawSignalBlock;
use crate::error::{Error, Result};
use crate::matrices::MeasurementMatrix;
use crate::rng::{self, Domain};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdcConfig {
    pub bits: u32,
    pub full_scale: f64,
    pub channels_per_adc: usize,
    pub unit_caps_per_channel: usize,
    pub total_unit_caps: usize,
    /// MVM ADCs on one chip; a chip serves `channels_per_adc` inputs.
    pub adcs_per_chip: usize,
    /// Relative σ of one unit capacitor.
    pub cap_mismatch_sigma: f64,
    /// Comparator input-referred noise, volts rms.
    pub comparator_noise_sigma: f64,
    pub seed: u64,
}

impl Default for AdcConfig {
    fn default() -> Self {
        Self {
            bits: 10,
            full_scale: 1.0,
            channels_per_adc: 16,
            unit_caps_per_channel: 64,
            total_unit_caps: 1024,
            adcs_per_chip: 4,
            cap_mismatch_sigma: 0.0,
            comparator_noise_sigma: 0.0,
            seed: 0,
        }
    }
}

/// SNDR of the measured converter, dB.
pub const MEASURED_SNDR_DB: f64 = 57.51;
/// Unit-capacitor mismatch used for the chip-level configuration.
pub const CHIP_CAP_MISMATCH_SIGMA: f64 = 0.01;

impl AdcConfig {
    /// Configuration with capacitor mismatch and comparator noise chosen so a
    /// full-scale sine converts at the measured 57.51 dB SNDR.
    pub fn chip_level(seed: u64) -> Self {
        let base = Self { cap_mismatch_sigma: CHIP_CAP_MISMATCH_SIGMA, seed, ..Default::default() };
        let sigma = base.noise_sigma_for_sndr(MEASURED_SNDR_DB, base.full_scale);
        Self { comparator_noise_sigma: sigma, ..base }
    }

    pub fn validate(&self) -> Result<()> {
        if self.bits == 0 || self.bits > 16 {
            return Err(Error::Config(format!("adc.bits {} outside 1..=16", self.bits)));
        }
        if self.total_unit_caps != self.channels_per_adc * self.unit_caps_per_channel {
            return Err(Error::Config(format!(
                "adc.total_unit_caps {} != channels_per_adc {} x unit_caps_per_channel {}",
                self.total_unit_caps, self.channels_per_adc, self.unit_caps_per_channel
            )));
        }
        if !(self.full_scale > 0.0) || self.adcs_per_chip == 0 {
            return Err(Error::Config("adc.full_scale and adc.adcs_per_chip must be positive".into()));
        }
        if !(self.cap_mismatch_sigma >= 0.0 && self.comparator_noise_sigma >= 0.0) {
            return Err(Error::Config("adc noise and mismatch must be non-negative".into()));
        }
        Ok(())
    }

    /// Volts per LSB.
    pub fn lsb(&self) -> f64 {
        2.0 * self.full_scale / (1u64 << self.bits) as f64
    }

    pub fn code_range(&self) -> (i32, i32) {
        let half = 1i32 << (self.bits - 1);
        (-half, half - 1)
    }

    /// Charge-sharing factor of one matched bank, `64 / 1024`.
    pub fn mac_scale(&self) -> f64 {
        self.unit_caps_per_channel as f64 / self.total_unit_caps as f64
    }

    /// Additive noise σ that brings a sine of `amplitude` to `target_db` SNDR
    /// given the ideal quantization noise Δ²/12.
    pub fn noise_sigma_for_sndr(&self, target_db: f64, amplitude: f64) -> f64 {
        let signal = amplitude * amplitude / 2.0;
        let total = signal / 10f64.powf(target_db / 10.0);
        let q = self.lsb() * self.lsb() / 12.0;
        (total - q).max(0.0).sqrt()
    }
}

/// Capacitor values of the 16 sampling banks of one ADC, in unit capacitances.
#[derive(Debug, Clone, PartialEq)]
pub struct CapBank {
    pub caps: Vec<f64>,
    pub total: f64,
}

impl CapBank {
    pub fn matched(cfg: &AdcConfig) -> Self {
        let c = cfg.unit_caps_per_channel as f64;
        Self { caps: vec![c; cfg.channels_per_adc], total: cfg.total_unit_caps as f64 }
    }

    /// Bank of physical ADC `adc`; identical wherever that ADC is reused.
    pub fn draw(cfg: &AdcConfig, adc: usize) -> Self {
        if cfg.cap_mismatch_sigma == 0.0 {
            return Self::matched(cfg);
        }
        let mut rng = rng::stream(cfg.seed, Domain::CapBank, &[adc as u64]);
        let unit = Normal::new(1.0, cfg.cap_mismatch_sigma).expect("finite sigma");
        let caps: Vec<f64> = (0..cfg.channels_per_adc)
            .map(|_| (0..cfg.unit_caps_per_channel).map(|_| unit.sample(&mut rng).max(0.0)).sum())
            .collect();
        let total = caps.iter().sum();
        Self { caps, total }
    }
}

/// Top-plate voltage after charge sharing: `Σ wᵢ xᵢ (Cᵢ / C_total)`.
pub fn mac_sample(x: &[f64], row: &[i8], bank: &CapBank) -> f64 {
    debug_assert_eq!(x.len(), row.len());
    let mut acc = 0.0;
    for ((&xi, &w), &c) in x.iter().zip(row).zip(&bank.caps) {
        acc += w as f64 * xi * (c / bank.total);
    }
    acc
}

/// Midrise quantizer with symmetric clamping.
pub fn quantize(v: f64, cfg: &AdcConfig, noise_draw: f64) -> i32 {
    let (lo, hi) = cfg.code_range();
    let code = ((v + noise_draw) / cfg.lsb()).floor();
    if code.is_nan() {
        return 0;
    }
    code.clamp(lo as f64, hi as f64) as i32
}

/// Reconstruction level of a midrise code.
pub fn dequantize(code: i32, lsb: f64) -> f64 {
    (code as f64 + 0.5) * lsb
}

/// Output codes of one acquisition.
#[derive(Debug, Clone, PartialEq)]
pub struct CompressedBlock {
    pub codes: Array2<i32>,
    pub bits: u32,
    pub scale_v_per_lsb: f64,
    pub mac_scale: f64,
    pub sample_rate_mhz: f64,
    pub matrix_id: String,
}

impl CompressedBlock {
    pub fn rows(&self) -> usize {
        self.codes.nrows()
    }

    /// Measurements in the units of `Φ·X`: codes to volts, then undo the
    /// charge-sharing factor.
    pub fn measurements(&self) -> Array2<f64> {
        let lsb = self.scale_v_per_lsb;
        let k = 1.0 / self.mac_scale;
        self.codes.mapv(|c| dequantize(c, lsb) * k)
    }

    /// Concatenates acquisitions row-wise (e.g. the passes of an identity
    /// schedule).
    pub fn stack(parts: &[CompressedBlock], matrix_id: impl Into<String>) -> Result<Self> {
        let first = parts.first().ok_or_else(|| Error::Dimension("nothing to stack".into()))?;
        if parts.iter().any(|p| {
            p.codes.ncols() != first.codes.ncols()
                || p.scale_v_per_lsb != first.scale_v_per_lsb
                || p.mac_scale != first.mac_scale
                || p.bits != first.bits
        }) {
            return Err(Error::Dimension("stacked compressed blocks must share length and scaling".into()));
        }
        let views: Vec<_> = parts.iter().map(|p| p.codes.view()).collect();
        let codes = ndarray::concatenate(ndarray::Axis(0), &views).expect("matching widths");
        Ok(Self { codes, matrix_id: matrix_id.into(), ..first.clone() })
    }
}

/// Assigns every matrix row to `(chip, adc)`: the chip whose 16 columns
/// contain the row's support, and the next free ADC on that chip.
fn assign_rows(phi: &MeasurementMatrix, cfg: &AdcConfig) -> Result<Vec<(usize, usize)>> {
    let per = cfg.channels_per_adc;
    if !phi.m_cols().is_multiple_of(per) {
        return Err(Error::Dimension(format!(
            "matrix has {} columns, not a multiple of {} channels per chip",
            phi.m_cols(),
            per
        )));
    }
    let chips = phi.m_cols() / per;
    let mut used = vec![0usize; chips];
    (0..phi.n_rows())
        .map(|r| {
            let (first, last) = phi.row_support(r);
            let chip = first / per;
            if last / per != chip {
                return Err(Error::Dimension(format!("row {r} spans more than one chip")));
            }
            let adc = used[chip];
            if adc >= cfg.adcs_per_chip {
                return Err(Error::Dimension(format!(
                    "chip {chip} needs more than {} ADC rows",
                    cfg.adcs_per_chip
                )));
            }
            used[chip] += 1;
            Ok((chip, adc))
        })
        .collect()
}

/// Compresses one acquisition. Comparator noise is keyed by
/// `(seed, stream_base + chip, adc)` so a composite block-diagonal acquisition
/// and its per-position pieces draw identical noise.
pub fn compress_block_with_stream(
    signals: &RawSignalBlock,
    phi: &MeasurementMatrix,
    cfg: &AdcConfig,
    stream_base: u64,
) -> Result<CompressedBlock> {
    cfg.validate()?;
    if signals.channels() != phi.m_cols() {
        return Err(Error::Dimension(format!(
            "signals have {} channels, matrix has {} columns",
            signals.channels(),
            phi.m_cols()
        )));
    }
    let assignment = assign_rows(phi, cfg)?;
    let per = cfg.channels_per_adc;
    let t = signals.num_samples();
    // Channel-major copy of each time sample's 16-vector per chip.
    let columns: Vec<Vec<f64>> = (0..t).map(|j| signals.samples.column(j).to_vec()).collect();

    let rows: Vec<Vec<i32>> = assignment
        .par_iter()
        .enumerate()
        .map(|(r, &(chip, adc))| {
            let bank = CapBank::draw(cfg, adc);
            let weights = &phi.row(r)[chip * per..(chip + 1) * per];
            let noise = (cfg.comparator_noise_sigma > 0.0).then(|| {
                (
                    rng::stream(cfg.seed, Domain::Comparator, &[stream_base + chip as u64, adc as u64]),
                    Normal::new(0.0, cfg.comparator_noise_sigma).expect("finite sigma"),
                )
            });
            let mut noise = noise;
            columns
                .iter()
                .map(|col| {
                    let v = mac_sample(&col[chip * per..(chip + 1) * per], weights, &bank);
                    let n = noise.as_mut().map_or(0.0, |(rng, d)| d.sample(rng));
                    quantize(v, cfg, n)
                })
                .collect()
        })
        .collect();

    let mut codes = Array2::zeros((phi.n_rows(), t));
    for (r, row) in rows.into_iter().enumerate() {
        codes.row_mut(r).assign(&ndarray::Array1::from(row));
    }
    Ok(CompressedBlock {
        codes,
        bits: cfg.bits,
        scale_v_per_lsb: cfg.lsb(),
        mac_scale: cfg.mac_scale(),
        sample_rate_mhz: signals.sample_rate_mhz,
        matrix_id: String::new(),
    })
}

pub fn compress_block(signals: &RawSignalBlock, phi: &MeasurementMatrix, cfg: &AdcConfig) -> Result<CompressedBlock> {
    compress_block_with_stream(signals, phi, cfg, 0)
}

/// Exact `(1/16) Φ X`: no quantization, no mismatch.
pub fn ideal_mvm(signals: ArrayView2<'_, f64>, phi: &MeasurementMatrix, cfg: &AdcConfig) -> Result<Array2<f64>> {
    let per = cfg.channels_per_adc;
    if signals.nrows() != phi.m_cols() {
        return Err(Error::Dimension(format!(
            "signals have {} channels, matrix has {} columns",
            signals.nrows(),
            phi.m_cols()
        )));
    }
    let scale = cfg.mac_scale();
    let t = signals.ncols();
    let mut out = Array2::zeros((phi.n_rows(), t));
    for r in 0..phi.n_rows() {
        let row = phi.row(r);
        // Same accumulation order as `mac_sample` over the row's chip.
        let (first, _) = phi.row_support(r);
        let chip = first / per;
        let lo = chip * per;
        let hi = (lo + per).min(phi.m_cols());
        for j in 0..t {
            let mut acc = 0.0;
            for c in lo..hi {
                acc += row[c] as f64 * signals[[c, j]] * scale;
            }
            out[[r, j]] = acc;
        }
    }
    Ok(out)
}

/// `quantize` applied elementwise with no noise.
pub fn quantize_block(v: ArrayView2<'_, f64>, cfg: &AdcConfig) -> Array2<i32> {
    v.mapv(|x| quantize(x, cfg, 0.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mac_examples() {
        let cfg = AdcConfig::default();
        let bank = CapBank::matched(&cfg);
        let x: Vec<f64> = (0..16).map(|i| 0.05 * i as f64 - 0.3).collect();
        assert_eq!(mac_sample(&x, &[0; 16], &bank), 0.0);
        assert!((mac_sample(&[0.37; 16], &[1; 16], &bank) - 0.37).abs() < 1e-15);
        let mut one = [0i8; 16];
        one[5] = 1;
        assert_eq!(mac_sample(&x, &one, &bank), x[5] / 16.0);
    }

    #[test]
    fn quantizer_examples() {
        let cfg = AdcConfig::default();
        let d = cfg.lsb();
        assert_eq!(d, 2.0 / 1024.0);
        assert_eq!(quantize(0.0, &cfg, 0.0), 0);
        assert_eq!(quantize(1.0 - d / 2.0, &cfg, 0.0), 511);
        assert_eq!(quantize(-2.0, &cfg, 0.0), -512);
        assert_eq!(quantize(5.0, &cfg, 0.0), 511);
        assert_eq!(quantize(-d / 2.0, &cfg, 0.0), -1);
    }

    #[test]
    fn matched_bank_and_mismatch() {
        let cfg = AdcConfig::default();
        let b = CapBank::draw(&cfg, 0);
        assert!(b.caps.iter().all(|&c| c == 64.0));
        assert_eq!(b.total, 1024.0);
        let mis = AdcConfig { cap_mismatch_sigma: 0.05, seed: 3, ..cfg };
        let b0 = CapBank::draw(&mis, 0);
        assert_eq!(b0, CapBank::draw(&mis, 0));
        assert_ne!(b0, CapBank::draw(&mis, 1));
        assert!(b0.caps.iter().all(|&c| c > 0.0));
        assert!((b0.total - b0.caps.iter().sum::<f64>()).abs() < 1e-9);
    }

    #[test]
    fn chip_level_noise_matches_target() {
        let cfg = AdcConfig::chip_level(0);
        let q = cfg.lsb().powi(2) / 12.0;
        let sndr = 10.0 * (0.5 / (q + cfg.comparator_noise_sigma.powi(2))).log10();
        assert!((sndr - MEASURED_SNDR_DB).abs() < 1e-9);
    }

    #[test]
    fn compress_rejects_mismatch() {
        let cfg = AdcConfig::default();
        let phi = crate::matrices::random_ternary(4, 16, 0.0, 1).unwrap();
        let signals = RawSignalBlock::zeros(8, 10, 20.0);
        assert!(matches!(compress_block(&signals, &phi, &cfg), Err(Error::Dimension(_))));
        let five = crate::matrices::random_ternary(5, 16, 0.0, 1).unwrap();
        assert!(compress_block(&RawSignalBlock::zeros(16, 4, 20.0), &five, &cfg).is_err());
        assert!(ideal_mvm(signals.view(), &phi, &cfg).is_err());
    }

    #[test]
    fn zero_signals_give_zero_codes() {
        let cfg = AdcConfig::default();
        let phi = crate::matrices::random_ternary(4, 16, 0.3, 2).unwrap();
        let out = compress_block(&RawSignalBlock::zeros(16, 1000, 20.41), &phi, &cfg).unwrap();
        assert_eq!(out.codes.dim(), (4, 1000));
        assert!(out.codes.iter().all(|&c| c == 0));
    }

    #[test]
    fn ideal_mvm_examples() {
        let cfg = AdcConfig::default();
        let x = Array2::from_shape_fn((16, 3), |(c, t)| (c as f64 + 1.0) * 0.01 * (t as f64 - 1.0));
        let id = MeasurementMatrix::identity(16);
        let mut id_rows = Vec::new();
        for p in crate::matrices::identity_schedule(16, 4).unwrap() {
            id_rows.push(ideal_mvm(x.view(), &p, &cfg).unwrap());
        }
        let views: Vec<_> = id_rows.iter().map(|a| a.view()).collect();
        let stacked = ndarray::concatenate(ndarray::Axis(0), &views).unwrap();
        assert_eq!(stacked, &x / 16.0);
        assert_eq!(ideal_mvm(x.view(), &id, &cfg).unwrap(), &x / 16.0);

        let neg = MeasurementMatrix::from_rows(&[[-1i8; 16]]).unwrap();
        let a = Array2::from_elem((16, 1), 0.3);
        assert!((ideal_mvm(a.view(), &neg, &cfg).unwrap()[[0, 0]] + 0.3).abs() < 1e-15);
    }

    #[test]
    fn noise_streams_are_keyed() {
        let cfg = AdcConfig { comparator_noise_sigma: 0.01, seed: 4, ..Default::default() };
        let phi = crate::matrices::random_ternary(4, 16, 0.0, 2).unwrap();
        let s = RawSignalBlock::zeros(16, 256, 20.41);
        let a = compress_block_with_stream(&s, &phi, &cfg, 0).unwrap();
        assert_eq!(a, compress_block_with_stream(&s, &phi, &cfg, 0).unwrap());
        assert_ne!(a.codes, compress_block_with_stream(&s, &phi, &cfg, 1).unwrap().codes);
    }
}
