//! Synthetic phantoms, transducer geometry and the acoustic forward model.
//!
//! Units throughout: millimetres, microseconds, megahertz. Sound speed is
//! configured in m/s and converted (1 m/s = 1e-3 mm/µs).

use ndarray::Array2;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::block::RawSignalBlock;
use crate::error::{Error, Result};
use crate::rng::{self, Domain};

/// Distance floor for absorbers adjacent to an element.
pub const DISTANCE_FLOOR_MM: f64 = 0.1;

/// Planar grid of point receivers at z = 0.
///
/// Element `(r, c)` sits at `(c * pitch, r * pitch, 0)` and has channel index
/// `r * cols + c`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransducerArray {
    pub rows: usize,
    pub cols: usize,
    pub pitch_mm: f64,
    pub center_frequency_mhz: f64,
    pub fractional_bandwidth: f64,
}

impl Default for TransducerArray {
    fn default() -> Self {
        Self { rows: 4, cols: 4, pitch_mm: 1.0, center_frequency_mhz: 3.5, fractional_bandwidth: 1.0 }
    }
}

impl TransducerArray {
    pub fn new(rows: usize, cols: usize, pitch_mm: f64, center_frequency_mhz: f64, fractional_bandwidth: f64) -> Result<Self> {
        let array = Self { rows, cols, pitch_mm, center_frequency_mhz, fractional_bandwidth };
        array.validate()?;
        Ok(array)
    }

    pub fn validate(&self) -> Result<()> {
        if self.rows == 0 || self.cols == 0 {
            return Err(Error::Config("array must have at least one row and one column".into()));
        }
        if !(self.pitch_mm > 0.0) {
            return Err(Error::Config("array pitch must be positive".into()));
        }
        if !(self.center_frequency_mhz > 0.0) {
            return Err(Error::Config("center frequency must be positive".into()));
        }
        if !(self.fractional_bandwidth > 0.0 && self.fractional_bandwidth <= 2.0) {
            return Err(Error::Config(format!(
                "fractional bandwidth {} outside (0, 2]",
                self.fractional_bandwidth
            )));
        }
        Ok(())
    }

    pub fn num_elements(&self) -> usize {
        self.rows * self.cols
    }

    pub fn element_positions(&self) -> Vec<[f64; 3]> {
        let mut out = Vec::with_capacity(self.num_elements());
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.push([c as f64 * self.pitch_mm, r as f64 * self.pitch_mm, 0.0]);
            }
        }
        out
    }

    /// Physical extent `[x, y]` covered by one placement of the array.
    pub fn extent_mm(&self) -> [f64; 2] {
        [self.cols as f64 * self.pitch_mm, self.rows as f64 * self.pitch_mm]
    }

    /// Upper edge of the transducer passband.
    pub fn band_edge_mhz(&self) -> f64 {
        self.center_frequency_mhz * (1.0 + self.fractional_bandwidth / 2.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointAbsorber {
    pub position: [f64; 3],
    pub amplitude: f64,
}

impl PointAbsorber {
    pub fn new(position: [f64; 3], amplitude: f64) -> Result<Self> {
        if !(position[2] > 0.0) {
            return Err(Error::Config(format!("absorber depth {} must be above the array plane", position[2])));
        }
        if !(amplitude >= 0.0) {
            return Err(Error::Config(format!("absorber amplitude {amplitude} must be non-negative")));
        }
        Ok(Self { position, amplitude })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Phantom {
    pub name: String,
    pub absorbers: Vec<PointAbsorber>,
}

impl Phantom {
    pub fn empty() -> Self {
        Self { name: "empty".into(), absorbers: Vec::new() }
    }

    /// Amplitude-scaled copy.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            name: self.name.clone(),
            absorbers: self
                .absorbers
                .iter()
                .map(|a| PointAbsorber { position: a.position, amplitude: a.amplitude * factor })
                .collect(),
        }
    }

    pub fn translated(&self, by: [f64; 3]) -> Self {
        Self {
            name: self.name.clone(),
            absorbers: self
                .absorbers
                .iter()
                .map(|a| PointAbsorber {
                    position: [a.position[0] + by[0], a.position[1] + by[1], a.position[2] + by[2]],
                    amplitude: a.amplitude,
                })
                .collect(),
        }
    }

    /// Disjoint union of two phantoms.
    pub fn union(&self, other: &Phantom) -> Self {
        let mut absorbers = self.absorbers.clone();
        absorbers.extend_from_slice(&other.absorbers);
        Self { name: format!("{}+{}", self.name, other.name), absorbers }
    }

    pub fn max_depth_mm(&self) -> f64 {
        self.absorbers.iter().map(|a| a.position[2]).fold(0.0, f64::max)
    }
}

/// Spacing between consecutive absorbers along a hair or across the I plane,
/// well under a quarter wavelength at 3.5 MHz.
const CHAIN_SPACING_MM: f64 = 0.1;
const HAIR_AMPLITUDE: f64 = 1.0e-3;
const ISHAPE_AMPLITUDE: f64 = 2.0e-4;

/// One straight hair from `start` to `end`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HairSegment {
    pub start: [f64; 3],
    pub end: [f64; 3],
}

impl HairSegment {
    fn sample(&self, amplitude: f64) -> Vec<PointAbsorber> {
        let d = [self.end[0] - self.start[0], self.end[1] - self.start[1], self.end[2] - self.start[2]];
        let length = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
        let n = (length / CHAIN_SPACING_MM).round().max(1.0) as usize;
        (0..=n)
            .map(|i| {
                let f = i as f64 / n as f64;
                PointAbsorber {
                    position: [self.start[0] + f * d[0], self.start[1] + f * d[1], self.start[2] + f * d[2]],
                    amplitude,
                }
            })
            .collect()
    }
}

/// Segment geometry for the five-hair phantom.
///
/// Hairs run roughly along y across the 24 mm span of a six-step scan of a
/// 4×4 array, one per depth band between 6 and 14 mm.
pub fn hair_segments(seed: u64) -> Vec<HairSegment> {
    let mut rng = rng::stream(seed, Domain::Phantom, &[0]);
    (0..5)
        .map(|k| {
            let depth = 6.0 + 2.0 * k as f64 + rng.random_range(-0.4..0.4);
            let x0 = rng.random_range(0.0..3.0);
            let x1 = rng.random_range(0.0..3.0);
            let y0 = rng.random_range(0.0..4.0);
            let y1 = rng.random_range(19.0..23.0);
            let dz = rng.random_range(-0.5..0.5);
            HairSegment { start: [x0, y0, depth], end: [x1, y1, depth + dz] }
        })
        .collect()
}

pub fn generate_hair_phantom(seed: u64) -> Phantom {
    let absorbers = hair_segments(seed).iter().flat_map(|s| s.sample(HAIR_AMPLITUDE)).collect();
    Phantom { name: format!("hair-{seed}"), absorbers }
}

/// Stroke rectangles `[x0, x1] × [y0, y1]` of the I silhouette.
pub const ISHAPE_STROKES: [[f64; 4]; 3] = [
    [8.0, 23.0, 2.0, 4.0],
    [14.0, 17.0, 4.0, 11.0],
    [8.0, 23.0, 11.0, 13.0],
];
pub const ISHAPE_DEPTH_MM: f64 = 8.0;

/// Filled "I" in the plane z = 8 mm, sized for an 8×4 scan grid of a 4×4
/// array (32 mm in x, 16 mm in y). Symmetric about x = 15.5.
pub fn generate_ishape_phantom() -> Phantom {
    let step = 2.0 * CHAIN_SPACING_MM;
    let mut absorbers = Vec::new();
    let (x_lo, x_hi) = (8.0, 23.0);
    let (y_lo, y_hi) = (2.0, 13.0);
    let nx = ((x_hi - x_lo) / step).round() as usize;
    let ny = ((y_hi - y_lo) / step).round() as usize;
    for iy in 0..=ny {
        let y = y_lo + iy as f64 * step;
        for ix in 0..=nx {
            let x = x_lo + ix as f64 * step;
            let inside = ISHAPE_STROKES
                .iter()
                .any(|r| x >= r[0] - 1e-9 && x <= r[1] + 1e-9 && y >= r[2] - 1e-9 && y <= r[3] + 1e-9);
            if inside {
                absorbers.push(PointAbsorber { position: [x, y, ISHAPE_DEPTH_MM], amplitude: ISHAPE_AMPLITUDE });
            }
        }
    }
    Phantom { name: "ishape".into(), absorbers }
}

/// Simulation timing and medium.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AcousticConfig {
    pub sound_speed_m_s: f64,
    pub sample_rate_mhz: f64,
    pub num_samples: usize,
    /// Tissue attenuation in dB/cm/MHz; `None` disables it.
    pub attenuation_db_cm_mhz: Option<f64>,
    pub seed: u64,
}

impl Default for AcousticConfig {
    fn default() -> Self {
        Self {
            sound_speed_m_s: 1500.0,
            sample_rate_mhz: 40.82,
            num_samples: 1024,
            attenuation_db_cm_mhz: None,
            seed: 0,
        }
    }
}

impl AcousticConfig {
    /// Sound speed in mm/µs.
    pub fn sound_speed_mm_us(&self) -> f64 {
        self.sound_speed_m_s * 1e-3
    }

    /// Millimetres of path per sample.
    pub fn mm_per_sample(&self) -> f64 {
        self.sound_speed_mm_us() / self.sample_rate_mhz
    }

    /// Longest propagation distance the record covers.
    pub fn reachable_distance_mm(&self) -> f64 {
        (self.num_samples.saturating_sub(1)) as f64 * self.mm_per_sample()
    }

    pub fn validate(&self, array: &TransducerArray) -> Result<()> {
        if !(self.sound_speed_m_s > 0.0) {
            return Err(Error::Config("sound speed must be positive".into()));
        }
        if self.num_samples == 0 {
            return Err(Error::Config("num_samples must be >= 1".into()));
        }
        let edge = array.band_edge_mhz();
        if !(self.sample_rate_mhz > 2.0 * edge) {
            return Err(Error::Nyquist { sample_rate_mhz: self.sample_rate_mhz, band_edge_mhz: edge });
        }
        Ok(())
    }
}

/// Gaussian-modulated cosine whose −6 dB amplitude bandwidth equals
/// `fractional_bandwidth × center_frequency`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pulse {
    pub center_frequency_mhz: f64,
    pub sigma_us: f64,
}

impl Pulse {
    pub fn for_array(array: &TransducerArray) -> Self {
        let bandwidth = array.fractional_bandwidth * array.center_frequency_mhz;
        // Spectral sigma such that exp(-(B/2)^2 / (2 s^2)) = 1/2.
        let sigma_f = bandwidth / (2.0 * (2.0 * std::f64::consts::LN_2).sqrt());
        Self {
            center_frequency_mhz: array.center_frequency_mhz,
            sigma_us: 1.0 / (2.0 * std::f64::consts::PI * sigma_f),
        }
    }

    pub fn value(&self, tau_us: f64) -> f64 {
        let e = tau_us / self.sigma_us;
        (-0.5 * e * e).exp() * (2.0 * std::f64::consts::PI * self.center_frequency_mhz * tau_us).cos()
    }

    /// Half-width beyond which the envelope is below 1e-6.
    pub fn support_us(&self) -> f64 {
        5.3 * self.sigma_us
    }
}

/// Receive traces for explicit element positions.
pub fn simulate_elements(
    phantom: &Phantom,
    elements: &[[f64; 3]],
    array: &TransducerArray,
    cfg: &AcousticConfig,
) -> Result<RawSignalBlock> {
    array.validate()?;
    cfg.validate(array)?;
    let reach = cfg.reachable_distance_mm();
    if phantom.max_depth_mm() > reach {
        return Err(Error::Coverage(format!(
            "deepest absorber at {:.3} mm, record reaches {:.3} mm",
            phantom.max_depth_mm(),
            reach
        )));
    }
    let pulse = Pulse::for_array(array);
    let c = cfg.sound_speed_mm_us();
    let fs = cfg.sample_rate_mhz;
    let t_len = cfg.num_samples;
    let support = pulse.support_us();
    // dB/cm/MHz -> nepers per mm at the center frequency.
    let alpha_np_mm = cfg
        .attenuation_db_cm_mhz
        .map(|a| a * array.center_frequency_mhz / 10.0 * std::f64::consts::LN_10 / 20.0);

    let rows: Vec<Vec<f64>> = elements
        .par_iter()
        .map(|e| {
            let mut trace = vec![0.0; t_len];
            for a in &phantom.absorbers {
                let dx = a.position[0] - e[0];
                let dy = a.position[1] - e[1];
                let dz = a.position[2] - e[2];
                let dist = (dx * dx + dy * dy + dz * dz).sqrt();
                let mut gain = a.amplitude / dist.max(DISTANCE_FLOOR_MM);
                if let Some(alpha) = alpha_np_mm {
                    gain *= (-alpha * dist).exp();
                }
                let delay = dist / c;
                let lo = ((delay - support) * fs).ceil().max(0.0) as usize;
                let hi = (((delay + support) * fs).floor() as isize).min(t_len as isize - 1);
                if hi < lo as isize {
                    continue;
                }
                for (i, v) in trace.iter_mut().enumerate().take(hi as usize + 1).skip(lo) {
                    *v += gain * pulse.value(i as f64 / fs - delay);
                }
            }
            trace
        })
        .collect();

    let mut samples = Array2::zeros((elements.len(), t_len));
    for (mut row, trace) in samples.rows_mut().into_iter().zip(rows) {
        row.assign(&ndarray::Array1::from(trace));
    }
    Ok(RawSignalBlock::new(samples, fs))
}

/// Per-element pressure-equivalent traces of `phantom` seen by `array`.
pub fn forward_simulate(phantom: &Phantom, array: &TransducerArray, cfg: &AcousticConfig) -> Result<RawSignalBlock> {
    simulate_elements(phantom, &array.element_positions(), array, cfg)
}

/// In-plane displacements of the array, one acquisition per offset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanSchedule {
    pub offsets: Vec<[f64; 2]>,
}

impl ScanSchedule {
    pub fn single() -> Self {
        Self { offsets: vec![[0.0, 0.0]] }
    }

    /// `steps` placements along y, each one array extent apart.
    pub fn along_y(array: &TransducerArray, steps: usize) -> Self {
        Self::grid(array, 1, steps)
    }

    /// Row-major grid: y is the outer (row) index, x the inner.
    pub fn grid(array: &TransducerArray, nx: usize, ny: usize) -> Self {
        let [ex, ey] = array.extent_mm();
        let mut offsets = Vec::with_capacity(nx * ny);
        for iy in 0..ny {
            for ix in 0..nx {
                offsets.push([ix as f64 * ex, iy as f64 * ey]);
            }
        }
        Self { offsets }
    }

    pub fn len(&self) -> usize {
        self.offsets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.offsets.is_empty()
    }

    /// Offsets must be whole multiples of the array extent and distinct, so
    /// emulated tiles never overlap.
    pub fn validate(&self, array: &TransducerArray) -> Result<()> {
        if self.offsets.is_empty() {
            return Err(Error::Config("scan schedule has no offsets".into()));
        }
        let ext = array.extent_mm();
        let mut tiles = Vec::with_capacity(self.offsets.len());
        for (i, o) in self.offsets.iter().enumerate() {
            let mut tile = [0i64; 2];
            for k in 0..2 {
                let q = o[k] / ext[k];
                if (q - q.round()).abs() > 1e-9 {
                    return Err(Error::Config(format!(
                        "scan offset {i} component {k} = {} mm is not a multiple of the array extent {} mm",
                        o[k], ext[k]
                    )));
                }
                tile[k] = q.round() as i64;
            }
            if tiles.contains(&tile) {
                return Err(Error::Config(format!("scan offset {i} repeats an earlier tile")));
            }
            tiles.push(tile);
        }
        Ok(())
    }

    /// All element positions of the emulated virtual array, position-major.
    pub fn virtual_elements(&self, array: &TransducerArray) -> Vec<[f64; 3]> {
        let base = array.element_positions();
        self.offsets
            .iter()
            .flat_map(|o| base.iter().map(move |e| [e[0] + o[0], e[1] + o[1], e[2]]))
            .collect()
    }
}

/// One block per scan offset, each with the array translated by that offset.
pub fn emulate_scan(
    phantom: &Phantom,
    array: &TransducerArray,
    cfg: &AcousticConfig,
    schedule: &ScanSchedule,
) -> Result<Vec<RawSignalBlock>> {
    schedule.validate(array)?;
    let base = array.element_positions();
    schedule
        .offsets
        .iter()
        .map(|o| {
            let elements: Vec<[f64; 3]> = base.iter().map(|e| [e[0] + o[0], e[1] + o[1], e[2]]).collect();
            simulate_elements(phantom, &elements, array, cfg)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> AcousticConfig {
        AcousticConfig { num_samples: 512, ..Default::default() }
    }

    #[test]
    fn array_geometry() {
        let a = TransducerArray::default();
        let p = a.element_positions();
        assert_eq!(p.len(), 16);
        assert_eq!(p[5], [1.0, 1.0, 0.0]);
        assert_eq!(p[15], [3.0, 3.0, 0.0]);
        assert!(TransducerArray::new(4, 4, 1.0, 3.5, 2.5).is_err());
        assert!(TransducerArray::new(4, 4, 1.0, 3.5, 0.0).is_err());
    }

    #[test]
    fn pulse_bandwidth_is_six_db() {
        let p = Pulse::for_array(&TransducerArray::default());
        // Amplitude spectrum of the envelope-modulated carrier at f_c ± B/2.
        let sigma_f = 1.0 / (2.0 * std::f64::consts::PI * p.sigma_us);
        let rel = (-(1.75f64.powi(2)) / (2.0 * sigma_f * sigma_f)).exp();
        assert!((rel - 0.5).abs() < 1e-12);
        assert_eq!(p.value(0.0), 1.0);
    }

    #[test]
    fn hair_phantom_shape() {
        let p = generate_hair_phantom(1);
        assert_eq!(hair_segments(1).len(), 5);
        assert!(p.absorbers.iter().all(|a| a.position[2] > 0.0));
        assert_eq!(p, generate_hair_phantom(1));
        let a = serde_json::to_string(&hair_segments(1).iter().map(|s| (s.start, s.end)).collect::<Vec<_>>()).unwrap();
        let b = serde_json::to_string(&hair_segments(2).iter().map(|s| (s.start, s.end)).collect::<Vec<_>>()).unwrap();
        assert_ne!(a, b);
        let mut depths: Vec<f64> = hair_segments(1).iter().map(|s| s.start[2]).collect();
        depths.dedup();
        assert_eq!(depths.len(), 5);
    }

    #[test]
    fn ishape_is_symmetric_and_uniform() {
        let p = generate_ishape_phantom();
        assert!(!p.absorbers.is_empty());
        let amp = p.absorbers[0].amplitude;
        assert!(p.absorbers.iter().all(|a| a.amplitude == amp));
        for a in &p.absorbers {
            let mirrored = 31.0 - a.position[0];
            assert!(p
                .absorbers
                .iter()
                .any(|b| (b.position[0] - mirrored).abs() < 1e-9 && (b.position[1] - a.position[1]).abs() < 1e-9));
        }
    }

    #[test]
    fn empty_phantom_is_silent() {
        let b = forward_simulate(&Phantom::empty(), &TransducerArray::default(), &cfg()).unwrap();
        assert_eq!(b.samples.dim(), (16, 512));
        assert!(b.samples.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn peak_lands_on_geometric_delay() {
        let array = TransducerArray::default();
        let c = cfg();
        let d = 7.3;
        let p = Phantom { name: "pt".into(), absorbers: vec![PointAbsorber::new([2.0, 1.0, d], 1.0).unwrap()] };
        let b = forward_simulate(&p, &array, &c).unwrap();
        let e = 4 + 2;
        let row = b.samples.row(e);
        let argmax = row.iter().enumerate().max_by(|x, y| x.1.total_cmp(y.1)).unwrap().0;
        let expected = (d / c.sound_speed_mm_us() * c.sample_rate_mhz).round() as i64;
        assert!((argmax as i64 - expected).abs() <= 1, "{argmax} vs {expected}");
    }

    #[test]
    fn doubling_amplitude_doubles_output() {
        let array = TransducerArray::default();
        let p = generate_hair_phantom(3);
        let a = forward_simulate(&p, &array, &cfg()).unwrap();
        let b = forward_simulate(&p.scaled(2.0), &array, &cfg()).unwrap();
        assert_eq!(b.samples, &a.samples * 2.0);
    }

    #[test]
    fn nyquist_and_coverage_rejected() {
        let array = TransducerArray::default();
        let slow = AcousticConfig { sample_rate_mhz: 10.0, ..cfg() };
        assert!(matches!(forward_simulate(&Phantom::empty(), &array, &slow), Err(Error::Nyquist { .. })));
        let short = AcousticConfig { num_samples: 64, ..cfg() };
        let p = Phantom { name: "deep".into(), absorbers: vec![PointAbsorber::new([0.0, 0.0, 20.0], 1.0).unwrap()] };
        assert!(matches!(forward_simulate(&p, &array, &short), Err(Error::Coverage(_))));
    }

    #[test]
    fn scan_schedules() {
        let array = TransducerArray::default();
        let p = generate_hair_phantom(1);
        let c = AcousticConfig { num_samples: 1024, ..Default::default() };
        let y6 = ScanSchedule::along_y(&array, 6);
        let blocks = emulate_scan(&p, &array, &c, &y6).unwrap();
        assert_eq!(blocks.len(), 6);
        assert_eq!(y6.virtual_elements(&array).len(), 96);
        let single = emulate_scan(&p, &array, &c, &ScanSchedule::single()).unwrap();
        assert_eq!(single[0], forward_simulate(&p, &array, &c).unwrap());
        assert_eq!(ScanSchedule::grid(&array, 8, 4).len(), 32);
        let bad = ScanSchedule { offsets: vec![[0.0, 2.0]] };
        assert!(bad.validate(&array).is_err());
        let dup = ScanSchedule { offsets: vec![[0.0, 4.0], [0.0, 4.0]] };
        assert!(dup.validate(&array).is_err());
    }
}
