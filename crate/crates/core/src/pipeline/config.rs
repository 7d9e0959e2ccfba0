//! Experiment configuration: one JSON file describes one run.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::afe::AfeConfig;
use crate::error::{Error, Result};
use crate::imaging::{BackprojectionConfig, GridSpec};
use crate::matrices::DEFAULT_DEADZONE;
use crate::metrics::ADC_RATE_MHZ;
use crate::mvm_adc::AdcConfig;
use crate::phantom::{self, AcousticConfig, Phantom, PointAbsorber, ScanSchedule, TransducerArray};
use crate::recon::FistaConfig;
use crate::wavelet::{BasisAxes, SparseBasis, WaveletFamily};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PhantomSpec {
    Hair {
        #[serde(default = "one")]
        scale: f64,
    },
    Ishape {
        #[serde(default = "one")]
        scale: f64,
    },
    Empty,
    Points { absorbers: Vec<PointAbsorber> },
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ScanSpec {
    Single,
    AlongY { steps: usize },
    Grid { nx: usize, ny: usize },
    Offsets { offsets: Vec<[f64; 2]> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MatrixSpec {
    /// Top-`n` principal directions of an uncompressed calibration capture
    /// of the same subject, sign-quantized.
    Pca {
        n: usize,
        #[serde(default = "default_deadzone")]
        deadzone: f64,
    },
    Random {
        n: usize,
        #[serde(default = "one_third")]
        zero_fraction: f64,
    },
    /// A matrix JSON file with 16 columns applied at every scan position.
    File { path: PathBuf },
    /// Uncompressed capture through one-hot passes of up to `n` rows each.
    Identity { n: usize },
}

fn default_deadzone() -> f64 {
    DEFAULT_DEADZONE
}

fn one_third() -> f64 {
    1.0 / 3.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReconMethod {
    Fista,
    ExternalInr,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReconSpec {
    pub method: ReconMethod,
    pub fista: FistaConfig,
    /// Directory holding `pos_XX.{bin,json}` reconstructed containers for the
    /// external-inr method.
    pub external_dir: Option<PathBuf>,
    /// λ used for the identity-scheduled reference.
    pub reference_lambda: f64,
}

/// Wavelet along time with a Haar transform over each 4×4 array placement.
pub fn aperture_basis(array: &TransducerArray) -> SparseBasis {
    SparseBasis {
        axes: BasisAxes::ApertureTime {
            aperture_family: WaveletFamily::Haar,
            rows: array.rows,
            cols: array.cols,
            levels: [array.rows.trailing_zeros() as usize, array.cols.trailing_zeros() as usize],
        },
        ..Default::default()
    }
}

impl Default for ReconSpec {
    fn default() -> Self {
        Self {
            method: ReconMethod::Fista,
            fista: FistaConfig { wavelet: aperture_basis(&TransducerArray::default()), ..Default::default() },
            external_dir: None,
            reference_lambda: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ImagingSpec {
    /// Explicit voxel grid; when absent a grid covering the aperture is used.
    pub grid: Option<GridSpec>,
    pub depth_mm: [f64; 2],
    pub margin_mm: f64,
    pub backprojection: BackprojectionConfig,
    pub ssim_window: usize,
    /// Also image an unquantized software emulation of the compression and
    /// report its SSIM against the hardware-model image.
    pub compare_software: bool,
}

impl Default for ImagingSpec {
    fn default() -> Self {
        Self {
            grid: None,
            depth_mm: [4.0, 16.0],
            margin_mm: 1.0,
            backprojection: BackprojectionConfig::default(),
            ssim_window: crate::imaging::SSIM_WINDOW,
            compare_software: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsSpec {
    pub sndr_record_len: usize,
    /// Sine amplitude relative to full scale.
    pub sndr_amplitude: f64,
    pub weight_sweep_amplitudes_vpp: Vec<f64>,
    pub combos_per_sum: usize,
    pub input_sweep_amplitudes_vpp: Vec<f64>,
    pub rip_sparsities: Vec<usize>,
    pub rip_trials: usize,
}

impl Default for MetricsSpec {
    fn default() -> Self {
        Self {
            sndr_record_len: 8192,
            sndr_amplitude: 1.0 - 1.0 / 512.0,
            weight_sweep_amplitudes_vpp: vec![1e-3, 2e-3, 4e-3, 8e-3],
            combos_per_sum: 50,
            input_sweep_amplitudes_vpp: (1..=8).map(|k| k as f64 * 1e-3).collect(),
            rip_sparsities: vec![1, 2, 3, 4],
            rip_trials: 2000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub name: String,
    /// Root of every random stream in the run.
    pub seed: u64,
    #[serde(default = "default_out")]
    pub out_dir: PathBuf,
    pub phantom: PhantomSpec,
    #[serde(default)]
    pub array: TransducerArray,
    pub scan: ScanSpec,
    #[serde(default)]
    pub acoustic: AcousticConfig,
    #[serde(default)]
    pub afe: AfeConfig,
    /// Noise-reseeded repetitions averaged per acquisition.
    #[serde(default = "one_usize")]
    pub pulse_averages: usize,
    /// Simulation samples per ADC sample.
    #[serde(default = "two")]
    pub adc_decimation: usize,
    #[serde(default)]
    pub adc: AdcConfig,
    pub matrix: MatrixSpec,
    #[serde(default)]
    pub recon: ReconSpec,
    #[serde(default)]
    pub imaging: ImagingSpec,
    #[serde(default)]
    pub metrics: MetricsSpec,
}

fn default_out() -> PathBuf {
    PathBuf::from("run")
}

fn one_usize() -> usize {
    1
}

fn two() -> usize {
    2
}

/// Seeds of the individual random streams, all derived from the run seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StageSeeds {
    pub phantom: u64,
    pub afe: u64,
    pub calibration: u64,
    pub adc: u64,
    pub matrix: u64,
}

pub(crate) fn derive(seed: u64, salt: u64) -> u64 {
    let mut z = seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let de = &mut serde_json::Deserializer::from_str(&text);
        let cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let at = e.path().to_string();
            Error::Config(format!("{}: {}: {}", path.display(), if at == "." { "(root)".into() } else { at }, e.inner()))
        })?;
        Ok(cfg)
    }

    pub fn seeds(&self) -> StageSeeds {
        StageSeeds {
            phantom: self.seed,
            afe: derive(self.seed, 1),
            calibration: derive(self.seed, 2),
            adc: derive(self.seed, 3),
            matrix: derive(self.seed, 4),
        }
    }

    /// Field-level checks, including that referenced files exist.
    pub fn validate(&self) -> Result<()> {
        let field = |name: &str, e: Error| match e {
            Error::Config(m) if m.starts_with(name) => Error::Config(m),
            Error::Config(m) => Error::Config(format!("{name}: {m}")),
            other => Error::Config(format!("{name}: {other}")),
        };
        if self.name.trim().is_empty() {
            return Err(Error::Config("name: must not be empty".into()));
        }
        self.array.validate().map_err(|e| field("array", e))?;
        self.acoustic.validate(&self.array).map_err(|e| field("acoustic", e))?;
        if self.acoustic.seed != 0 || self.afe.noise_seed != 0 || self.adc.seed != 0 {
            return Err(Error::Config(
                "acoustic.seed, afe.noise_seed and adc.seed are derived from the top-level seed; remove them".into(),
            ));
        }
        self.afe.validate(self.acoustic.sample_rate_mhz).map_err(|e| field("afe", e))?;
        self.adc.validate().map_err(|e| field("adc", e))?;
        if self.array.num_elements() != self.adc.channels_per_adc {
            return Err(Error::Config(format!(
                "array: {} elements but each ADC multiplexes {} channels",
                self.array.num_elements(),
                self.adc.channels_per_adc
            )));
        }
        if self.pulse_averages == 0 {
            return Err(Error::Config("pulse_averages: must be >= 1".into()));
        }
        if self.adc_decimation == 0 || !self.acoustic.num_samples.is_multiple_of(self.adc_decimation) {
            return Err(Error::Config(format!(
                "adc_decimation: {} must divide acoustic.num_samples {}",
                self.adc_decimation, self.acoustic.num_samples
            )));
        }
        self.schedule()?.validate(&self.array).map_err(|e| field("scan", e))?;
        match &self.phantom {
            PhantomSpec::Hair { scale } | PhantomSpec::Ishape { scale } if !(*scale >= 0.0) => {
                return Err(Error::Config(format!("phantom.scale: {scale} must be non-negative")));
            }
            PhantomSpec::Points { absorbers } => {
                for (i, a) in absorbers.iter().enumerate() {
                    PointAbsorber::new(a.position, a.amplitude).map_err(|e| field(&format!("phantom.absorbers[{i}]"), e))?;
                }
            }
            _ => {}
        }
        let n = match &self.matrix {
            MatrixSpec::Pca { n, deadzone } => {
                if !(0.0..1.0).contains(deadzone) {
                    return Err(Error::Config(format!("matrix.deadzone: {deadzone} outside [0, 1)")));
                }
                Some(*n)
            }
            MatrixSpec::Random { n, zero_fraction } => {
                if !(0.0..1.0).contains(zero_fraction) {
                    return Err(Error::Config(format!("matrix.zero_fraction: {zero_fraction} outside [0, 1)")));
                }
                Some(*n)
            }
            MatrixSpec::Identity { n } => Some(*n),
            MatrixSpec::File { path } => {
                if !path.is_file() {
                    return Err(Error::Config(format!("matrix.path: {} does not exist", path.display())));
                }
                None
            }
        };
        if let Some(n) = n {
            if n == 0 || n > self.adc.adcs_per_chip {
                return Err(Error::Config(format!("matrix.n: {n} outside 1..={}", self.adc.adcs_per_chip)));
            }
        }
        if self.recon.fista.max_iterations == 0 {
            return Err(Error::Config("recon.fista.max_iterations: must be >= 1".into()));
        }
        if let Some(l) = self.recon.fista.lambda {
            if !(l >= 0.0) {
                return Err(Error::Config(format!("recon.fista.lambda: {l} must be >= 0")));
            }
        }
        if let BasisAxes::ApertureTime { rows, cols, .. } = self.recon.fista.wavelet.axes {
            if rows * cols != self.adc.channels_per_adc || !rows.is_power_of_two() || !cols.is_power_of_two() {
                return Err(Error::Config(format!(
                    "recon.fista.wavelet.axes: {rows}x{cols} tiles must be powers of two covering {} channels",
                    self.adc.channels_per_adc
                )));
            }
        }
        if self.recon.method == ReconMethod::ExternalInr {
            match &self.recon.external_dir {
                Some(d) if d.is_dir() => {}
                Some(d) => {
                    return Err(Error::Config(format!("recon.external_dir: {} is not a directory", d.display())));
                }
                None => return Err(Error::Config("recon.external_dir: required for method external-inr".into())),
            }
        }
        if let Some(g) = &self.imaging.grid {
            g.validate().map_err(|e| field("imaging.grid", e))?;
        } else if !(self.imaging.depth_mm[1] > self.imaging.depth_mm[0] && self.imaging.depth_mm[0] >= 0.0) {
            return Err(Error::Config(format!("imaging.depth_mm: {:?} must be an increasing range", self.imaging.depth_mm)));
        }
        if self.imaging.ssim_window.is_multiple_of(2) {
            return Err(Error::Config(format!("imaging.ssim_window: {} must be odd", self.imaging.ssim_window)));
        }
        if !self.metrics.sndr_record_len.is_power_of_two() || self.metrics.sndr_record_len < 4096 {
            return Err(Error::Config("metrics.sndr_record_len: must be a power of two >= 4096".into()));
        }
        if self.metrics.combos_per_sum == 0 {
            return Err(Error::Config("metrics.combos_per_sum: must be >= 1".into()));
        }
        if self.metrics.input_sweep_amplitudes_vpp.len() < 3 {
            return Err(Error::Config("metrics.input_sweep_amplitudes_vpp: needs at least 3 points".into()));
        }
        Ok(())
    }

    pub fn schedule(&self) -> Result<ScanSchedule> {
        Ok(match &self.scan {
            ScanSpec::Single => ScanSchedule::single(),
            ScanSpec::AlongY { steps } if *steps >= 1 => ScanSchedule::along_y(&self.array, *steps),
            ScanSpec::Grid { nx, ny } if *nx >= 1 && *ny >= 1 => ScanSchedule::grid(&self.array, *nx, *ny),
            ScanSpec::Offsets { offsets } => ScanSchedule { offsets: offsets.clone() },
            _ => return Err(Error::Config("scan: step counts must be >= 1".into())),
        })
    }

    pub fn build_phantom(&self) -> Phantom {
        match &self.phantom {
            PhantomSpec::Hair { scale } => phantom::generate_hair_phantom(self.seeds().phantom).scaled(*scale),
            PhantomSpec::Ishape { scale } => phantom::generate_ishape_phantom().scaled(*scale),
            PhantomSpec::Empty => Phantom::empty(),
            PhantomSpec::Points { absorbers } => Phantom { name: "points".into(), absorbers: absorbers.clone() },
        }
    }

    pub fn adc_config(&self) -> AdcConfig {
        AdcConfig { seed: self.seeds().adc, ..self.adc.clone() }
    }

    pub fn adc_rate_mhz(&self) -> f64 {
        self.acoustic.sample_rate_mhz / self.adc_decimation as f64
    }

    pub fn grid(&self) -> GridSpec {
        self.imaging.grid.clone().unwrap_or_else(|| {
            GridSpec::covering(&self.array, &self.schedule().expect("validated"), self.imaging.depth_mm, self.imaging.margin_mm)
        })
    }

    /// Template with every section at its default, for `pacs ... --print-config`
    /// style bootstrapping and tests.
    pub fn example(name: &str, seed: u64) -> Self {
        Self {
            name: name.into(),
            seed,
            out_dir: default_out(),
            phantom: PhantomSpec::Hair { scale: 1.0 },
            array: TransducerArray::default(),
            scan: ScanSpec::AlongY { steps: 6 },
            acoustic: AcousticConfig::default(),
            afe: AfeConfig::default(),
            pulse_averages: 1,
            adc_decimation: 2,
            adc: AdcConfig::default(),
            matrix: MatrixSpec::Pca { n: 4, deadzone: DEFAULT_DEADZONE },
            recon: ReconSpec::default(),
            imaging: ImagingSpec::default(),
            metrics: MetricsSpec::default(),
        }
    }
}

/// Sample rate the ADC runs at with the default simulation grid.
pub const DEFAULT_ADC_RATE_MHZ: f64 = ADC_RATE_MHZ;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn example_is_valid_and_roundtrips() {
        let cfg = RunConfig::example("t", 5);
        cfg.validate().unwrap();
        let text = serde_json::to_string(&cfg).unwrap();
        let back: RunConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back, cfg);
        assert!((cfg.adc_rate_mhz() - DEFAULT_ADC_RATE_MHZ).abs() < 1e-12);
    }

    #[test]
    fn minimal_file_uses_defaults() {
        let text = r#"{"name":"m","seed":3,"phantom":{"kind":"empty"},"scan":{"kind":"single"},
                      "matrix":{"kind":"random","n":2}}"#;
        let cfg: RunConfig = serde_json::from_str(text).unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.recon.method, ReconMethod::Fista);
    }

    #[test]
    fn field_level_errors() {
        let mut cfg = RunConfig::example("t", 5);
        cfg.matrix = MatrixSpec::Random { n: 5, zero_fraction: 0.3 };
        let e = cfg.validate().unwrap_err().to_string();
        assert!(e.contains("matrix.n"), "{e}");

        let mut cfg = RunConfig::example("t", 5);
        cfg.afe.noise_seed = 9;
        assert!(cfg.validate().unwrap_err().to_string().contains("afe.noise_seed"));

        let mut cfg = RunConfig::example("t", 5);
        cfg.recon.method = ReconMethod::ExternalInr;
        assert!(cfg.validate().unwrap_err().to_string().contains("recon.external_dir"));

        let mut cfg = RunConfig::example("t", 5);
        cfg.matrix = MatrixSpec::File { path: "/nonexistent/phi.json".into() };
        assert!(cfg.validate().unwrap_err().is_config());

        let mut cfg = RunConfig::example("t", 5);
        cfg.afe.pga_gain = 3.0;
        assert!(cfg.validate().unwrap_err().to_string().contains("afe.pga_gain"));
    }

    #[test]
    fn parse_errors_name_the_field() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        std::fs::write(&p, r#"{"name":"m","seed":3,"phantom":{"kind":"empty"},"scan":{"kind":"single"},
            "matrix":{"kind":"random","n":2},"afe":{"pga_gain":"high"}}"#)
            .unwrap();
        let e = RunConfig::load(&p).unwrap_err().to_string();
        assert!(e.contains("afe.pga_gain"), "{e}");
    }

    #[test]
    fn seeds_are_distinct() {
        let s = RunConfig::example("t", 5).seeds();
        let all = [s.phantom, s.afe, s.calibration, s.adc, s.matrix];
        for i in 0..all.len() {
            for j in i + 1..all.len() {
                assert_ne!(all[i], all[j]);
            }
        }
    }
}
