//! Experiment orchestration over a run directory.
//!
//! Each stage reads its inputs from the run directory, writes its outputs
//! back, and records input and output digests in `manifest.json`. Layout:
//!
//! ```text
//! config.json  manifest.json  phantom.json  matrix.json  compress.json
//! raw/pos_XX.{bin,json}          acoustic pressure at the simulation rate
//! afe/pos_XX.{bin,json}          AFE output on the ADC sample grid
//! calibration/pos_XX.{bin,json}  independent-noise AFE capture (PCA matrices)
//! compressed/pos_XX.{bin,json}   ADC codes
//! recon/pos_XX.{bin,json}        reconstructed channel data, traces.json
//! software/pos_XX.{bin,json}     reconstruction from unquantized ideal MVM
//! image/{reference,reconstructed,software}.{bin,json} and *_{xy,xz,yz}.pgm
//! report.json  metrics/  sweep/  rip.json
//! ```

pub mod config;
pub mod manifest;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::Axis;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::afe::{self, AfeConfig};
use crate::block::RawSignalBlock;
use crate::error::{Error, Result};
use crate::imaging::{self, ImageVolume};
use crate::io;
use crate::matrices::{self, MeasurementMatrix};
use crate::metrics::{self, LinearitySweepResult, SpectralMetrics, SweepSettings};
use crate::mvm_adc::{self, CompressedBlock};
use crate::phantom;
use crate::recon::{self, FistaConfig, ReconstructedBlock};

pub use config::{aperture_basis, MatrixSpec, PhantomSpec, ReconMethod, RunConfig, ScanSpec};
pub use manifest::{RunManifest, StageRecord};

pub const MATRIX_FILE: &str = "matrix.json";

/// File stem of scan position `pos` inside `dir`.
pub fn position_stem(dir: &Path, pos: usize) -> PathBuf {
    dir.join(format!("pos_{pos:02}"))
}

/// What a stage wrote and a short machine-readable summary of it.
#[derive(Debug, Clone, Serialize)]
pub struct StageOutcome {
    pub stage: String,
    pub outputs: Vec<PathBuf>,
    pub summary: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompressionSummary {
    pub matrix: String,
    pub rows_per_position: usize,
    pub passes: usize,
    pub positions: usize,
    /// `M · positions / total rows`.
    pub compression_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceRecord {
    pub position: usize,
    pub lambda: f64,
    pub iterations: usize,
    pub restarts: usize,
    pub objective: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Report {
    /// Reconstructed image against the image of the uncompressed AFE data.
    pub ssim: f64,
    /// Reconstructed channel data against the AFE data; absent when the AFE
    /// data is identically zero.
    pub nmse: Option<f64>,
    pub compression_ratio: f64,
    /// Reconstructed image against the image recovered from unquantized
    /// software-emulated compression.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ssim_vs_software: Option<f64>,
    pub method: ReconMethod,
    pub positions: usize,
    pub grid_dims: [usize; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RipRecord {
    pub sparsity: usize,
    pub trials: usize,
    pub min_ratio: f64,
    pub max_ratio: f64,
    pub delta: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepSummary {
    pub weight_sweep_min_r_squared: f64,
    pub input_sweep_min_r_squared: f64,
    pub weight_sweep: Vec<LinearitySweepResult>,
    pub input_sweep: Vec<LinearitySweepResult>,
}

#[derive(Serialize)]
struct WeightRow {
    amplitude_vpp: f64,
    weight_sum: f64,
    mean_output_v: f64,
}

#[derive(Serialize)]
struct InputRow {
    weight_sum: f64,
    amplitude_vpp: f64,
    output_v: f64,
}

/// A validated configuration bound to a run directory.
#[derive(Debug, Clone)]
pub struct Run {
    pub config: RunConfig,
    pub dir: PathBuf,
    config_sha256: String,
}

impl Run {
    pub fn new(config: RunConfig) -> Result<Self> {
        config.validate()?;
        let dir = config.out_dir.clone();
        // The output location does not change results, so it is left out of the hash.
        let hashed = RunConfig { out_dir: PathBuf::new(), ..config.clone() };
        let bytes = serde_json::to_vec(&hashed).map_err(|e| Error::Config(e.to_string()))?;
        Ok(Self { config, dir, config_sha256: manifest::sha256_hex(&bytes) })
    }

    pub fn config_sha256(&self) -> &str {
        &self.config_sha256
    }

    pub fn positions(&self) -> usize {
        self.config.schedule().expect("validated").len()
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.dir.join(rel)
    }

    fn stems(&self, sub: &str) -> Vec<PathBuf> {
        (0..self.positions()).map(|p| position_stem(&self.path(sub), p)).collect()
    }

    fn finish(&self, stage: &str, start: Instant, inputs: &[PathBuf], outputs: Vec<PathBuf>, summary: serde_json::Value) -> Result<StageOutcome> {
        let config_path = self.path("config.json");
        io::write_json(&config_path, &self.config)?;
        let mut all_inputs = vec![config_path];
        all_inputs.extend_from_slice(inputs);
        let record = StageRecord {
            config_sha256: self.config_sha256.clone(),
            inputs: manifest::digests(&self.dir, &all_inputs)?,
            outputs: manifest::digests(&self.dir, &outputs)?,
            wall_clock_s: start.elapsed().as_secs_f64(),
        };
        manifest::record_stage(&self.dir, &self.config_sha256, stage, record)?;
        Ok(StageOutcome { stage: stage.into(), outputs, summary })
    }

    /// Noise-averaged AFE acquisition of one position on the ADC grid.
    fn acquire(&self, raw: &RawSignalBlock, noise_root: u64, pos: usize) -> Result<RawSignalBlock> {
        let cfg = &self.config;
        let mut acc: Option<RawSignalBlock> = None;
        for pulse in 0..cfg.pulse_averages {
            let afe_cfg = AfeConfig { noise_seed: config::derive(noise_root, ((pos as u64) << 32) | pulse as u64), ..cfg.afe.clone() };
            let out = afe::apply_afe(raw, &afe_cfg, &cfg.acoustic)?;
            match acc.as_mut() {
                None => acc = Some(out),
                Some(a) => a.samples += &out.samples,
            }
        }
        let mut avg = acc.expect("pulse_averages >= 1");
        avg.samples /= cfg.pulse_averages as f64;
        avg.decimate(cfg.adc_decimation)
    }

    fn needs_calibration(&self) -> bool {
        matches!(self.config.matrix, MatrixSpec::Pca { .. })
    }

    /// Phantom acoustics and AFE capture at every scan position.
    pub fn simulate(&self) -> Result<StageOutcome> {
        let start = Instant::now();
        let cfg = &self.config;
        let phantom = cfg.build_phantom();
        let schedule = cfg.schedule()?;
        let raws = phantom::emulate_scan(&phantom, &cfg.array, &cfg.acoustic, &schedule)?;
        let seeds = cfg.seeds();
        let calibrate = self.needs_calibration();
        let captures: Vec<(RawSignalBlock, Option<RawSignalBlock>)> = raws
            .par_iter()
            .enumerate()
            .map(|(pos, raw)| {
                let afe = self.acquire(raw, seeds.afe, pos)?;
                let cal = calibrate.then(|| self.acquire(raw, seeds.calibration, pos)).transpose()?;
                Ok((afe, cal))
            })
            .collect::<Result<_>>()?;

        let mut outputs = vec![self.path("phantom.json")];
        io::write_json(&outputs[0], &phantom)?;
        for (pos, (raw, (afe, cal))) in raws.iter().zip(&captures).enumerate() {
            let stem = position_stem(&self.path("raw"), pos);
            io::write_block(&stem, raw, "raw")?;
            outputs.extend([io::bin_path(&stem), io::sidecar_path(&stem)]);
            let stem = position_stem(&self.path("afe"), pos);
            io::write_block(&stem, afe, "afe")?;
            outputs.extend([io::bin_path(&stem), io::sidecar_path(&stem)]);
            if let Some(cal) = cal {
                let stem = position_stem(&self.path("calibration"), pos);
                io::write_block(&stem, cal, "afe")?;
                outputs.extend([io::bin_path(&stem), io::sidecar_path(&stem)]);
            }
        }
        let peak = captures.iter().flat_map(|(a, _)| a.samples.iter()).fold(0.0f64, |m, v| m.max(v.abs()));
        let summary = serde_json::json!({
            "positions": raws.len(),
            "absorbers": phantom.absorbers.len(),
            "afe_peak_v": peak,
            "calibration": calibrate,
        });
        self.finish("simulate", start, &[], outputs, summary)
    }

    fn read_blocks(&self, sub: &str, kinds: &[&str], hint: &str) -> Result<(Vec<RawSignalBlock>, Vec<PathBuf>)> {
        let mut blocks = Vec::new();
        let mut files = Vec::new();
        for stem in self.stems(sub) {
            if !io::sidecar_path(&stem).exists() {
                return Err(Error::format(io::sidecar_path(&stem), format!("missing; run `{hint}` first")));
            }
            let (b, _) = io::read_block(&stem, kinds)?;
            blocks.push(b);
            files.extend([io::bin_path(&stem), io::sidecar_path(&stem)]);
        }
        Ok((blocks, files))
    }

    /// Measurement passes applied at every position: one matrix, or the
    /// one-hot passes of an identity schedule.
    fn build_passes(&self, calibration: Option<&[RawSignalBlock]>) -> Result<(Vec<MeasurementMatrix>, String)> {
        let m = self.config.adc.channels_per_adc;
        Ok(match &self.config.matrix {
            MatrixSpec::Pca { n, deadzone } => {
                let blocks = calibration.ok_or_else(|| Error::Config("matrix.kind pca needs calibration captures".into()))?;
                let views: Vec<_> = blocks.iter().map(|b| b.samples.view()).collect();
                let pooled = ndarray::concatenate(Axis(1), &views).map_err(|e| Error::Dimension(e.to_string()))?;
                let pca = matrices::pca_ternary(&RawSignalBlock::new(pooled, blocks[0].sample_rate_mhz), *n, *deadzone)?;
                (vec![pca.matrix], format!("pca n={n} deadzone={deadzone}"))
            }
            MatrixSpec::Random { n, zero_fraction } => (
                vec![matrices::random_ternary(*n, m, *zero_fraction, self.config.seeds().matrix)?],
                format!("random n={n} zero_fraction={zero_fraction}"),
            ),
            MatrixSpec::File { path } => (vec![io::read_matrix(path)?], format!("file {}", path.display())),
            MatrixSpec::Identity { n } => (matrices::identity_schedule(m, *n)?, format!("identity n={n}")),
        })
    }

    /// Matrix-vector multiplying ADC capture of every AFE block.
    pub fn compress(&self) -> Result<StageOutcome> {
        let start = Instant::now();
        let (afe, mut inputs) = self.read_blocks("afe", &["afe"], "simulate")?;
        let calibration = if self.needs_calibration() {
            let (cal, files) = self.read_blocks("calibration", &["afe"], "simulate")?;
            inputs.extend(files);
            Some(cal)
        } else {
            None
        };
        if let MatrixSpec::File { path } = &self.config.matrix {
            inputs.push(path.clone());
        }
        let (passes, label) = self.build_passes(calibration.as_deref())?;
        let adc = self.config.adc_config();
        let full = MeasurementMatrix::vstack(&passes)?;
        let chips = (full.m_cols() / adc.channels_per_adc).max(1) as u64;
        let blocks: Vec<CompressedBlock> = afe
            .par_iter()
            .enumerate()
            .map(|(pos, x)| {
                let parts = passes
                    .iter()
                    .enumerate()
                    .map(|(pass, phi)| {
                        let base = ((pos * passes.len() + pass) as u64) * chips;
                        mvm_adc::compress_block_with_stream(x, phi, &adc, base)
                    })
                    .collect::<Result<Vec<_>>>()?;
                CompressedBlock::stack(&parts, MATRIX_FILE)
            })
            .collect::<Result<_>>()?;

        let matrix_path = self.path(MATRIX_FILE);
        io::write_matrix(&matrix_path, &full)?;
        let mut outputs = vec![matrix_path];
        for (pos, b) in blocks.iter().enumerate() {
            let stem = position_stem(&self.path("compressed"), pos);
            io::write_compressed(&stem, b, MATRIX_FILE)?;
            outputs.extend([io::bin_path(&stem), io::sidecar_path(&stem)]);
        }
        let rows = full.n_rows();
        let summary = CompressionSummary {
            matrix: label,
            rows_per_position: rows,
            passes: passes.len(),
            positions: blocks.len(),
            compression_ratio: (full.m_cols() * blocks.len()) as f64 / (rows * blocks.len()) as f64,
        };
        let summary_path = self.path("compress.json");
        io::write_json(&summary_path, &summary)?;
        outputs.push(summary_path);
        let value = serde_json::to_value(&summary).expect("plain struct");
        self.finish("compress", start, &inputs, outputs, value)
    }

    fn read_compressed_all(&self) -> Result<(Vec<CompressedBlock>, MeasurementMatrix, Vec<PathBuf>)> {
        let mut blocks = Vec::new();
        let mut files = Vec::new();
        let mut matrix_file: Option<String> = None;
        for stem in self.stems("compressed") {
            if !io::sidecar_path(&stem).exists() {
                return Err(Error::format(io::sidecar_path(&stem), "missing; run `compress` first"));
            }
            let (b, side) = io::read_compressed(&stem)?;
            let mf = side.matrix_file.expect("checked by reader");
            if matrix_file.as_ref().is_some_and(|f| *f != mf) {
                return Err(Error::format(io::sidecar_path(&stem), "positions reference different matrix files"));
            }
            matrix_file = Some(mf);
            blocks.push(b);
            files.extend([io::bin_path(&stem), io::sidecar_path(&stem)]);
        }
        let matrix_path = self.path(&matrix_file.expect("at least one position"));
        let phi = io::read_matrix(&matrix_path)?;
        files.push(matrix_path);
        Ok((blocks, phi, files))
    }

    fn fista_config(&self) -> FistaConfig {
        let mut cfg = self.config.recon.fista.clone();
        if matches!(self.config.matrix, MatrixSpec::Identity { .. }) {
            cfg.lambda = Some(self.config.recon.reference_lambda);
        }
        cfg
    }

    /// FISTA recovery, or ingestion of externally reconstructed blocks.
    pub fn reconstruct(&self) -> Result<StageOutcome> {
        let start = Instant::now();
        let (blocks, phi, mut inputs) = self.read_compressed_all()?;
        let fista = self.fista_config();
        let recs: Vec<ReconstructedBlock> = match self.config.recon.method {
            ReconMethod::Fista => blocks.par_iter().map(|y| recon::fista_reconstruct(y, &phi, &fista)).collect::<Result<_>>()?,
            ReconMethod::ExternalInr => {
                let dir = self.config.recon.external_dir.clone().expect("validated");
                let mut recs = Vec::new();
                for (pos, y) in blocks.iter().enumerate() {
                    let stem = position_stem(&dir, pos);
                    let compressed = position_stem(&self.path("compressed"), pos);
                    for f in [io::bin_path(&stem), io::sidecar_path(&stem)] {
                        if !f.is_file() {
                            return Err(Error::format(
                                &f,
                                format!(
                                    "external reconstruction missing; produce it with --compressed {} --matrix {} --out {}",
                                    compressed.display(),
                                    self.path(MATRIX_FILE).display(),
                                    stem.display()
                                ),
                            ));
                        }
                    }
                    let rec = io::read_reconstructed(&stem)?;
                    if rec.estimates.dim() != (phi.m_cols(), y.codes.ncols()) || rec.sample_rate_mhz != y.sample_rate_mhz {
                        return Err(Error::format(
                            io::sidecar_path(&stem),
                            format!(
                                "block is {:?} at {} MHz; expected {:?} at {} MHz",
                                rec.estimates.dim(),
                                rec.sample_rate_mhz,
                                (phi.m_cols(), y.codes.ncols()),
                                y.sample_rate_mhz
                            ),
                        ));
                    }
                    if rec.estimates.iter().any(|v| !v.is_finite()) {
                        return Err(Error::format(io::bin_path(&stem), "non-finite samples"));
                    }
                    inputs.extend([io::bin_path(&stem), io::sidecar_path(&stem)]);
                    recs.push(rec);
                }
                recs
            }
        };

        let mut outputs = Vec::new();
        let mut traces = Vec::new();
        for (pos, r) in recs.iter().enumerate() {
            let stem = position_stem(&self.path("recon"), pos);
            io::write_reconstructed(&stem, r)?;
            outputs.extend([io::bin_path(&stem), io::sidecar_path(&stem)]);
            traces.push(TraceRecord {
                position: pos,
                lambda: r.lambda,
                iterations: r.iterations_used,
                restarts: r.restarts,
                objective: r.objective_trace.clone(),
            });
        }
        let trace_path = self.path("recon/traces.json");
        io::write_json(&trace_path, &traces)?;
        outputs.push(trace_path);

        if self.config.imaging.compare_software {
            let (afe, files) = self.read_blocks("afe", &["afe"], "simulate")?;
            inputs.extend(files);
            let adc = self.config.adc_config();
            let soft: Vec<ReconstructedBlock> = afe
                .par_iter()
                .map(|x| {
                    let y = mvm_adc::ideal_mvm(x.view(), &phi, &adc)? / adc.mac_scale();
                    recon::fista_solve(y.view(), &phi, &fista, x.sample_rate_mhz)
                })
                .collect::<Result<_>>()?;
            for (pos, r) in soft.iter().enumerate() {
                let stem = position_stem(&self.path("software"), pos);
                io::write_reconstructed(&stem, r)?;
                outputs.extend([io::bin_path(&stem), io::sidecar_path(&stem)]);
            }
        }
        let summary = serde_json::json!({
            "method": self.config.recon.method,
            "positions": recs.len(),
            "iterations": recs.iter().map(|r| r.iterations_used).collect::<Vec<_>>(),
            "lambda": recs.iter().map(|r| r.lambda).collect::<Vec<_>>(),
        });
        self.finish("reconstruct", start, &inputs, outputs, summary)
    }

    fn read_recons(&self, sub: &str) -> Result<(RawSignalBlock, Vec<PathBuf>)> {
        let mut blocks = Vec::new();
        let mut files = Vec::new();
        for stem in self.stems(sub) {
            if !io::sidecar_path(&stem).exists() {
                return Err(Error::format(io::sidecar_path(&stem), "missing; run `reconstruct` first"));
            }
            blocks.push(io::read_reconstructed(&stem)?.to_signal_block());
            files.extend([io::bin_path(&stem), io::sidecar_path(&stem)]);
        }
        Ok((RawSignalBlock::stack(&blocks)?, files))
    }

    fn image_of(&self, block: &RawSignalBlock) -> Result<ImageVolume> {
        let cfg = &self.config;
        let mut acoustic = cfg.acoustic.clone();
        acoustic.sample_rate_mhz = block.sample_rate_mhz;
        acoustic.num_samples = block.num_samples();
        imaging::backproject(block, &cfg.array, &cfg.schedule()?, &acoustic, &cfg.grid(), &cfg.imaging.backprojection)
    }

    fn write_image(&self, name: &str, v: &ImageVolume, outputs: &mut Vec<PathBuf>) -> Result<()> {
        let stem = self.path("image").join(name);
        io::write_volume(&stem, v)?;
        outputs.extend([io::bin_path(&stem), io::sidecar_path(&stem)]);
        for p in imaging::max_intensity_projections(v) {
            let pstem = self.path("image").join(format!("{name}_{}", p.plane));
            io::write_projection(&pstem, &p)?;
            outputs.extend([pstem.with_extension("pgm"), io::sidecar_path(&pstem)]);
        }
        Ok(())
    }

    /// Backprojected volumes, projections and the quality report.
    pub fn image(&self) -> Result<StageOutcome> {
        let start = Instant::now();
        let (afe, mut inputs) = self.read_blocks("afe", &["afe"], "simulate")?;
        let reference_block = RawSignalBlock::stack(&afe)?;
        let (rec_block, files) = self.read_recons("recon")?;
        inputs.extend(files);
        let summary_path = self.path("compress.json");
        let compression: CompressionSummary = io::read_json(&summary_path)?;
        inputs.push(summary_path);

        let reference = self.image_of(&reference_block)?;
        let reconstructed = self.image_of(&rec_block)?;
        let window = self.config.imaging.ssim_window;
        let ssim = imaging::ssim3d(&reconstructed, &reference, window, None)?;
        let nmse = match metrics::nmse(rec_block.view(), reference_block.view()) {
            Ok(v) => Some(v),
            Err(Error::ZeroReference) => None,
            Err(e) => return Err(e),
        };
        let mut outputs = Vec::new();
        self.write_image("reference", &reference, &mut outputs)?;
        self.write_image("reconstructed", &reconstructed, &mut outputs)?;
        let ssim_vs_software = if self.config.imaging.compare_software {
            let (soft_block, files) = self.read_recons("software")?;
            inputs.extend(files);
            let software = self.image_of(&soft_block)?;
            self.write_image("software", &software, &mut outputs)?;
            Some(imaging::ssim3d(&reconstructed, &software, window, None)?)
        } else {
            None
        };
        let report = Report {
            ssim,
            nmse,
            compression_ratio: compression.compression_ratio,
            ssim_vs_software,
            method: self.config.recon.method,
            positions: afe.len(),
            grid_dims: reference.grid.dims,
        };
        let report_path = self.path("report.json");
        io::write_json(&report_path, &report)?;
        outputs.push(report_path);
        let value = serde_json::to_value(&report).expect("plain struct");
        self.finish("image", start, &inputs, outputs, value)
    }

    fn sweep_settings(&self) -> SweepSettings {
        SweepSettings { adc_rate_mhz: self.config.adc_rate_mhz(), oversample: self.config.adc_decimation, ..Default::default() }
    }

    /// Coherent-sine SNDR and ENOB of the configured ADC.
    pub fn metrics(&self) -> Result<StageOutcome> {
        let start = Instant::now();
        let adc = self.config.adc_config();
        let m = &self.config.metrics;
        let result: SpectralMetrics =
            metrics::adc_sine_test(&adc, m.sndr_amplitude * adc.full_scale, &self.sweep_settings(), m.sndr_record_len)?;
        let path = self.path("metrics/adc_sndr.json");
        io::write_json(&path, &result)?;
        let value = serde_json::to_value(result).expect("plain struct");
        self.finish("metrics", start, &[], vec![path], value)
    }

    /// Computing-linearity sweeps over weight sum and input amplitude.
    pub fn sweep_linearity(&self) -> Result<StageOutcome> {
        let start = Instant::now();
        let adc = self.config.adc_config();
        let afe_cfg = AfeConfig { noise_seed: self.config.seeds().afe, ..self.config.afe.clone() };
        let m = &self.config.metrics;
        let settings = self.sweep_settings();
        let seed = self.config.seed;
        let weight = metrics::linearity_weight_sweep(&m.weight_sweep_amplitudes_vpp, &afe_cfg, &adc, m.combos_per_sum, seed, &settings)?;
        let ch = adc.channels_per_adc as i32;
        let sums: Vec<i32> = (-ch..=ch).collect();
        let input = metrics::linearity_input_sweep(&sums, &m.input_sweep_amplitudes_vpp, &afe_cfg, &adc, seed, &settings)?;
        let min_r2 = |r: &[LinearitySweepResult]| r.iter().map(|s| s.fit.r_squared).fold(f64::INFINITY, f64::min);
        let summary = SweepSummary {
            weight_sweep_min_r_squared: min_r2(&weight),
            input_sweep_min_r_squared: min_r2(&input),
            weight_sweep: weight,
            input_sweep: input,
        };

        let dir = self.path("sweep");
        let json_path = dir.join("linearity.json");
        io::write_json(&json_path, &summary)?;
        let weight_csv = dir.join("weight_sweep.csv");
        write_csv(
            &weight_csv,
            summary.weight_sweep.iter().flat_map(|s| {
                s.axis.iter().zip(&s.mean_outputs).map(|(&w, &y)| WeightRow { amplitude_vpp: s.fixed, weight_sum: w, mean_output_v: y })
            }),
        )?;
        let input_csv = dir.join("input_sweep.csv");
        write_csv(
            &input_csv,
            summary.input_sweep.iter().flat_map(|s| {
                s.axis.iter().zip(&s.mean_outputs).map(|(&a, &y)| InputRow { weight_sum: s.fixed, amplitude_vpp: a, output_v: y })
            }),
        )?;
        let value = serde_json::json!({
            "weight_sweep_min_r_squared": summary.weight_sweep_min_r_squared,
            "input_sweep_min_r_squared": summary.input_sweep_min_r_squared,
        });
        self.finish("sweep-linearity", start, &[], vec![json_path, weight_csv, input_csv], value)
    }

    /// Empirical restricted-isometry statistics of the run's matrix. Uses
    /// `matrix.json` when compression has run, otherwise builds the matrix
    /// from the configuration.
    pub fn rip_check(&self) -> Result<StageOutcome> {
        let start = Instant::now();
        let matrix_path = self.path(MATRIX_FILE);
        let (phi, inputs) = if matrix_path.is_file() {
            (io::read_matrix(&matrix_path)?, vec![matrix_path])
        } else if self.needs_calibration() {
            return Err(Error::format(matrix_path, "missing; PCA matrices come from `compress`, run it first"));
        } else {
            (MeasurementMatrix::vstack(&self.build_passes(None)?.0)?, Vec::new())
        };
        let m = &self.config.metrics;
        let seed = self.config.seeds().matrix;
        let records: Vec<RipRecord> = m
            .rip_sparsities
            .iter()
            .map(|&s| {
                let r = matrices::empirical_rip(&phi, s, m.rip_trials, seed)?;
                Ok(RipRecord { sparsity: s, trials: m.rip_trials, min_ratio: r.min_ratio, max_ratio: r.max_ratio, delta: r.delta })
            })
            .collect::<Result<_>>()?;
        let path = self.path("rip.json");
        io::write_json(&path, &records)?;
        let value = serde_json::to_value(&records).expect("plain struct");
        self.finish("rip-check", start, &inputs, vec![path], value)
    }
}

fn write_csv<T: Serialize>(path: &Path, rows: impl Iterator<Item = T>) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::format(path, e.to_string()))?;
    for row in rows {
        w.serialize(row).map_err(|e| Error::format(path, e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Every output digest recorded in the manifest, keyed by stage and path.
pub fn output_digests(run_dir: &Path) -> Result<BTreeMap<String, String>> {
    let m = RunManifest::load(run_dir)?.ok_or_else(|| Error::format(run_dir.join(manifest::MANIFEST_FILE), "missing"))?;
    Ok(m.stages
        .iter()
        .flat_map(|(stage, rec)| rec.outputs.iter().map(move |(p, d)| (format!("{stage}:{p}"), d.clone())))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phantom::AcousticConfig;

    fn small(dir: &Path, phantom: PhantomSpec, matrix: MatrixSpec) -> RunConfig {
        let mut cfg = RunConfig::example("unit", 3);
        cfg.out_dir = dir.to_path_buf();
        cfg.phantom = phantom;
        cfg.matrix = matrix;
        cfg.scan = ScanSpec::AlongY { steps: 2 };
        cfg.acoustic = AcousticConfig { num_samples: 512, ..Default::default() };
        cfg.recon.fista.max_iterations = 30;
        cfg.imaging.depth_mm = [2.0, 6.0];
        cfg
    }

    #[test]
    fn empty_phantom_chain() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = small(dir.path(), PhantomSpec::Empty, MatrixSpec::Random { n: 4, zero_fraction: 1.0 / 3.0 });
        cfg.afe.input_noise_density_nv = 0.0;
        let run = Run::new(cfg).unwrap();
        run.simulate().unwrap();
        let (b, _) = io::read_block(&position_stem(&dir.path().join("afe"), 1), &["afe"]).unwrap();
        assert!(b.samples.iter().all(|&v| v == 0.0));
        let c = run.compress().unwrap();
        assert_eq!(c.summary["compression_ratio"], 4.0);
        run.reconstruct().unwrap();
        let report = run.image().unwrap();
        assert_eq!(report.summary["nmse"], serde_json::Value::Null);
        let m = RunManifest::load(dir.path()).unwrap().unwrap();
        assert_eq!(m.stages.len(), 4);
        assert_eq!(m.config_sha256, run.config_sha256());
    }

    #[test]
    fn identity_schedule_ratio_and_passes() {
        let dir = tempfile::tempdir().unwrap();
        let run = Run::new(small(dir.path(), PhantomSpec::Ishape { scale: 1.0 }, MatrixSpec::Identity { n: 3 })).unwrap();
        run.simulate().unwrap();
        let c = run.compress().unwrap();
        assert_eq!(c.summary["compression_ratio"], 1.0);
        assert_eq!(c.summary["passes"], 6);
        let (block, _) = io::read_compressed(&position_stem(&dir.path().join("compressed"), 0)).unwrap();
        assert_eq!(block.rows(), 16);
    }

    #[test]
    fn external_method_reports_missing_files() {
        let dir = tempfile::tempdir().unwrap();
        let ext = tempfile::tempdir().unwrap();
        let mut cfg = small(dir.path(), PhantomSpec::Empty, MatrixSpec::Random { n: 2, zero_fraction: 0.3 });
        cfg.recon.method = ReconMethod::ExternalInr;
        cfg.recon.external_dir = Some(ext.path().to_path_buf());
        let run = Run::new(cfg).unwrap();
        run.simulate().unwrap();
        run.compress().unwrap();
        let e = run.reconstruct().unwrap_err();
        assert!(!e.is_config());
        let msg = e.to_string();
        assert!(msg.contains("pos_00") && msg.contains("--compressed"), "{msg}");
    }

    #[test]
    fn downstream_stage_without_inputs_names_the_fix() {
        let dir = tempfile::tempdir().unwrap();
        let run = Run::new(small(dir.path(), PhantomSpec::Empty, MatrixSpec::Random { n: 2, zero_fraction: 0.3 })).unwrap();
        let msg = run.compress().unwrap_err().to_string();
        assert!(msg.contains("simulate"), "{msg}");
    }
}
