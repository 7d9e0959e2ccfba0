//! Sparse recovery of the full channel block from compressed measurements.
//!
//! Solves `min_X ½‖Y − ΦX‖² + λ‖WX‖₁` in synthesis form over the wavelet
//! coefficients `α = WX`, so the proximal step is plain soft thresholding.
//! Momentum follows `t' = (1 + √(1 + 4t²)) / 2`; whenever an accelerated step
//! would raise the objective the momentum is reset and a plain proximal step
//! from the previous iterate is taken instead, which keeps the objective
//! trace non-increasing.

use ndarray::{s, Array2, ArrayView2, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrices::MeasurementMatrix;
use crate::mvm_adc::{self, AdcConfig, CompressedBlock};
use crate::metrics;
use crate::wavelet::{padded_len, BlockTransform, SparseBasis};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Step {
    /// `1 / L` with `L` the largest eigenvalue of ΦᵀΦ.
    Auto,
    Fixed(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FistaConfig {
    /// `None` selects `0.01 ‖WΦᵀY‖∞`.
    pub lambda: Option<f64>,
    pub max_iterations: usize,
    pub tolerance: f64,
    pub step: Step,
    pub wavelet: SparseBasis,
}

impl Default for FistaConfig {
    fn default() -> Self {
        Self { lambda: None, max_iterations: 200, tolerance: 1e-6, step: Step::Auto, wavelet: SparseBasis::default() }
    }
}

pub const DEFAULT_LAMBDA_FRACTION: f64 = 0.01;
const POWER_ITERATION_TOL: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct ReconstructedBlock {
    pub estimates: Array2<f64>,
    pub sample_rate_mhz: f64,
    pub iterations_used: usize,
    pub final_objective: f64,
    pub lambda: f64,
    pub objective_trace: Vec<f64>,
    pub restarts: usize,
}

impl ReconstructedBlock {
    pub fn to_signal_block(&self) -> crate::block::RawSignalBlock {
        crate::block::RawSignalBlock::new(self.estimates.clone(), self.sample_rate_mhz)
    }
}

pub fn soft_threshold(c: &[f64], theta: f64) -> Vec<f64> {
    c.iter().map(|&v| shrink(v, theta)).collect()
}

#[inline]
fn shrink(v: f64, theta: f64) -> f64 {
    if v > theta {
        v - theta
    } else if v < -theta {
        v + theta
    } else {
        0.0
    }
}

/// Linear operator `α ↦ Φ Wᵀ α` and its adjoint on padded blocks.
struct Operator<'a> {
    phi: &'a MeasurementMatrix,
    transform: BlockTransform,
}

impl Operator<'_> {
    /// Φ commutes with the time-axis transform, so the time synthesis runs
    /// on the N measurement rows rather than the M channels.
    fn forward(&mut self, alpha: &Array2<f64>) -> Array2<f64> {
        let mut a = alpha.clone();
        self.transform.synthesize_channels(&mut a);
        let mut y = self.phi.apply(a.view()).expect("operator dims");
        self.transform.synthesize_time(&mut y);
        y
    }

    fn adjoint(&mut self, r: &Array2<f64>) -> Array2<f64> {
        let mut q = r.clone();
        self.transform.analyze_time(&mut q);
        let mut g = self.phi.apply_transpose(q.view()).expect("operator dims");
        self.transform.analyze_channels(&mut g);
        g
    }
}

fn l1(a: &Array2<f64>) -> f64 {
    a.iter().map(|v| v.abs()).sum()
}

fn half_sq_residual(ax: &Array2<f64>, y: &Array2<f64>) -> f64 {
    0.5 * Zip::from(ax).and(y).fold(0.0, |acc, &p, &q| acc + (p - q) * (p - q))
}

/// Data-fidelity gradient `Φᵀ(ΦX − Y)` in the signal domain.
pub fn data_gradient(phi: &MeasurementMatrix, x: ArrayView2<'_, f64>, y: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    let r = phi.apply(x)? - y;
    phi.apply_transpose(r.view())
}

/// Objective `½‖Y − ΦX‖² + λ‖WX‖₁` at a signal-domain point.
pub fn objective(phi: &MeasurementMatrix, x: ArrayView2<'_, f64>, y: ArrayView2<'_, f64>, lambda: f64, basis: &SparseBasis) -> Result<f64> {
    let t = padded_len(x.ncols(), basis.levels);
    let mut xp = Array2::zeros((x.nrows(), t));
    xp.slice_mut(s![.., ..x.ncols()]).assign(&x);
    let mut tr = BlockTransform::new(basis, x.nrows(), t);
    let coeffs = tr.analyze(xp.view());
    let r = phi.apply(x)? - y;
    Ok(0.5 * r.iter().map(|v| v * v).sum::<f64>() + lambda * l1(&coeffs))
}

/// FISTA on real-valued measurements `y ≈ Φ X` (N×T).
pub fn fista_solve(
    y: ArrayView2<'_, f64>,
    phi: &MeasurementMatrix,
    cfg: &FistaConfig,
    sample_rate_mhz: f64,
) -> Result<ReconstructedBlock> {
    if y.nrows() != phi.n_rows() {
        return Err(Error::Dimension(format!(
            "{} measurement rows for a matrix with {} rows",
            y.nrows(),
            phi.n_rows()
        )));
    }
    if cfg.max_iterations == 0 {
        return Err(Error::Config("max_iterations must be >= 1".into()));
    }
    let (n, t_raw) = y.dim();
    let m = phi.m_cols();
    let t = padded_len(t_raw, cfg.wavelet.levels);
    let mut yp = Array2::zeros((n, t));
    yp.slice_mut(s![.., ..t_raw]).assign(&y);

    let step = match cfg.step {
        Step::Fixed(s) if s > 0.0 && s.is_finite() => s,
        Step::Fixed(s) => return Err(Error::Config(format!("step {s} must be positive"))),
        Step::Auto => {
            let l = phi.spectral_norm_sq(POWER_ITERATION_TOL);
            if l <= 0.0 {
                return Err(Error::Config("matrix has zero spectral norm".into()));
            }
            1.0 / l
        }
    };

    let mut op = Operator { phi, transform: BlockTransform::new(&cfg.wavelet, m, t) };
    let lambda = match cfg.lambda {
        Some(l) if l >= 0.0 => l,
        Some(l) => return Err(Error::Config(format!("lambda {l} must be non-negative"))),
        None => {
            let g = op.adjoint(&yp);
            DEFAULT_LAMBDA_FRACTION * g.iter().fold(0.0f64, |a, v| a.max(v.abs()))
        }
    };
    let theta = lambda * step;

    let mut alpha = Array2::<f64>::zeros((m, t));
    let mut a_alpha = Array2::<f64>::zeros((n, t));
    let mut momentum = alpha.clone();
    let mut a_momentum = a_alpha.clone();
    let mut tk = 1.0f64;
    let mut f_prev = half_sq_residual(&a_alpha, &yp);
    let mut trace = vec![f_prev];
    let mut restarts = 0;
    let mut iterations = 0;

    let prox_step = |op: &mut Operator, point: &Array2<f64>, a_point: &Array2<f64>| {
        let grad = op.adjoint(&(a_point - &yp));
        let mut next = point - &(grad * step);
        next.mapv_inplace(|v| shrink(v, theta));
        let a_next = op.forward(&next);
        (next, a_next)
    };

    for k in 1..=cfg.max_iterations {
        iterations = k;
        let (mut next, mut a_next) = prox_step(&mut op, &momentum, &a_momentum);
        let mut f_next = half_sq_residual(&a_next, &yp) + lambda * l1(&next);
        if f_next > f_prev {
            restarts += 1;
            tk = 1.0;
            (next, a_next) = prox_step(&mut op, &alpha, &a_alpha);
            f_next = half_sq_residual(&a_next, &yp) + lambda * l1(&next);
        }
        if !f_next.is_finite() {
            return Err(Error::Diverged { iteration: k, objective: f_next });
        }
        let t_next = (1.0 + (1.0 + 4.0 * tk * tk).sqrt()) / 2.0;
        let beta = (tk - 1.0) / t_next;
        momentum = &next + &((&next - &alpha) * beta);
        a_momentum = &a_next + &((&a_next - &a_alpha) * beta);
        tk = t_next;
        alpha = next;
        a_alpha = a_next;
        trace.push(f_next);
        let change = (f_prev - f_next).abs() / f_prev.abs().max(f64::MIN_POSITIVE);
        f_prev = f_next;
        if change < cfg.tolerance {
            break;
        }
    }

    let x = op.transform.synthesize(alpha.view());
    Ok(ReconstructedBlock {
        estimates: x.slice(s![.., ..t_raw]).to_owned(),
        sample_rate_mhz,
        iterations_used: iterations,
        final_objective: f_prev,
        lambda,
        objective_trace: trace,
        restarts,
    })
}

/// Reconstructs the full block from ADC codes acquired with `phi`.
pub fn fista_reconstruct(y: &CompressedBlock, phi: &MeasurementMatrix, cfg: &FistaConfig) -> Result<ReconstructedBlock> {
    if y.rows() != phi.n_rows() {
        return Err(Error::Dimension(format!("{} code rows for a matrix with {} rows", y.rows(), phi.n_rows())));
    }
    fista_solve(y.measurements().view(), phi, cfg, y.sample_rate_mhz)
}

/// Uncompressed reference used to rank λ candidates.
pub struct Calibration<'a> {
    pub reference: ArrayView2<'a, f64>,
    pub adc: &'a AdcConfig,
}

/// Picks λ among `candidates`: lowest NMSE against the calibration block when
/// one is given (its compression is emulated with `phi`), otherwise the
/// L-curve corner of `(log ‖Y − ΦX̂‖, log ‖WX̂‖₁)`.
pub fn select_lambda(
    y: &CompressedBlock,
    phi: &MeasurementMatrix,
    candidates: &[f64],
    base: &FistaConfig,
    calibration: Option<Calibration<'_>>,
) -> Result<f64> {
    let first = *candidates.first().ok_or_else(|| Error::Config("no lambda candidates".into()))?;
    if candidates.iter().all(|&c| c == first) {
        return Ok(first);
    }
    let run = |meas: ArrayView2<'_, f64>, lambda: f64| {
        fista_solve(meas, phi, &FistaConfig { lambda: Some(lambda), ..base.clone() }, y.sample_rate_mhz)
    };

    if let Some(cal) = calibration {
        let emulated = mvm_adc::ideal_mvm(cal.reference, phi, cal.adc)?;
        let codes = mvm_adc::quantize_block(emulated.view(), cal.adc);
        let block = CompressedBlock {
            codes,
            bits: cal.adc.bits,
            scale_v_per_lsb: cal.adc.lsb(),
            mac_scale: cal.adc.mac_scale(),
            sample_rate_mhz: y.sample_rate_mhz,
            matrix_id: String::new(),
        };
        let meas = block.measurements();
        let mut best = (f64::INFINITY, first);
        for &lambda in candidates {
            let rec = run(meas.view(), lambda)?;
            let e = metrics::nmse(rec.estimates.view(), cal.reference)?;
            if e < best.0 {
                best = (e, lambda);
            }
        }
        return Ok(best.1);
    }

    let meas = y.measurements();
    let mut points = Vec::with_capacity(candidates.len());
    for &lambda in candidates {
        let rec = run(meas.view(), lambda)?;
        let residual = (phi.apply(rec.estimates.view())? - &meas).iter().map(|v| v * v).sum::<f64>().sqrt();
        let t = padded_len(rec.estimates.ncols(), base.wavelet.levels);
        let mut xp = Array2::zeros((rec.estimates.nrows(), t));
        xp.slice_mut(s![.., ..rec.estimates.ncols()]).assign(&rec.estimates);
        let penalty = l1(&BlockTransform::new(&base.wavelet, xp.nrows(), t).analyze(xp.view()));
        points.push((lambda, residual.max(1e-300).ln(), penalty.max(1e-300).ln()));
    }
    Ok(l_curve_corner(&points))
}

/// Point farthest from the chord joining the ends of the curve (sorted by λ).
fn l_curve_corner(points: &[(f64, f64, f64)]) -> f64 {
    let mut p = points.to_vec();
    p.sort_by(|a, b| a.0.total_cmp(&b.0));
    if p.len() < 3 {
        return p[0].0;
    }
    let (a, b) = (p[0], p[p.len() - 1]);
    let (dx, dy) = (b.1 - a.1, b.2 - a.2);
    let len = (dx * dx + dy * dy).sqrt();
    if len == 0.0 {
        return p[0].0;
    }
    let mut best = (f64::NEG_INFINITY, p[0].0);
    for q in &p {
        let d = ((q.1 - a.1) * dy - (q.2 - a.2) * dx).abs() / len;
        if d > best.0 {
            best = (d, q.0);
        }
    }
    best.1
}
