//! Ternary measurement matrices and empirical RIP diagnostics.

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array2, ArrayView2};
use rand::seq::index;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::block::RawSignalBlock;
use crate::error::{Error, Result};
use crate::rng::{self, Domain};

pub const DEFAULT_DEADZONE: f64 = 0.25;

/// N×M matrix with entries in {−1, 0, +1}, no all-zero rows, N ≤ M.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "MatrixFile", into = "MatrixFile")]
pub struct MeasurementMatrix {
    n_rows: usize,
    m_cols: usize,
    entries: Vec<i8>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MatrixFile {
    n: usize,
    m: usize,
    entries: Vec<Vec<i8>>,
}

impl TryFrom<MatrixFile> for MeasurementMatrix {
    type Error = Error;

    fn try_from(f: MatrixFile) -> Result<Self> {
        if f.entries.len() != f.n {
            return Err(Error::Matrix(format!("declared n = {} but {} rows given", f.n, f.entries.len())));
        }
        if f.entries.iter().any(|r| r.len() != f.m) {
            return Err(Error::Matrix(format!("every row must have m = {} entries", f.m)));
        }
        Self::from_rows(&f.entries)
    }
}

impl From<MeasurementMatrix> for MatrixFile {
    fn from(m: MeasurementMatrix) -> Self {
        MatrixFile { n: m.n_rows, m: m.m_cols, entries: m.rows().map(|r| r.to_vec()).collect() }
    }
}

impl MeasurementMatrix {
    pub fn new(n_rows: usize, m_cols: usize, entries: Vec<i8>) -> Result<Self> {
        if n_rows == 0 || m_cols == 0 {
            return Err(Error::Matrix("matrix must be non-empty".into()));
        }
        if n_rows > m_cols {
            return Err(Error::Matrix(format!("{n_rows} rows exceed {m_cols} columns")));
        }
        if entries.len() != n_rows * m_cols {
            return Err(Error::Matrix(format!("expected {} entries, got {}", n_rows * m_cols, entries.len())));
        }
        if let Some(v) = entries.iter().find(|v| !(-1..=1).contains(*v)) {
            return Err(Error::Matrix(format!("entry {v} is not ternary")));
        }
        let m = Self { n_rows, m_cols, entries };
        if let Some(r) = (0..n_rows).find(|&r| m.row(r).iter().all(|&v| v == 0)) {
            return Err(Error::Matrix(format!("row {r} is all zero")));
        }
        Ok(m)
    }

    pub fn from_rows<R: AsRef<[i8]>>(rows: &[R]) -> Result<Self> {
        let m = rows.first().map(|r| r.as_ref().len()).unwrap_or(0);
        if rows.iter().any(|r| r.as_ref().len() != m) {
            return Err(Error::Matrix("ragged rows".into()));
        }
        Self::new(rows.len(), m, rows.iter().flat_map(|r| r.as_ref().iter().copied()).collect())
    }

    pub fn identity(m: usize) -> Self {
        let mut e = vec![0i8; m * m];
        for i in 0..m {
            e[i * m + i] = 1;
        }
        Self { n_rows: m, m_cols: m, entries: e }
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn m_cols(&self) -> usize {
        self.m_cols
    }

    pub fn row(&self, r: usize) -> &[i8] {
        &self.entries[r * self.m_cols..(r + 1) * self.m_cols]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[i8]> {
        self.entries.chunks(self.m_cols)
    }

    pub fn get(&self, r: usize, c: usize) -> i8 {
        self.entries[r * self.m_cols + c]
    }

    pub fn nonzeros(&self) -> usize {
        self.entries.iter().filter(|&&v| v != 0).count()
    }

    pub fn to_f64(&self) -> Array2<f64> {
        Array2::from_shape_fn((self.n_rows, self.m_cols), |(r, c)| self.get(r, c) as f64)
    }

    /// Rows stacked on top of each other (an identity schedule becomes I).
    pub fn vstack(parts: &[MeasurementMatrix]) -> Result<Self> {
        let m = parts.first().ok_or_else(|| Error::Matrix("nothing to stack".into()))?.m_cols;
        if parts.iter().any(|p| p.m_cols != m) {
            return Err(Error::Matrix("stacked matrices need equal column counts".into()));
        }
        let entries: Vec<i8> = parts.iter().flat_map(|p| p.entries.iter().copied()).collect();
        let n = entries.len() / m;
        if n > m {
            return Err(Error::Matrix(format!("{n} stacked rows exceed {m} columns")));
        }
        Ok(Self { n_rows: n, m_cols: m, entries })
    }

    /// Row-to-column spread: `(first, last)` nonzero column of each row.
    pub fn row_support(&self, r: usize) -> (usize, usize) {
        let row = self.row(r);
        let first = row.iter().position(|&v| v != 0).expect("rows are nonzero");
        let last = row.iter().rposition(|&v| v != 0).expect("rows are nonzero");
        (first, last)
    }

    /// `Φ · X` in floating point.
    pub fn apply(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        if x.nrows() != self.m_cols {
            return Err(Error::Dimension(format!("matrix has {} columns, block has {} rows", self.m_cols, x.nrows())));
        }
        let mut out = Array2::zeros((self.n_rows, x.ncols()));
        for r in 0..self.n_rows {
            let mut dst = out.row_mut(r);
            for (c, &w) in self.row(r).iter().enumerate() {
                match w {
                    1 => dst += &x.row(c),
                    -1 => dst -= &x.row(c),
                    _ => {}
                }
            }
        }
        Ok(out)
    }

    /// `Φᵀ · Y` in floating point.
    pub fn apply_transpose(&self, y: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        if y.nrows() != self.n_rows {
            return Err(Error::Dimension(format!("matrix has {} rows, block has {} rows", self.n_rows, y.nrows())));
        }
        let mut out = Array2::zeros((self.m_cols, y.ncols()));
        for r in 0..self.n_rows {
            for (c, &w) in self.row(r).iter().enumerate() {
                match w {
                    1 => out.row_mut(c).scaled_add(1.0, &y.row(r)),
                    -1 => out.row_mut(c).scaled_add(-1.0, &y.row(r)),
                    _ => {}
                }
            }
        }
        Ok(out)
    }

    /// Largest eigenvalue of ΦᵀΦ by power iteration, to relative accuracy `tol`.
    pub fn spectral_norm_sq(&self, tol: f64) -> f64 {
        let phi = self.to_f64();
        let gram = phi.t().dot(&phi);
        let m = self.m_cols;
        let mut v = ndarray::Array1::from_shape_fn(m, |i| 1.0 + (i as f64 * 0.618_033_988_75).fract());
        v /= v.dot(&v).sqrt();
        let mut lambda = 0.0;
        for _ in 0..10_000 {
            let w = gram.dot(&v);
            let next = v.dot(&w);
            let norm = w.dot(&w).sqrt();
            if norm == 0.0 {
                return 0.0;
            }
            v = w / norm;
            if (next - lambda).abs() <= tol * next.abs() * 1e-2 {
                lambda = next;
                break;
            }
            lambda = next;
        }
        lambda
    }
}

/// i.i.d. entries: 0 with probability `zero_fraction`, else ±1.
pub fn random_ternary(n: usize, m: usize, zero_fraction: f64, seed: u64) -> Result<MeasurementMatrix> {
    if n == 0 || n > m {
        return Err(Error::Matrix(format!("need 1 <= n <= m, got n = {n}, m = {m}")));
    }
    if !(0.0..1.0).contains(&zero_fraction) {
        return Err(Error::Matrix(format!("zero_fraction {zero_fraction} outside [0, 1)")));
    }
    let mut rng = rng::stream(seed, Domain::Matrix, &[n as u64, m as u64]);
    let mut entries = Vec::with_capacity(n * m);
    for _ in 0..n {
        loop {
            let row: Vec<i8> = (0..m)
                .map(|_| {
                    if rng.random::<f64>() < zero_fraction {
                        0
                    } else if rng.random::<bool>() {
                        1
                    } else {
                        -1
                    }
                })
                .collect();
            if row.iter().any(|&v| v != 0) {
                entries.extend(row);
                break;
            }
        }
    }
    MeasurementMatrix::new(n, m, entries)
}

/// One-hot passes covering every channel once: `⌈m / n⌉` matrices of up to
/// `n` rows whose stacked rows form the m×m identity.
pub fn identity_schedule(m: usize, n: usize) -> Result<Vec<MeasurementMatrix>> {
    if m == 0 || n == 0 {
        return Err(Error::Matrix("identity schedule needs m >= 1 and n >= 1".into()));
    }
    let n = n.min(m);
    Ok((0..m.div_ceil(n))
        .map(|pass| {
            let rows: Vec<Vec<i8>> = (pass * n..((pass + 1) * n).min(m))
                .map(|ch| {
                    let mut r = vec![0i8; m];
                    r[ch] = 1;
                    r
                })
                .collect();
            MeasurementMatrix::from_rows(&rows).expect("one-hot rows are valid")
        })
        .collect())
}

/// PCA outcome, with the ternarized matrix and how far it drifts from
/// orthogonality.
#[derive(Debug, Clone)]
pub struct PcaTernary {
    pub matrix: MeasurementMatrix,
    pub eigenvalues: Vec<f64>,
    pub eigenvectors: Vec<Vec<f64>>,
    /// Largest |cos| between distinct ternary rows.
    pub max_row_coherence: f64,
}

/// Top-`n` principal directions of the channel covariance, sign-quantized
/// with a relative deadzone.
pub fn pca_ternary(calibration: &RawSignalBlock, n: usize, deadzone: f64) -> Result<PcaTernary> {
    let (m, t) = calibration.samples.dim();
    if t < m {
        return Err(Error::Dimension(format!("calibration needs at least {m} samples, got {t}")));
    }
    if n == 0 || n > m {
        return Err(Error::Matrix(format!("need 1 <= n <= {m}, got {n}")));
    }
    if !(0.0..1.0).contains(&deadzone) {
        return Err(Error::Matrix(format!("deadzone {deadzone} outside [0, 1)")));
    }
    let x = &calibration.samples;
    let means: Vec<f64> = x.rows().into_iter().map(|r| r.sum() / t as f64).collect();
    let mut cov = DMatrix::<f64>::zeros(m, m);
    for i in 0..m {
        for j in i..m {
            let s: f64 = x.row(i).iter().zip(x.row(j)).map(|(a, b)| (a - means[i]) * (b - means[j])).sum();
            cov[(i, j)] = s / t as f64;
            cov[(j, i)] = s / t as f64;
        }
    }
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let top = eig.eigenvalues[order[0]];
    let rank = order.iter().filter(|&&k| eig.eigenvalues[k] > top.max(0.0) * 1e-10 * m as f64).count();
    if top <= 0.0 || rank < n {
        return Err(Error::RankDeficient { rank: if top <= 0.0 { 0 } else { rank }, requested: n });
    }

    let mut rows = Vec::with_capacity(n);
    let mut eigenvectors = Vec::with_capacity(n);
    for &k in order.iter().take(n) {
        let mut v: Vec<f64> = eig.eigenvectors.column(k).iter().copied().collect();
        // Sign convention: the first component within rounding of the
        // largest magnitude is made positive.
        let vmax = v.iter().fold(0.0f64, |a, x| a.max(x.abs()));
        let lead = v.iter().position(|x| x.abs() >= vmax * (1.0 - 1e-9)).unwrap_or(0);
        if v[lead] < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
        let row: Vec<i8> = v
            .iter()
            .map(|&x| {
                if x == 0.0 || x.abs() < deadzone * vmax {
                    0
                } else if x > 0.0 {
                    1
                } else {
                    -1
                }
            })
            .collect();
        rows.push(row);
        eigenvectors.push(v);
    }
    let matrix = MeasurementMatrix::from_rows(&rows)?;
    let mut coherence: f64 = 0.0;
    for a in 0..n {
        for b in a + 1..n {
            let ra = matrix.row(a);
            let rb = matrix.row(b);
            let dot: f64 = ra.iter().zip(rb).map(|(&p, &q)| p as f64 * q as f64).sum();
            let na = ra.iter().filter(|&&v| v != 0).count() as f64;
            let nb = rb.iter().filter(|&&v| v != 0).count() as f64;
            coherence = coherence.max(dot.abs() / (na * nb).sqrt());
        }
    }
    Ok(PcaTernary {
        matrix,
        eigenvalues: order.iter().take(n).map(|&k| eig.eigenvalues[k]).collect(),
        eigenvectors,
        max_row_coherence: coherence,
    })
}

/// Composite matrix with `blocks` on the diagonal.
pub fn block_diagonal(blocks: &[MeasurementMatrix]) -> Result<MeasurementMatrix> {
    if blocks.is_empty() {
        return Err(Error::Matrix("block_diagonal needs at least one block".into()));
    }
    let n: usize = blocks.iter().map(|b| b.n_rows).sum();
    let m: usize = blocks.iter().map(|b| b.m_cols).sum();
    let mut entries = vec![0i8; n * m];
    let (mut r0, mut c0) = (0, 0);
    for b in blocks {
        for r in 0..b.n_rows {
            entries[(r0 + r) * m + c0..(r0 + r) * m + c0 + b.m_cols].copy_from_slice(b.row(r));
        }
        r0 += b.n_rows;
        c0 += b.m_cols;
    }
    MeasurementMatrix::new(n, m, entries)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RipStats {
    pub min_ratio: f64,
    pub max_ratio: f64,
    pub delta: f64,
}

/// Monte-Carlo isometry check over random `sparsity`-sparse unit vectors,
/// with columns normalized by the mean nonzero count per column.
pub fn empirical_rip(phi: &MeasurementMatrix, sparsity: usize, trials: usize, seed: u64) -> Result<RipStats> {
    if sparsity == 0 || sparsity > phi.m_cols || trials == 0 {
        return Err(Error::Config(format!(
            "need 1 <= sparsity <= {} and trials >= 1",
            phi.m_cols
        )));
    }
    let scale = 1.0 / (phi.nonzeros() as f64 / phi.m_cols as f64);
    let mut rng = rng::stream(seed, Domain::Rip, &[sparsity as u64]);
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    let mut x = vec![0.0; sparsity];
    for _ in 0..trials {
        let support = index::sample(&mut rng, phi.m_cols, sparsity).into_vec();
        for v in x.iter_mut() {
            *v = StandardNormal.sample(&mut rng);
        }
        let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        let ratio = (0..phi.n_rows)
            .map(|r| {
                let s: f64 = support.iter().zip(&x).map(|(&c, v)| phi.get(r, c) as f64 * v / norm).sum();
                s * s
            })
            .sum::<f64>()
            * scale;
        lo = lo.min(ratio);
        hi = hi.max(ratio);
    }
    Ok(RipStats { min_ratio: lo, max_ratio: hi, delta: (1.0 - lo).abs().max((hi - 1.0).abs()) })
}
