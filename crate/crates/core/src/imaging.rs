//! Delay-and-sum backprojection onto a voxel grid, 3D SSIM, and
//! maximum-intensity projections.

use ndarray::{Array1, Array2, Array3, ArrayView2, Axis, Zip};
use rayon::prelude::*;
use rustfft::{num_complex::Complex64, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::block::RawSignalBlock;
use crate::error::{Error, Result};
use crate::phantom::{AcousticConfig, Phantom, ScanSchedule, TransducerArray};

/// Imaging band of the receiver.
pub const BAND_LOW_MHZ: f64 = 1.75;
pub const BAND_HIGH_MHZ: f64 = 5.25;
pub const SSIM_WINDOW: usize = 7;
pub const SSIM_SIGMA: f64 = 1.5;

/// Voxel lattice: `origin + index × spacing` per axis, axes ordered x, y, z.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub dims: [usize; 3],
    pub origin_mm: [f64; 3],
    pub spacing_mm: [f64; 3],
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        if self.dims.contains(&0) {
            return Err(Error::Config(format!("grid dims {:?} must all be >= 1", self.dims)));
        }
        if self.spacing_mm.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
            return Err(Error::Config(format!("grid spacing {:?} must be positive", self.spacing_mm)));
        }
        if self.origin_mm.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("grid origin must be finite".into()));
        }
        Ok(())
    }

    /// Grid under the emulated aperture at 1 mm in-plane spacing and 0.5 mm
    /// depth spacing, padded laterally by `margin_mm`.
    pub fn covering(array: &TransducerArray, schedule: &ScanSchedule, depth_mm: [f64; 2], margin_mm: f64) -> Self {
        let elems = schedule.virtual_elements(array);
        let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
        for e in &elems {
            for k in 0..2 {
                lo[k] = lo[k].min(e[k]);
                hi[k] = hi[k].max(e[k]);
            }
        }
        let spacing = [1.0, 1.0, 0.5];
        let mut dims = [0usize; 3];
        let mut origin = [0.0; 3];
        for k in 0..2 {
            origin[k] = lo[k] - margin_mm;
            dims[k] = ((hi[k] - lo[k] + 2.0 * margin_mm) / spacing[k]).round() as usize + 1;
        }
        origin[2] = depth_mm[0];
        dims[2] = ((depth_mm[1] - depth_mm[0]) / spacing[2]).round() as usize + 1;
        Self { dims, origin_mm: origin, spacing_mm: spacing }
    }

    pub fn position(&self, idx: [usize; 3]) -> [f64; 3] {
        std::array::from_fn(|k| self.origin_mm[k] + idx[k] as f64 * self.spacing_mm[k])
    }

    /// Nearest voxel index of a point, if inside the grid.
    pub fn nearest(&self, p: [f64; 3]) -> Option<[usize; 3]> {
        let mut idx = [0usize; 3];
        for k in 0..3 {
            let f = ((p[k] - self.origin_mm[k]) / self.spacing_mm[k]).round();
            if f < 0.0 || f >= self.dims[k] as f64 {
                return None;
            }
            idx[k] = f as usize;
        }
        Some(idx)
    }

    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Voxels indexed `[x, y, z]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageVolume {
    pub voxels: Array3<f64>,
    pub grid: GridSpec,
}

impl ImageVolume {
    pub fn new(voxels: Array3<f64>, grid: GridSpec) -> Result<Self> {
        grid.validate()?;
        let d = voxels.dim();
        if [d.0, d.1, d.2] != grid.dims {
            return Err(Error::Dimension(format!("voxels {:?} vs grid dims {:?}", d, grid.dims)));
        }
        if voxels.iter().any(|v| !v.is_finite()) {
            return Err(Error::Dimension("volume contains non-finite voxels".into()));
        }
        Ok(Self { voxels, grid })
    }

    pub fn zeros(grid: GridSpec) -> Result<Self> {
        let [x, y, z] = grid.dims;
        Self::new(Array3::zeros((x, y, z)), grid)
    }

    pub fn argmax(&self) -> [usize; 3] {
        let mut best = (f64::NEG_INFINITY, (0, 0, 0));
        for (i, &v) in self.voxels.indexed_iter() {
            if v > best.0 {
                best = (v, i);
            }
        }
        let (x, y, z) = best.1;
        [x, y, z]
    }

    /// Magnitude of the analytic signal along depth, for display.
    pub fn envelope(&self) -> ImageVolume {
        let nz = self.grid.dims[2];
        let mut planner = FftPlanner::new();
        let fwd = planner.plan_fft_forward(nz);
        let inv = planner.plan_fft_inverse(nz);
        let mut out = self.voxels.clone();
        for mut lane in out.lanes_mut(Axis(2)) {
            let mut buf: Vec<Complex64> = lane.iter().map(|&v| Complex64::new(v, 0.0)).collect();
            fwd.process(&mut buf);
            for (k, b) in buf.iter_mut().enumerate() {
                let w = if k == 0 || (nz.is_multiple_of(2) && k == nz / 2) {
                    1.0
                } else if k < nz.div_ceil(2) {
                    2.0
                } else {
                    0.0
                };
                *b *= w / nz as f64;
            }
            inv.process(&mut buf);
            for (v, b) in lane.iter_mut().zip(&buf) {
                *v = b.norm();
            }
        }
        ImageVolume { voxels: out, grid: self.grid.clone() }
    }
}

/// Squared magnitude response of a fourth-order Butterworth band-pass, so
/// that applying it in the frequency domain equals forward-backward filtering.
pub fn bandpass_gain(f_mhz: f64, low_mhz: f64, high_mhz: f64) -> f64 {
    let f = f_mhz.abs();
    if f == 0.0 {
        return 0.0;
    }
    let f0sq = low_mhz * high_mhz;
    let x = (f * f - f0sq) / (f * (high_mhz - low_mhz));
    1.0 / (1.0 + x.powi(4))
}

/// Zero-phase band-pass of every channel, zero-padded to avoid wrap-around.
pub fn bandpass_block(x: ArrayView2<'_, f64>, sample_rate_mhz: f64, low_mhz: f64, high_mhz: f64) -> Array2<f64> {
    let t = x.ncols();
    let n = (2 * t).next_power_of_two();
    let mut planner = FftPlanner::new();
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);
    let gains: Vec<f64> = (0..n)
        .map(|k| {
            let f = if k <= n / 2 { k as f64 } else { k as f64 - n as f64 } * sample_rate_mhz / n as f64;
            bandpass_gain(f, low_mhz, high_mhz) / n as f64
        })
        .collect();
    let rows: Vec<Vec<f64>> = x
        .outer_iter()
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|row| {
            let mut buf = vec![Complex64::new(0.0, 0.0); n];
            for (b, &v) in buf.iter_mut().zip(row.iter()) {
                b.re = v;
            }
            fwd.process(&mut buf);
            for (b, g) in buf.iter_mut().zip(&gains) {
                *b *= g;
            }
            inv.process(&mut buf);
            buf[..t].iter().map(|c| c.re).collect()
        })
        .collect();
    let mut out = Array2::zeros(x.dim());
    for (mut r, v) in out.rows_mut().into_iter().zip(rows) {
        r.assign(&Array1::from(v));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackprojectionConfig {
    pub band_mhz: Option<[f64; 2]>,
    /// Use `2p − 2t·∂p/∂t` instead of `p`.
    pub derivative_term: bool,
}

impl Default for BackprojectionConfig {
    fn default() -> Self {
        Self { band_mhz: Some([BAND_LOW_MHZ, BAND_HIGH_MHZ]), derivative_term: false }
    }
}

fn interp(trace: &[f64], pos: f64) -> f64 {
    let i = pos.floor() as usize;
    let frac = pos - i as f64;
    if frac == 0.0 {
        trace[i]
    } else {
        trace[i] * (1.0 - frac) + trace[i + 1] * frac
    }
}

/// Delay-and-sum over all virtual elements of `schedule`. Channel order of
/// `block` must match [`ScanSchedule::virtual_elements`].
pub fn backproject(
    block: &RawSignalBlock,
    array: &TransducerArray,
    schedule: &ScanSchedule,
    acoustic: &AcousticConfig,
    grid: &GridSpec,
    cfg: &BackprojectionConfig,
) -> Result<ImageVolume> {
    grid.validate()?;
    let elements = schedule.virtual_elements(array);
    if block.channels() != elements.len() {
        return Err(Error::Dimension(format!(
            "block has {} channels, geometry has {} virtual elements",
            block.channels(),
            elements.len()
        )));
    }
    let fs = block.sample_rate_mhz;
    let c = acoustic.sound_speed_mm_us();
    let t_len = block.num_samples();
    let reach = t_len.saturating_sub(1) as f64 / fs * c;
    let corners: Vec<[f64; 3]> = (0..8)
        .map(|m| grid.position(std::array::from_fn(|k| if m >> k & 1 == 1 { grid.dims[k] - 1 } else { 0 })))
        .collect();
    let required = elements
        .iter()
        .flat_map(|e| corners.iter().map(move |p| dist(*p, *e)))
        .fold(0.0, f64::max);
    if required > reach {
        return Err(Error::OutOfReach { required_mm: required, reachable_mm: reach });
    }

    let mut signals = match cfg.band_mhz {
        Some([lo, hi]) => bandpass_block(block.view(), fs, lo, hi),
        None => block.samples.clone(),
    };
    if cfg.derivative_term {
        let src = signals.clone();
        for (mut row, s) in signals.rows_mut().into_iter().zip(src.rows()) {
            for n in 0..t_len {
                let d = if t_len < 2 {
                    0.0
                } else if n == 0 {
                    s[1] - s[0]
                } else if n == t_len - 1 {
                    s[n] - s[n - 1]
                } else {
                    0.5 * (s[n + 1] - s[n - 1])
                };
                // t·∂p/∂t with t = n/fs and ∂/∂t = fs·Δ/Δn.
                row[n] = 2.0 * s[n] - 2.0 * n as f64 * d;
            }
        }
    }
    let traces: Vec<Vec<f64>> = signals.rows().into_iter().map(|r| r.to_vec()).collect();
    let samples_per_mm = fs / c;
    let [nx, ny, nz] = grid.dims;
    let planes: Vec<Vec<f64>> = (0..nx)
        .into_par_iter()
        .map(|ix| {
            let mut plane = vec![0.0; ny * nz];
            for iy in 0..ny {
                for iz in 0..nz {
                    let p = grid.position([ix, iy, iz]);
                    let mut acc = 0.0;
                    for (e, tr) in elements.iter().zip(&traces) {
                        acc += interp(tr, dist(p, *e) * samples_per_mm);
                    }
                    plane[iy * nz + iz] = acc;
                }
            }
            plane
        })
        .collect();
    let mut voxels = Array3::zeros((nx, ny, nz));
    for (ix, plane) in planes.iter().enumerate() {
        for iy in 0..ny {
            for iz in 0..nz {
                voxels[[ix, iy, iz]] = plane[iy * nz + iz];
            }
        }
    }
    ImageVolume::new(voxels, grid.clone())
}

fn dist(a: [f64; 3], b: [f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

fn gaussian_taps(window: usize, sigma: f64) -> Vec<f64> {
    let h = (window / 2) as f64;
    (0..window).map(|i| (-(i as f64 - h).powi(2) / (2.0 * sigma * sigma)).exp()).collect()
}

/// Separable Gaussian smoothing; taps falling outside the volume are
/// dropped and the remainder renormalized.
fn smooth(v: &Array3<f64>, taps: &[f64]) -> Array3<f64> {
    let h = taps.len() / 2;
    let mut cur = v.clone();
    for axis in 0..3 {
        let mut next = Array3::zeros(cur.dim());
        let n = cur.len_of(Axis(axis));
        for (src, mut dst) in cur.lanes(Axis(axis)).into_iter().zip(next.lanes_mut(Axis(axis))) {
            for i in 0..n {
                let (mut acc, mut wsum) = (0.0, 0.0);
                for (k, &w) in taps.iter().enumerate() {
                    let j = i as isize + k as isize - h as isize;
                    if j >= 0 && (j as usize) < n {
                        acc += w * src[j as usize];
                        wsum += w;
                    }
                }
                dst[i] = acc / wsum;
            }
        }
        cur = next;
    }
    cur
}

/// Mean local SSIM with a Gaussian window. `dynamic_range` defaults to the
/// joint max minus min of both volumes.
pub fn ssim3d(a: &ImageVolume, b: &ImageVolume, window: usize, dynamic_range: Option<f64>) -> Result<f64> {
    if a.grid.dims != b.grid.dims {
        return Err(Error::Dimension(format!("volume dims {:?} vs {:?}", a.grid.dims, b.grid.dims)));
    }
    if a.grid.spacing_mm != b.grid.spacing_mm {
        return Err(Error::Dimension(format!("volume spacing {:?} vs {:?}", a.grid.spacing_mm, b.grid.spacing_mm)));
    }
    if window.is_multiple_of(2) || window == 0 {
        return Err(Error::Config(format!("SSIM window {window} must be odd")));
    }
    let l = dynamic_range.unwrap_or_else(|| {
        let (lo, hi) = a.voxels.iter().chain(b.voxels.iter()).fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        hi - lo
    });
    let c1 = (0.01 * l).powi(2);
    let c2 = (0.03 * l).powi(2);
    let taps = gaussian_taps(window, SSIM_SIGMA);
    let (x, y) = (&a.voxels, &b.voxels);
    let mu_x = smooth(x, &taps);
    let mu_y = smooth(y, &taps);
    let xx = smooth(&(x * x), &taps);
    let yy = smooth(&(y * y), &taps);
    let xy = smooth(&(x * y), &taps);
    let mut total = 0.0;
    Zip::from(&mu_x).and(&mu_y).and(&xx).and(&yy).and(&xy).for_each(|&mx, &my, &sxx, &syy, &sxy| {
        let vx = sxx - mx * mx;
        let vy = syy - my * my;
        let cxy = sxy - mx * my;
        let num = (2.0 * mx * my + c1) * (2.0 * cxy + c2);
        let den = (mx * mx + my * my + c1) * (vx + vy + c2);
        total += if den == 0.0 { if num == 0.0 { 1.0 } else { 0.0 } } else { num / den };
    });
    Ok(total / mu_x.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    /// "xy", "xz" or "yz".
    pub plane: String,
    /// Row-major, `height × width`; the first label indexes columns.
    pub values: Array2<f64>,
    pub axis_labels: [String; 2],
    /// `[[min, max]; 2]` in mm for the column and row axes.
    pub extent_mm: [[f64; 2]; 2],
}

fn axis_extent(g: &GridSpec, k: usize) -> [f64; 2] {
    [g.origin_mm[k], g.origin_mm[k] + (g.dims[k] - 1) as f64 * g.spacing_mm[k]]
}

/// Maximum projections along z, y and x.
pub fn max_intensity_projections(v: &ImageVolume) -> [Projection; 3] {
    let max_along = |axis: usize| v.voxels.map_axis(Axis(axis), |lane| lane.iter().copied().fold(f64::NEG_INFINITY, f64::max));
    let g = &v.grid;
    // map_axis leaves the remaining axes in order; transpose so rows follow
    // the second label.
    let xy = max_along(2).reversed_axes();
    let xz = max_along(1).reversed_axes();
    let yz = max_along(0).reversed_axes();
    let mk = |plane: &str, values: Array2<f64>, a: usize, b: usize| Projection {
        plane: plane.into(),
        values,
        axis_labels: [["x", "y", "z"][a].to_string(), ["x", "y", "z"][b].to_string()],
        extent_mm: [axis_extent(g, a), axis_extent(g, b)],
    };
    [mk("xy", xy.to_owned(), 0, 1), mk("xz", xz.to_owned(), 0, 2), mk("yz", yz.to_owned(), 1, 2)]
}

/// Sum of absorber amplitudes binned to their nearest voxel.
pub fn rasterize(phantom: &Phantom, grid: &GridSpec) -> Result<ImageVolume> {
    let mut vol = ImageVolume::zeros(grid.clone())?;
    for a in &phantom.absorbers {
        if let Some([x, y, z]) = grid.nearest(a.position) {
            vol.voxels[[x, y, z]] += a.amplitude;
        }
    }
    Ok(vol)
}

/// 4-connected components of `image > threshold`.
pub fn connected_components(image: ArrayView2<'_, f64>, threshold: f64) -> usize {
    let (h, w) = image.dim();
    let mut seen = Array2::from_elem((h, w), false);
    let mut count = 0;
    let mut stack = Vec::new();
    for r in 0..h {
        for c in 0..w {
            if seen[[r, c]] || image[[r, c]] <= threshold {
                continue;
            }
            count += 1;
            stack.push((r, c));
            seen[[r, c]] = true;
            while let Some((i, j)) = stack.pop() {
                let nbrs = [(i.wrapping_sub(1), j), (i + 1, j), (i, j.wrapping_sub(1)), (i, j + 1)];
                for (a, b) in nbrs {
                    if a < h && b < w && !seen[[a, b]] && image[[a, b]] > threshold {
                        seen[[a, b]] = true;
                        stack.push((a, b));
                    }
                }
            }
        }
    }
    count
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phantom::{forward_simulate, PointAbsorber};

    fn small_grid() -> GridSpec {
        GridSpec { dims: [6, 5, 9], origin_mm: [-1.0, -1.0, 4.0], spacing_mm: [1.0, 1.0, 0.5] }
    }

    fn noise_volume(seed: u64) -> ImageVolume {
        let g = small_grid();
        let mut s = seed;
        let v = Array3::from_shape_fn((6, 5, 9), |_| {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (s >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        });
        ImageVolume::new(v, g).unwrap()
    }

    #[test]
    fn bandpass_shape() {
        let g = bandpass_gain((BAND_LOW_MHZ * BAND_HIGH_MHZ).sqrt(), BAND_LOW_MHZ, BAND_HIGH_MHZ);
        assert!((g - 1.0).abs() < 1e-12);
        // Edges are the −3 dB points of one pass, so half amplitude after two.
        assert!((bandpass_gain(BAND_LOW_MHZ, BAND_LOW_MHZ, BAND_HIGH_MHZ) - 0.5).abs() < 1e-12);
        assert!((bandpass_gain(BAND_HIGH_MHZ, BAND_LOW_MHZ, BAND_HIGH_MHZ) - 0.5).abs() < 1e-12);
        assert!(bandpass_gain(0.2, BAND_LOW_MHZ, BAND_HIGH_MHZ) < 1e-4);
    }

    #[test]
    fn ssim_identity_and_symmetry() {
        let a = noise_volume(1);
        let b = noise_volume(2);
        assert_eq!(ssim3d(&a, &a, 7, None).unwrap(), 1.0);
        let ab = ssim3d(&a, &b, 7, None).unwrap();
        let ba = ssim3d(&b, &a, 7, None).unwrap();
        assert!((ab - ba).abs() < 1e-12);
        assert!(ab < 1.0);
        let mut inv = a.clone();
        inv.voxels.mapv_inplace(|v| 3.0 - v);
        assert!(ssim3d(&a, &inv, 7, None).unwrap() < 1.0);
        assert!(ssim3d(&a, &a, 6, None).is_err());
        let other = ImageVolume::zeros(GridSpec { dims: [6, 5, 8], ..small_grid() }).unwrap();
        assert!(matches!(ssim3d(&a, &other, 7, None), Err(Error::Dimension(_))));
    }

    #[test]
    fn ssim_noise_sweep_monotone() {
        let a = noise_volume(3);
        let n = noise_volume(4);
        let std = (a.voxels.iter().map(|v| v * v).sum::<f64>() / a.voxels.len() as f64).sqrt();
        let scores: Vec<f64> = [0.01, 0.1, 1.0]
            .iter()
            .map(|e| {
                let b = ImageVolume::new(&a.voxels + &(&n.voxels * (e * std)), a.grid.clone()).unwrap();
                ssim3d(&a, &b, 7, None).unwrap()
            })
            .collect();
        assert!(scores[0] > scores[1] && scores[1] > scores[2], "{scores:?}");
    }

    #[test]
    fn projections_of_hot_voxel() {
        let mut v = ImageVolume::zeros(small_grid()).unwrap();
        v.voxels[[4, 2, 7]] = 5.0;
        let [xy, xz, yz] = max_intensity_projections(&v);
        assert_eq!(xy.values.dim(), (5, 6));
        assert_eq!(xy.values[[2, 4]], 5.0);
        assert_eq!(xz.values[[7, 4]], 5.0);
        assert_eq!(yz.values[[7, 2]], 5.0);
        assert_eq!(xy.values.iter().filter(|&&x| x != 0.0).count(), 1);
        assert_eq!(xz.extent_mm, [[-1.0, 4.0], [4.0, 8.0]]);
        let c = ImageVolume::new(Array3::from_elem((6, 5, 9), 2.5), small_grid()).unwrap();
        assert!(max_intensity_projections(&c).iter().all(|p| p.values.iter().all(|&x| x == 2.5)));
    }

    #[test]
    fn single_absorber_is_localized() {
        let array = TransducerArray::default();
        let acoustic = AcousticConfig::default();
        let grid = GridSpec { dims: [8, 8, 17], origin_mm: [-2.0, -2.0, 4.0], spacing_mm: [1.0, 1.0, 0.5] };
        let target = [2, 3, 8];
        let phantom = Phantom { name: "dot".into(), absorbers: vec![PointAbsorber::new(grid.position(target), 1.0).unwrap()] };
        let raw = forward_simulate(&phantom, &array, &acoustic).unwrap();
        let vol = backproject(&raw, &array, &ScanSchedule::single(), &acoustic, &grid, &BackprojectionConfig::default()).unwrap();
        let m = vol.argmax();
        for k in 0..3 {
            assert!((m[k] as i64 - target[k] as i64).abs() <= 1, "{m:?} vs {target:?}");
        }
    }

    #[test]
    fn zero_block_and_reach() {
        let array = TransducerArray::default();
        let acoustic = AcousticConfig::default();
        let raw = RawSignalBlock::zeros(16, 1024, acoustic.sample_rate_mhz);
        let grid = small_grid();
        let vol = backproject(&raw, &array, &ScanSchedule::single(), &acoustic, &grid, &BackprojectionConfig::default()).unwrap();
        assert!(vol.voxels.iter().all(|&v| v == 0.0));
        let deep = GridSpec { dims: [2, 2, 3], origin_mm: [0.0, 0.0, 60.0], spacing_mm: [1.0, 1.0, 0.5] };
        let err = backproject(&raw, &array, &ScanSchedule::single(), &acoustic, &deep, &BackprojectionConfig::default()).unwrap_err();
        assert!(matches!(err, Error::OutOfReach { .. }));
        let wrong = RawSignalBlock::zeros(15, 1024, acoustic.sample_rate_mhz);
        assert!(backproject(&wrong, &array, &ScanSchedule::single(), &acoustic, &grid, &BackprojectionConfig::default()).is_err());
    }

    #[test]
    fn envelope_of_cosine_is_flat() {
        let g = GridSpec { dims: [1, 1, 64], origin_mm: [0.0; 3], spacing_mm: [1.0, 1.0, 0.5] };
        let v = Array3::from_shape_fn((1, 1, 64), |(_, _, z)| 2.0 * (2.0 * std::f64::consts::PI * 8.0 * z as f64 / 64.0).cos());
        let e = ImageVolume::new(v, g).unwrap().envelope();
        assert!(e.voxels.iter().all(|&x| (x - 2.0).abs() < 1e-9));
    }

    #[test]
    fn components_count() {
        let mut img = Array2::zeros((5, 5));
        img[[0, 0]] = 1.0;
        img[[0, 1]] = 1.0;
        img[[3, 3]] = 1.0;
        img[[4, 4]] = 1.0;
        assert_eq!(connected_components(img.view(), 0.5), 3);
    }
}
