//! Periodized orthonormal Daubechies wavelet transforms.
//!
//! Coefficients are laid out coarse to fine, `[a_J, d_J, d_{J-1}, ..., d_1]`.
//! Periodic extension keeps the transform exactly orthonormal for any length
//! divisible by `2^levels`.

use ndarray::{Array2, ArrayView2, ArrayViewMut4, Axis};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WaveletFamily {
    Haar,
    Db2,
    /// Eight-tap Daubechies filter with four vanishing moments.
    Db4,
}

const HAAR: [f64; 2] = [std::f64::consts::FRAC_1_SQRT_2, std::f64::consts::FRAC_1_SQRT_2];
const DB2: [f64; 4] = [0.482_962_913_144_534_16, 0.836_516_303_737_807_9, 0.224_143_868_042_013_4, -0.129_409_522_551_260_37];
const DB4: [f64; 8] = [
    0.230_377_813_308_896_5,
    0.714_846_570_552_915_6,
    0.630_880_767_929_858_9,
    -0.027_983_769_416_859_854,
    -0.187_034_811_719_093_08,
    0.030_841_381_835_560_764,
    0.032_883_011_666_885_2,
    -0.010_597_401_785_069_032,
];

impl WaveletFamily {
    /// Low-pass reconstruction filter.
    pub fn lowpass(self) -> &'static [f64] {
        match self {
            WaveletFamily::Haar => &HAAR,
            WaveletFamily::Db2 => &DB2,
            WaveletFamily::Db4 => &DB4,
        }
    }

    pub fn highpass(self) -> Vec<f64> {
        let h = self.lowpass();
        let n = h.len();
        (0..n).map(|k| if k % 2 == 0 { h[n - 1 - k] } else { -h[n - 1 - k] }).collect()
    }
}

/// Which block axes carry the sparsifying transform.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum BasisAxes {
    /// Per channel, along time.
    Time,
    /// Separable: along time, then across the channel index with its own depth.
    ChannelTime { channel_family: WaveletFamily, channel_levels: usize },
    /// Separable: along time, then a 2D transform over each `rows × cols`
    /// tile of consecutive channels laid out row-major, which matches the
    /// element order of one array placement. `levels` gives the depth along
    /// the row index and along the column index; zero leaves that axis alone.
    ApertureTime { aperture_family: WaveletFamily, rows: usize, cols: usize, levels: [usize; 2] },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SparseBasis {
    pub family: WaveletFamily,
    pub levels: usize,
    pub axes: BasisAxes,
}

impl Default for SparseBasis {
    fn default() -> Self {
        Self { family: WaveletFamily::Db4, levels: 4, axes: BasisAxes::Time }
    }
}

/// Reusable 1D transform of one length.
#[derive(Debug, Clone)]
pub struct Dwt {
    lo: Vec<f64>,
    hi: Vec<f64>,
    levels: usize,
    len: usize,
    scratch: Vec<f64>,
}

impl Dwt {
    /// `len` must be divisible by `2^levels`.
    pub fn new(family: WaveletFamily, levels: usize, len: usize) -> Self {
        assert!(len.is_multiple_of(1 << levels), "length {len} not divisible by 2^{levels}");
        Self { lo: family.lowpass().to_vec(), hi: family.highpass(), levels, len, scratch: vec![0.0; len] }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn forward(&mut self, x: &mut [f64]) {
        debug_assert_eq!(x.len(), self.len);
        let mut n = self.len;
        for _ in 0..self.levels {
            let half = n / 2;
            for k in 0..half {
                let (mut a, mut d) = (0.0, 0.0);
                for (j, (&l, &h)) in self.lo.iter().zip(&self.hi).enumerate() {
                    let v = x[(2 * k + j) % n];
                    a += l * v;
                    d += h * v;
                }
                self.scratch[k] = a;
                self.scratch[half + k] = d;
            }
            x[..n].copy_from_slice(&self.scratch[..n]);
            n = half;
        }
    }

    pub fn inverse(&mut self, x: &mut [f64]) {
        debug_assert_eq!(x.len(), self.len);
        let mut n = self.len >> self.levels;
        for _ in 0..self.levels {
            let full = 2 * n;
            self.scratch[..full].iter_mut().for_each(|v| *v = 0.0);
            for k in 0..n {
                let a = x[k];
                let d = x[n + k];
                for (j, (&l, &h)) in self.lo.iter().zip(&self.hi).enumerate() {
                    self.scratch[(2 * k + j) % full] += l * a + h * d;
                }
            }
            x[..full].copy_from_slice(&self.scratch[..full]);
            n = full;
        }
    }
}

/// Length after zero-padding to a multiple of `2^levels`.
pub fn padded_len(len: usize, levels: usize) -> usize {
    let q = 1usize << levels;
    len.div_ceil(q) * q
}

/// Coefficients of a possibly padded signal.
#[derive(Debug, Clone, PartialEq)]
pub struct WaveletCoefficients {
    pub values: Vec<f64>,
    pub signal_len: usize,
}

pub fn dwt_forward(x: &[f64], family: WaveletFamily, levels: usize) -> WaveletCoefficients {
    let len = padded_len(x.len(), levels);
    let mut values = x.to_vec();
    values.resize(len, 0.0);
    if len > 0 {
        Dwt::new(family, levels, len).forward(&mut values);
    }
    WaveletCoefficients { values, signal_len: x.len() }
}

pub fn dwt_inverse(c: &WaveletCoefficients, family: WaveletFamily, levels: usize) -> Vec<f64> {
    let mut values = c.values.clone();
    if !values.is_empty() {
        Dwt::new(family, levels, values.len()).inverse(&mut values);
    }
    values.truncate(c.signal_len);
    values
}

fn along_axis(x: &mut Array2<f64>, axis: Axis, dwt: &mut Dwt, inverse: bool) {
    let mut buf = vec![0.0; dwt.len()];
    for mut lane in x.lanes_mut(axis) {
        for (b, v) in buf.iter_mut().zip(lane.iter()) {
            *b = *v;
        }
        if inverse {
            dwt.inverse(&mut buf);
        } else {
            dwt.forward(&mut buf);
        }
        for (v, b) in lane.iter_mut().zip(&buf) {
            *v = *b;
        }
    }
}

/// Channel-axis part of a [`BasisAxes`].
#[derive(Debug, Clone)]
enum ChannelTransform {
    None,
    Line(Dwt),
    Tiles { rows: usize, cols: usize, along_rows: Dwt, along_cols: Dwt },
}

fn levels_for(len: usize) -> usize {
    len.trailing_zeros() as usize
}

fn tile_view(x: &mut Array2<f64>, rows: usize, cols: usize) -> ArrayViewMut4<'_, f64> {
    let (m, t) = x.dim();
    x.view_mut().into_shape_with_order((m / (rows * cols), rows, cols, t)).expect("standard layout")
}

fn along_tile_axis(x: &mut Array2<f64>, rows: usize, cols: usize, axis: usize, dwt: &mut Dwt, inverse: bool) {
    let mut buf = vec![0.0; dwt.len()];
    for mut lane in tile_view(x, rows, cols).lanes_mut(Axis(axis)) {
        for (b, v) in buf.iter_mut().zip(lane.iter()) {
            *b = *v;
        }
        if inverse {
            dwt.inverse(&mut buf);
        } else {
            dwt.forward(&mut buf);
        }
        for (v, b) in lane.iter_mut().zip(&buf) {
            *v = *b;
        }
    }
}

/// Block analysis/synthesis for a fixed (channels × samples) shape, with
/// samples already padded to a valid length.
#[derive(Debug, Clone)]
pub struct BlockTransform {
    time: Dwt,
    channel: ChannelTransform,
}

impl BlockTransform {
    /// Panics if an aperture tile does not divide the channel count or has
    /// a side that is not a power of two.
    pub fn new(basis: &SparseBasis, channels: usize, samples: usize) -> Self {
        let channel = match basis.axes {
            BasisAxes::Time => ChannelTransform::None,
            BasisAxes::ChannelTime { channel_family, channel_levels } => {
                let levels = channel_levels.min(levels_for(channels));
                ChannelTransform::Line(Dwt::new(channel_family, levels, channels))
            }
            BasisAxes::ApertureTime { aperture_family, rows, cols, levels } => {
                assert!(
                    rows.is_power_of_two() && cols.is_power_of_two() && channels.is_multiple_of(rows * cols),
                    "{channels} channels cannot be tiled by {rows}x{cols}"
                );
                ChannelTransform::Tiles {
                    rows,
                    cols,
                    along_rows: Dwt::new(aperture_family, levels[0].min(levels_for(rows)), rows),
                    along_cols: Dwt::new(aperture_family, levels[1].min(levels_for(cols)), cols),
                }
            }
        };
        Self { time: Dwt::new(basis.family, basis.levels, samples), channel }
    }

    pub fn has_channel_axis(&self) -> bool {
        !matches!(self.channel, ChannelTransform::None)
    }

    /// Time-axis analysis only.
    pub fn analyze_time(&mut self, x: &mut Array2<f64>) {
        along_axis(x, Axis(1), &mut self.time, false);
    }

    pub fn synthesize_time(&mut self, x: &mut Array2<f64>) {
        along_axis(x, Axis(1), &mut self.time, true);
    }

    pub fn analyze_channels(&mut self, x: &mut Array2<f64>) {
        match &mut self.channel {
            ChannelTransform::None => {}
            ChannelTransform::Line(d) => along_axis(x, Axis(0), d, false),
            ChannelTransform::Tiles { rows, cols, along_rows, along_cols } => {
                along_tile_axis(x, *rows, *cols, 2, along_cols, false);
                along_tile_axis(x, *rows, *cols, 1, along_rows, false);
            }
        }
    }

    pub fn synthesize_channels(&mut self, x: &mut Array2<f64>) {
        match &mut self.channel {
            ChannelTransform::None => {}
            ChannelTransform::Line(d) => along_axis(x, Axis(0), d, true),
            ChannelTransform::Tiles { rows, cols, along_rows, along_cols } => {
                along_tile_axis(x, *rows, *cols, 1, along_rows, true);
                along_tile_axis(x, *rows, *cols, 2, along_cols, true);
            }
        }
    }

    pub fn analyze(&mut self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        let mut out = x.as_standard_layout().into_owned();
        self.analyze_time(&mut out);
        self.analyze_channels(&mut out);
        out
    }

    pub fn synthesize(&mut self, c: ArrayView2<'_, f64>) -> Array2<f64> {
        let mut out = c.as_standard_layout().into_owned();
        self.synthesize_channels(&mut out);
        self.synthesize_time(&mut out);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn norm(v: &[f64]) -> f64 {
        v.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    #[test]
    fn filters_are_orthonormal() {
        for f in [WaveletFamily::Haar, WaveletFamily::Db2, WaveletFamily::Db4] {
            let h = f.lowpass();
            assert!((h.iter().sum::<f64>() - std::f64::consts::SQRT_2).abs() < 1e-14);
            for shift in (0..h.len()).step_by(2) {
                let dot: f64 = h[shift..].iter().zip(h).map(|(a, b)| a * b).sum();
                let expected = if shift == 0 { 1.0 } else { 0.0 };
                assert!((dot - expected).abs() < 1e-14, "{f:?} shift {shift}: {dot}");
            }
        }
    }

    #[test]
    fn zero_maps_to_zero() {
        let c = dwt_forward(&[0.0; 64], WaveletFamily::Db4, 4);
        assert!(c.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn padding_is_tracked() {
        let x: Vec<f64> = (0..50).map(|i| (i as f64 * 0.37).cos()).collect();
        let c = dwt_forward(&x, WaveletFamily::Db4, 4);
        assert_eq!(c.values.len(), 64);
        let back = dwt_inverse(&c, WaveletFamily::Db4, 4);
        assert_eq!(back.len(), 50);
        for (a, b) in back.iter().zip(&x) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn short_lanes_stay_orthonormal() {
        // Eight taps wrapping around a length-4 lane.
        let x = [1.0, -2.0, 0.5, 3.0];
        let c = dwt_forward(&x, WaveletFamily::Db4, 2);
        assert!((norm(&c.values) - norm(&x)).abs() < 1e-12);
        let back = dwt_inverse(&c, WaveletFamily::Db4, 2);
        for (a, b) in back.iter().zip(&x) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn smooth_signal_concentrates_in_approximation() {
        let x: Vec<f64> = (0..256).map(|i| (2.0 * std::f64::consts::PI * i as f64 / 256.0).sin()).collect();
        let c = dwt_forward(&x, WaveletFamily::Db4, 4);
        let approx = norm(&c.values[..16]);
        assert!(approx / norm(&x) > 0.999);
    }

    #[test]
    fn block_transform_roundtrip() {
        let basis = SparseBasis {
            axes: BasisAxes::ChannelTime { channel_family: WaveletFamily::Haar, channel_levels: 4 },
            ..Default::default()
        };
        let x = Array2::from_shape_fn((16, 64), |(c, t)| ((c * 13 + t * 7) as f64).sin());
        let mut bt = BlockTransform::new(&basis, 16, 64);
        let a = bt.analyze(x.view());
        let e0: f64 = x.iter().map(|v| v * v).sum();
        let e1: f64 = a.iter().map(|v| v * v).sum();
        assert!((e0 - e1).abs() < 1e-10 * e0);
        let back = bt.synthesize(a.view());
        assert!(back.iter().zip(x.iter()).all(|(p, q)| (p - q).abs() < 1e-12));
    }

    #[test]
    fn aperture_tiles_roundtrip_and_compact_rows() {
        let basis = SparseBasis {
            axes: BasisAxes::ApertureTime { aperture_family: WaveletFamily::Haar, rows: 4, cols: 4, levels: [2, 2] },
            ..Default::default()
        };
        // Two tiles whose channels only vary with the column index.
        let x = Array2::from_shape_fn((32, 64), |(c, t)| ((c % 4 + 1) as f64 * t as f64 * 0.1).sin() + (c / 16) as f64);
        let mut bt = BlockTransform::new(&basis, 32, 64);
        let mut only_channels = x.clone();
        bt.analyze_channels(&mut only_channels);
        // Row details vanish: only the first row of each tile survives.
        for c in 0..32 {
            if (c % 16) / 4 != 0 {
                assert!(only_channels.row(c).iter().all(|v| v.abs() < 1e-12), "channel {c}");
            }
        }
        let a = bt.analyze(x.view());
        let e0: f64 = x.iter().map(|v| v * v).sum();
        let e1: f64 = a.iter().map(|v| v * v).sum();
        assert!((e0 - e1).abs() < 1e-10 * e0);
        let back = bt.synthesize(a.view());
        assert!(back.iter().zip(x.iter()).all(|(p, q)| (p - q).abs() < 1e-12));
    }
}
