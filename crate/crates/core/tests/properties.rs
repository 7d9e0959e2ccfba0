//! Property-based invariants of the transforms, the solver, the converter and
//! the file formats.

use ndarray::{Array2, Array3};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use pacs_core::imaging::{ssim3d, GridSpec, ImageVolume};
use pacs_core::io;
use pacs_core::matrices::{block_diagonal, random_ternary, MeasurementMatrix};
use pacs_core::mvm_adc::{compress_block_with_stream, dequantize, quantize, AdcConfig, CompressedBlock};
use pacs_core::pipeline::{aperture_basis, RunConfig};
use pacs_core::recon::{self, FistaConfig};
use pacs_core::wavelet::{dwt_forward, dwt_inverse, BlockTransform, SparseBasis, WaveletFamily};
use pacs_core::{RawSignalBlock, TransducerArray};

fn config() -> ProptestConfig {
    ProptestConfig { cases: 64, failure_persistence: None, ..ProptestConfig::default() }
}

fn family(haar: bool) -> WaveletFamily {
    if haar {
        WaveletFamily::Haar
    } else {
        WaveletFamily::Db4
    }
}

fn ternary(n: usize, m: usize) -> impl Strategy<Value = MeasurementMatrix> {
    prop::collection::vec(-1i8..=1, n * m).prop_map(move |e| MeasurementMatrix::new(n, m, e).expect("matrix"))
}

fn volume(v: Vec<f64>) -> ImageVolume {
    let grid = GridSpec { dims: [4, 5, 6], origin_mm: [0.0; 3], spacing_mm: [1.0, 1.0, 0.5] };
    ImageVolume::new(Array3::from_shape_vec((4, 5, 6), v).expect("shape"), grid).expect("volume")
}

proptest! {
    #![proptest_config(config())]

    #[test]
    fn dwt_preserves_energy_and_inverts(x in prop::collection::vec(-10.0f64..10.0, 1..300), levels in 0usize..5, haar: bool) {
        let f = family(haar);
        let c = dwt_forward(&x, f, levels);
        let ex: f64 = x.iter().map(|v| v * v).sum();
        let ec: f64 = c.values.iter().map(|v| v * v).sum();
        prop_assert!((ex - ec).abs() <= 1e-10 * ex.max(1.0));
        let back = dwt_inverse(&c, f, levels);
        prop_assert_eq!(back.len(), x.len());
        for (a, b) in x.iter().zip(&back) {
            prop_assert!((a - b).abs() <= 1e-10);
        }
    }

    #[test]
    fn block_transform_inverts(seed: u64, t in prop::sample::select(vec![16usize, 32, 64, 128]), aperture: bool) {
        let basis = if aperture { aperture_basis(&TransducerArray::default()) } else { SparseBasis::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Array2::from_shape_fn((16, t), |_| rng.random_range(-1.0..1.0));
        let mut tr = BlockTransform::new(&basis, 16, t);
        let c = tr.analyze(x.view());
        let e0: f64 = x.iter().map(|v| v * v).sum();
        let e1: f64 = c.iter().map(|v| v * v).sum();
        prop_assert!((e0 - e1).abs() <= 1e-10 * e0);
        let back = tr.synthesize(c.view());
        for (a, b) in x.iter().zip(back.iter()) {
            prop_assert!((a - b).abs() <= 1e-10);
        }
    }

    #[test]
    fn matrix_transpose_is_adjoint(phi in ternary(4, 16), seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Array2::from_shape_fn((16, 9), |_| rng.random_range(-1.0..1.0));
        let y = Array2::from_shape_fn((4, 9), |_| rng.random_range(-1.0..1.0));
        let lhs: f64 = (phi.apply(x.view()).expect("apply") * &y).sum();
        let rhs: f64 = (phi.apply_transpose(y.view()).expect("transpose") * &x).sum();
        prop_assert!((lhs - rhs).abs() <= 1e-12 * lhs.abs().max(1.0));
        let dense = phi.to_f64().dot(&x);
        prop_assert!(dense.iter().zip(phi.apply(x.view()).expect("apply").iter()).all(|(a, b)| (a - b).abs() <= 1e-12));
    }

    #[test]
    fn fista_objective_never_increases(seed: u64, n in 1usize..=4, frac in 0.001f64..0.1) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let phi = random_ternary(n, 16, 1.0 / 3.0, seed).expect("matrix");
        let y = Array2::from_shape_fn((n, 64), |_| rng.random_range(-1.0..1.0));
        let probe = recon::fista_solve(y.view(), &phi, &FistaConfig { max_iterations: 1, ..Default::default() }, 20.0).expect("fista");
        let cfg = FistaConfig { lambda: Some(probe.lambda * frac / 0.01), max_iterations: 80, tolerance: 0.0, ..Default::default() };
        let rec = recon::fista_solve(y.view(), &phi, &cfg, 20.0).expect("fista");
        for w in rec.objective_trace.windows(2) {
            prop_assert!(w[1] <= w[0] * (1.0 + 1e-12) + 1e-15);
        }
    }

    #[test]
    fn gradient_matches_finite_differences(seed: u64, n in 1usize..=4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let phi = random_ternary(n, 16, 0.3, seed ^ 1).expect("matrix");
        let x = Array2::from_shape_fn((16, 8), |_| rng.random_range(-1.0..1.0));
        let y = Array2::from_shape_fn((n, 8), |_| rng.random_range(-1.0..1.0));
        let g = recon::data_gradient(&phi, x.view(), y.view()).expect("gradient");
        let f = |x: &Array2<f64>| {
            let r = phi.apply(x.view()).expect("apply") - &y;
            0.5 * r.iter().map(|v| v * v).sum::<f64>()
        };
        let h = 1e-6;
        for i in 0..16 {
            for j in 0..8 {
                let (mut xp, mut xm) = (x.clone(), x.clone());
                xp[[i, j]] += h;
                xm[[i, j]] -= h;
                let fd = (f(&xp) - f(&xm)) / (2.0 * h);
                prop_assert!((fd - g[[i, j]]).abs() <= 1e-6 * g[[i, j]].abs().max(1.0));
            }
        }
    }

    #[test]
    fn ssim_of_identical_volumes_is_one(v in prop::collection::vec(-5.0f64..5.0, 120), half in 1usize..4) {
        let vol = volume(v);
        prop_assert_eq!(ssim3d(&vol, &vol, 2 * half + 1, None).expect("ssim"), 1.0);
    }

    #[test]
    fn ssim_is_symmetric_and_bounded(a in prop::collection::vec(-5.0f64..5.0, 120), b in prop::collection::vec(-5.0f64..5.0, 120)) {
        let (va, vb) = (volume(a), volume(b));
        let ab = ssim3d(&va, &vb, 3, None).expect("ssim");
        let ba = ssim3d(&vb, &va, 3, None).expect("ssim");
        prop_assert!((ab - ba).abs() <= 1e-12);
        prop_assert!((-1.0..=1.0).contains(&ab));
    }

    #[test]
    fn quantizer_is_monotone(a in -1.5f64..1.5, b in -1.5f64..1.5, bits in 8u32..=16) {
        let adc = AdcConfig { bits, ..Default::default() };
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(quantize(lo, &adc, 0.0) <= quantize(hi, &adc, 0.0));
    }

    #[test]
    fn dequantized_level_is_within_half_lsb(v in -0.99f64..0.99, bits in 8u32..=16) {
        let adc = AdcConfig { bits, ..Default::default() };
        let q = dequantize(quantize(v, &adc, 0.0), adc.lsb());
        prop_assert!((q - v).abs() <= 0.5 * adc.lsb() + 1e-15);
    }

    #[test]
    fn block_diagonal_capture_matches_per_position(seed in 0u64..1000, positions in 1usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let adc = AdcConfig::chip_level(seed);
        let blocks: Vec<RawSignalBlock> = (0..positions)
            .map(|_| RawSignalBlock::new(Array2::from_shape_fn((16, 32), |_| rng.random_range(-0.5..0.5)), 20.41))
            .collect();
        let phis: Vec<MeasurementMatrix> = (0..positions).map(|p| random_ternary(4, 16, 1.0 / 3.0, seed + p as u64).expect("matrix")).collect();
        let whole = compress_block_with_stream(&RawSignalBlock::stack(&blocks).expect("stack"), &block_diagonal(&phis).expect("bd"), &adc, 0).expect("compress");
        let parts: Vec<CompressedBlock> = blocks
            .iter()
            .zip(&phis)
            .enumerate()
            .map(|(p, (b, phi))| compress_block_with_stream(b, phi, &adc, p as u64).expect("compress"))
            .collect();
        prop_assert_eq!(whole.codes, CompressedBlock::stack(&parts, "").expect("stack").codes);
    }

    #[test]
    fn signal_block_files_round_trip(seed: u64, channels in 1usize..20, samples in 1usize..50) {
        let dir = tempfile::tempdir().expect("tempdir");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let block = RawSignalBlock::new(Array2::from_shape_fn((channels, samples), |_| rng.random_range(-1.0..1.0)), 20.41);
        let stem = dir.path().join("b");
        io::write_block(&stem, &block, "afe").expect("write");
        let (back, _) = io::read_block(&stem, &["afe"]).expect("read");
        prop_assert_eq!(back, block);
    }

    #[test]
    fn matrix_files_round_trip(phi in ternary(3, 16)) {
        let dir = tempfile::tempdir().expect("tempdir");
        let path = dir.path().join("m.json");
        io::write_matrix(&path, &phi).expect("write");
        prop_assert_eq!(io::read_matrix(&path).expect("read"), phi);
    }

    #[test]
    fn compressed_files_round_trip(seed: u64) {
        let dir = tempfile::tempdir().expect("tempdir");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = RawSignalBlock::new(Array2::from_shape_fn((16, 40), |_| rng.random_range(-0.5..0.5)), 20.41);
        let phi = random_ternary(4, 16, 1.0 / 3.0, seed).expect("matrix");
        let mut y = compress_block_with_stream(&x, &phi, &AdcConfig::default(), 0).expect("compress");
        y.matrix_id = "matrix.json".into();
        let stem = dir.path().join("c");
        io::write_compressed(&stem, &y, "matrix.json").expect("write");
        let (back, _) = io::read_compressed(&stem).expect("read");
        prop_assert_eq!(back, y);
    }

    #[test]
    fn run_config_json_round_trips(seed: u64) {
        let cfg = RunConfig::example("prop", seed);
        let text = serde_json::to_string(&cfg).expect("serialize");
        let back: RunConfig = serde_json::from_str(&text).expect("parse");
        prop_assert_eq!(back, cfg);
    }
}
