//! On-disk containers. Every array is a row-major little-endian binary file
//! `<stem>.bin` paired with a JSON sidecar `<stem>.json`.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::block::RawSignalBlock;
use crate::error::{Error, Result};
use crate::imaging::{GridSpec, ImageVolume, Projection};
use crate::matrices::MeasurementMatrix;
use crate::mvm_adc::CompressedBlock;
use crate::recon::ReconstructedBlock;

pub fn bin_path(stem: &Path) -> PathBuf {
    stem.with_extension("bin")
}

pub fn sidecar_path(stem: &Path) -> PathBuf {
    stem.with_extension("json")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockSidecar {
    pub rows: usize,
    pub cols: usize,
    pub sample_rate_mhz: f64,
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bits: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scale_v_per_lsb: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mac_scale: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub matrix_file: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iterations: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub objective: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
}

impl BlockSidecar {
    fn plain(rows: usize, cols: usize, sample_rate_mhz: f64, kind: &str) -> Self {
        Self {
            rows,
            cols,
            sample_rate_mhz,
            kind: kind.into(),
            bits: None,
            scale_v_per_lsb: None,
            mac_scale: None,
            matrix_file: None,
            iterations: None,
            objective: None,
            lambda: None,
        }
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::format(path, e.to_string()))?;
    text.push('\n');
    write_file(path, text.as_bytes())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let bytes = read_file(path)?;
    serde_json::from_slice(&bytes).map_err(|e| Error::format(path, e.to_string()))
}

fn f64_bytes<'a>(values: impl Iterator<Item = &'a f64>) -> Vec<u8> {
    values.flat_map(|v| v.to_le_bytes()).collect()
}

fn f64_from(path: &Path, bytes: &[u8], expected: usize) -> Result<Vec<f64>> {
    if bytes.len() != expected * 8 {
        return Err(Error::format(path, format!("expected {} bytes, found {}", expected * 8, bytes.len())));
    }
    Ok(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk"))).collect())
}

fn read_sidecar(stem: &Path, kinds: &[&str]) -> Result<BlockSidecar> {
    let path = sidecar_path(stem);
    let side: BlockSidecar = read_json(&path)?;
    if !kinds.contains(&side.kind.as_str()) {
        return Err(Error::format(&path, format!("kind \"{}\" where one of {:?} was expected", side.kind, kinds)));
    }
    Ok(side)
}

/// Writes a float block with the given `kind` ("raw", "afe", ...).
pub fn write_block(stem: &Path, block: &RawSignalBlock, kind: &str) -> Result<()> {
    write_file(&bin_path(stem), &f64_bytes(block.samples.iter()))?;
    write_json(&sidecar_path(stem), &BlockSidecar::plain(block.channels(), block.num_samples(), block.sample_rate_mhz, kind))
}

/// Reads a float block of any of the accepted kinds.
pub fn read_block(stem: &Path, kinds: &[&str]) -> Result<(RawSignalBlock, BlockSidecar)> {
    let side = read_sidecar(stem, kinds)?;
    let path = bin_path(stem);
    let values = f64_from(&path, &read_file(&path)?, side.rows * side.cols)?;
    let samples = Array2::from_shape_vec((side.rows, side.cols), values).expect("length checked");
    Ok((RawSignalBlock::new(samples, side.sample_rate_mhz), side))
}

pub fn write_compressed(stem: &Path, block: &CompressedBlock, matrix_file: &str) -> Result<()> {
    let mut bytes = Vec::with_capacity(block.codes.len() * 2);
    for &c in &block.codes {
        let v = i16::try_from(c).map_err(|_| Error::format(bin_path(stem), format!("code {c} does not fit 16 bits")))?;
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    write_file(&bin_path(stem), &bytes)?;
    let mut side = BlockSidecar::plain(block.codes.nrows(), block.codes.ncols(), block.sample_rate_mhz, "compressed");
    side.bits = Some(block.bits);
    side.scale_v_per_lsb = Some(block.scale_v_per_lsb);
    side.mac_scale = Some(block.mac_scale);
    side.matrix_file = Some(matrix_file.into());
    write_json(&sidecar_path(stem), &side)
}

pub fn read_compressed(stem: &Path) -> Result<(CompressedBlock, BlockSidecar)> {
    let side = read_sidecar(stem, &["compressed"])?;
    let path = bin_path(stem);
    let bytes = read_file(&path)?;
    let n = side.rows * side.cols;
    if bytes.len() != 2 * n {
        return Err(Error::format(&path, format!("expected {} bytes, found {}", 2 * n, bytes.len())));
    }
    let codes: Vec<i32> = bytes.chunks_exact(2).map(|c| i16::from_le_bytes([c[0], c[1]]) as i32).collect();
    let missing = |f: &str| Error::format(sidecar_path(stem), format!("compressed sidecar lacks \"{f}\""));
    let block = CompressedBlock {
        codes: Array2::from_shape_vec((side.rows, side.cols), codes).expect("length checked"),
        bits: side.bits.ok_or_else(|| missing("bits"))?,
        scale_v_per_lsb: side.scale_v_per_lsb.ok_or_else(|| missing("scale_v_per_lsb"))?,
        mac_scale: side.mac_scale.ok_or_else(|| missing("mac_scale"))?,
        sample_rate_mhz: side.sample_rate_mhz,
        matrix_id: side.matrix_file.clone().ok_or_else(|| missing("matrix_file"))?,
    };
    Ok((block, side))
}

pub fn write_reconstructed(stem: &Path, block: &ReconstructedBlock) -> Result<()> {
    write_file(&bin_path(stem), &f64_bytes(block.estimates.iter()))?;
    let (r, c) = block.estimates.dim();
    let mut side = BlockSidecar::plain(r, c, block.sample_rate_mhz, "reconstructed");
    side.iterations = Some(block.iterations_used);
    side.objective = Some(block.final_objective);
    side.lambda = Some(block.lambda);
    write_json(&sidecar_path(stem), &side)
}

/// Reads a reconstructed block; the objective trace is not part of the
/// container and comes back empty.
pub fn read_reconstructed(stem: &Path) -> Result<ReconstructedBlock> {
    let (block, side) = read_block(stem, &["reconstructed"])?;
    let missing = |f: &str| Error::format(sidecar_path(stem), format!("reconstructed sidecar lacks \"{f}\""));
    Ok(ReconstructedBlock {
        estimates: block.samples,
        sample_rate_mhz: block.sample_rate_mhz,
        iterations_used: side.iterations.ok_or_else(|| missing("iterations"))?,
        final_objective: side.objective.ok_or_else(|| missing("objective"))?,
        lambda: side.lambda.ok_or_else(|| missing("lambda"))?,
        objective_trace: Vec::new(),
        restarts: 0,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct VolumeSidecar {
    kind: String,
    dims: [usize; 3],
    spacing_mm: [f64; 3],
    origin_mm: [f64; 3],
    /// Memory order of the binary voxels.
    order: String,
}

const VOLUME_ORDER: &str = "x-major, z fastest";

pub fn write_volume(stem: &Path, v: &ImageVolume) -> Result<()> {
    let data: Vec<f64> = v.voxels.iter().copied().collect();
    write_file(&bin_path(stem), &f64_bytes(data.iter()))?;
    write_json(
        &sidecar_path(stem),
        &VolumeSidecar {
            kind: "volume".into(),
            dims: v.grid.dims,
            spacing_mm: v.grid.spacing_mm,
            origin_mm: v.grid.origin_mm,
            order: VOLUME_ORDER.into(),
        },
    )
}

pub fn read_volume(stem: &Path) -> Result<ImageVolume> {
    let spath = sidecar_path(stem);
    let side: VolumeSidecar = read_json(&spath)?;
    if side.kind != "volume" {
        return Err(Error::format(&spath, format!("kind \"{}\" where \"volume\" was expected", side.kind)));
    }
    let path = bin_path(stem);
    let [x, y, z] = side.dims;
    let values = f64_from(&path, &read_file(&path)?, x * y * z)?;
    let grid = GridSpec { dims: side.dims, origin_mm: side.origin_mm, spacing_mm: side.spacing_mm };
    ImageVolume::new(Array3::from_shape_vec((x, y, z), values).expect("length checked"), grid)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ProjectionSidecar {
    kind: String,
    plane: String,
    width: usize,
    height: usize,
    axis_labels: [String; 2],
    extent_mm: [[f64; 2]; 2],
    /// Values mapped to gray 0 and 65535.
    value_range: [f64; 2],
}

/// Binary 16-bit PGM, min mapped to 0 and max to 65535, plus a sidecar with
/// the value range and physical extent.
pub fn write_projection(stem: &Path, p: &Projection) -> Result<()> {
    let (h, w) = p.values.dim();
    let (lo, hi) = p.values.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let span = hi - lo;
    let mut bytes = format!("P5\n{w} {h}\n65535\n").into_bytes();
    for &v in &p.values {
        let g = if span > 0.0 { ((v - lo) / span * 65535.0).round() as u16 } else { 0 };
        bytes.extend_from_slice(&g.to_be_bytes());
    }
    write_file(&stem.with_extension("pgm"), &bytes)?;
    write_json(
        &sidecar_path(stem),
        &ProjectionSidecar {
            kind: "projection".into(),
            plane: p.plane.clone(),
            width: w,
            height: h,
            axis_labels: p.axis_labels.clone(),
            extent_mm: p.extent_mm,
            value_range: [lo, hi],
        },
    )
}

/// Gray levels of a 16-bit binary PGM as `height × width`.
pub fn read_pgm16(path: &Path) -> Result<Array2<u16>> {
    let bytes = read_file(path)?;
    let bad = |m: &str| Error::format(path, m.to_string());
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated PGM header"));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    pos += 1;
    if fields[0] != "P5" || fields[3] != "65535" {
        return Err(bad("not a 16-bit binary PGM"));
    }
    let w: usize = fields[1].parse().map_err(|_| bad("bad width"))?;
    let h: usize = fields[2].parse().map_err(|_| bad("bad height"))?;
    let data = bytes.get(pos..).filter(|d| d.len() == 2 * w * h).ok_or_else(|| bad("pixel data length mismatch"))?;
    let px = data.chunks_exact(2).map(|c| u16::from_be_bytes([c[0], c[1]])).collect();
    Ok(Array2::from_shape_vec((h, w), px).expect("length checked"))
}

pub fn write_matrix(path: &Path, m: &MeasurementMatrix) -> Result<()> {
    write_json(path, m)
}

pub fn read_matrix(path: &Path) -> Result<MeasurementMatrix> {
    read_json(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::max_intensity_projections;

    #[test]
    fn block_roundtrip_and_sidecar_text() {
        let dir = tempfile::tempdir().unwrap();
        let stem = dir.path().join("raw_0");
        let b = RawSignalBlock::new(Array2::from_shape_fn((2, 3), |(i, j)| i as f64 - 0.1 * j as f64), 40.82);
        write_block(&stem, &b, "raw").unwrap();
        let bytes = std::fs::read(bin_path(&stem)).unwrap();
        assert_eq!(bytes.len(), 48);
        assert_eq!(&bytes[8..16], &(-0.1f64).to_le_bytes());
        let side: serde_json::Value = serde_json::from_slice(&std::fs::read(sidecar_path(&stem)).unwrap()).unwrap();
        assert_eq!(side, serde_json::json!({"rows": 2, "cols": 3, "sample_rate_mhz": 40.82, "kind": "raw"}));
        let (back, _) = read_block(&stem, &["raw"]).unwrap();
        assert_eq!(back, b);
        assert!(read_block(&stem, &["afe"]).is_err());
    }

    #[test]
    fn compressed_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let stem = dir.path().join("c");
        let b = CompressedBlock {
            codes: Array2::from_shape_vec((2, 2), vec![-512, 511, 0, -1]).unwrap(),
            bits: 10,
            scale_v_per_lsb: 2.0 / 1024.0,
            mac_scale: 0.0625,
            sample_rate_mhz: 20.41,
            matrix_id: "phi.json".into(),
        };
        write_compressed(&stem, &b, "phi.json").unwrap();
        let bytes = std::fs::read(bin_path(&stem)).unwrap();
        assert_eq!(&bytes[..2], &(-512i16).to_le_bytes());
        let (back, side) = read_compressed(&stem).unwrap();
        assert_eq!(back, b);
        assert_eq!(side.kind, "compressed");
    }

    #[test]
    fn volume_and_projection_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let grid = GridSpec { dims: [3, 2, 4], origin_mm: [0.0, 1.0, 5.0], spacing_mm: [1.0, 1.0, 0.5] };
        let v = ImageVolume::new(Array3::from_shape_fn((3, 2, 4), |(x, y, z)| (x * 8 + y * 4 + z) as f64), grid).unwrap();
        let stem = dir.path().join("vol");
        write_volume(&stem, &v).unwrap();
        assert_eq!(read_volume(&stem).unwrap(), v);
        let [xy, _, _] = max_intensity_projections(&v);
        let pstem = dir.path().join("mip_xy");
        write_projection(&pstem, &xy).unwrap();
        let img = read_pgm16(&pstem.with_extension("pgm")).unwrap();
        assert_eq!(img.dim(), (2, 3));
        assert_eq!(img[[1, 2]], 65535);
        assert_eq!(img[[0, 0]], 0);
    }

    #[test]
    fn truncated_binary_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let stem = dir.path().join("r");
        write_block(&stem, &RawSignalBlock::zeros(2, 2, 1.0), "raw").unwrap();
        std::fs::write(bin_path(&stem), [0u8; 5]).unwrap();
        assert!(matches!(read_block(&stem, &["raw"]), Err(Error::Format { .. })));
    }
}
