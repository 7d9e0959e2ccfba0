use ndarray::{s, Array2, ArrayView2};

use crate::error::{Error, Result};

/// Channel-by-time block of analog voltages on the sampling grid.
///
/// Rows are channels (transducer elements, row-major over the array), columns
/// are time samples at `sample_rate_mhz`.
#[derive(Debug, Clone, PartialEq)]
pub struct RawSignalBlock {
    pub samples: Array2<f64>,
    pub sample_rate_mhz: f64,
}

impl RawSignalBlock {
    pub fn new(samples: Array2<f64>, sample_rate_mhz: f64) -> Self {
        Self { samples, sample_rate_mhz }
    }

    pub fn zeros(channels: usize, num_samples: usize, sample_rate_mhz: f64) -> Self {
        Self::new(Array2::zeros((channels, num_samples)), sample_rate_mhz)
    }

    pub fn channels(&self) -> usize {
        self.samples.nrows()
    }

    pub fn num_samples(&self) -> usize {
        self.samples.ncols()
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.samples.view()
    }

    /// Keeps every `factor`-th sample, as an ADC clocked at a sub-multiple of
    /// the simulation grid would.
    pub fn decimate(&self, factor: usize) -> Result<Self> {
        if factor == 0 {
            return Err(Error::Config("decimation factor must be >= 1".into()));
        }
        let samples = self.samples.slice(s![.., ..;factor]).to_owned();
        Ok(Self::new(samples, self.sample_rate_mhz / factor as f64))
    }

    /// Stacks blocks along the channel axis (scan positions become one
    /// virtual array).
    pub fn stack(blocks: &[RawSignalBlock]) -> Result<Self> {
        let first = blocks
            .first()
            .ok_or_else(|| Error::Dimension("cannot stack an empty block list".into()))?;
        let t = first.num_samples();
        let channels = blocks.iter().map(|b| b.channels()).sum();
        let mut out = Array2::zeros((channels, t));
        let mut row = 0;
        for b in blocks {
            if b.num_samples() != t || b.sample_rate_mhz != first.sample_rate_mhz {
                return Err(Error::Dimension("stacked blocks must share length and sample rate".into()));
            }
            out.slice_mut(s![row..row + b.channels(), ..]).assign(&b.samples);
            row += b.channels();
        }
        Ok(Self::new(out, first.sample_rate_mhz))
    }

    /// Splits a stacked block back into `parts` equal channel groups.
    pub fn split(&self, parts: usize) -> Result<Vec<Self>> {
        if parts == 0 || !self.channels().is_multiple_of(parts) {
            return Err(Error::Dimension(format!(
                "{} channels do not split into {parts} equal groups",
                self.channels()
            )));
        }
        let per = self.channels() / parts;
        Ok((0..parts)
            .map(|p| Self::new(self.samples.slice(s![p * per..(p + 1) * per, ..]).to_owned(), self.sample_rate_mhz))
            .collect())
    }
}
