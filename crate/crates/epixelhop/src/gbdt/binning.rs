//! Feature quantization for histogram-based split finding.

use rayon::prelude::*;

/// Upper bound on values sampled per feature when deriving cut points.
const QUANTILE_SAMPLE_MAX: usize = 262_144;
/// 255 cuts give at most 256 bins, so a bin index fits a byte.
pub const MAX_CUTS: usize = 255;

/// Per-feature split candidates. A value lands in bin
/// `cuts.partition_point(|c| c < x)`; splitting at bin `b` is equivalent to
/// the raw-feature test `x <= cuts[b]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Binner {
    pub cuts: Vec<Vec<f64>>,
}

impl Binner {
    /// Derive cut points from row-major data. Exact midpoints between the
    /// distinct values when few, quantile-spaced data values otherwise.
    pub fn fit(rows: &[f64], width: usize) -> Binner {
        let count = rows.len() / width;
        let stride = count.div_ceil(QUANTILE_SAMPLE_MAX).max(1);
        let cuts = (0..width)
            .into_par_iter()
            .map(|f| {
                let mut vals: Vec<f64> = (0..count)
                    .step_by(stride)
                    .map(|r| rows[r * width + f])
                    .collect();
                vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
                vals.dedup();
                if vals.len() <= 1 {
                    return Vec::new();
                }
                if vals.len() <= MAX_CUTS + 1 {
                    vals.windows(2)
                        .map(|w| w[0] + (w[1] - w[0]) / 2.0)
                        .collect()
                } else {
                    let mut cuts = Vec::with_capacity(MAX_CUTS);
                    for q in 1..=MAX_CUTS {
                        let idx = q * vals.len() / (MAX_CUTS + 1);
                        let v = vals[idx.min(vals.len() - 1)];
                        if cuts.last().is_none_or(|&last| v > last) {
                            cuts.push(v);
                        }
                    }
                    cuts
                }
            })
            .collect();
        Binner { cuts }
    }

    #[inline]
    pub fn bin_value(&self, feature: usize, x: f64) -> u8 {
        self.cuts[feature].partition_point(|&c| c < x) as u8
    }

    /// Quantize row-major data to bytes.
    pub fn bin_rows(&self, rows: &[f64], width: usize) -> Vec<u8> {
        let mut out = vec![0u8; rows.len()];
        out.par_chunks_mut(width * 1024)
            .zip(rows.par_chunks(width * 1024))
            .for_each(|(dst, src)| {
                for i in 0..src.len() {
                    dst[i] = self.bin_value(i % width, src[i]);
                }
            });
        out
    }
}
