//! RGB decorrelation: a 3x3 PCA over all training pixels, projecting images
//! onto the two leading principal channels used by the rest of the pipeline.

use ndarray::{Array1, Array2};
use rayon::prelude::*;

use crate::dataset::LabeledImage;
use crate::error::{Error, Result};
use crate::linalg::sym_eigen;

/// Images per parallel reduction chunk. Fixed so that partial-sum order, and
/// therefore the result, does not depend on the thread count.
const CHUNK: usize = 256;

/// Fitted 3x3 color PCA.
#[derive(Debug, Clone, PartialEq)]
pub struct ColorPca {
    /// Rows are principal directions, sorted by descending eigenvalue.
    pub basis: Array2<f64>,
    /// Per-channel mean over all pooled pixels.
    pub mean: Array1<f64>,
    /// Eigenvalue shares, nonincreasing, summing to 1.
    pub energy_fractions: Array1<f64>,
}

/// Fit the color PCA on every pixel of every image (two passes: mean, then
/// centered covariance, both in f64 with a fixed reduction order).
pub fn fit_color_pca(images: &[LabeledImage]) -> Result<ColorPca> {
    if images.len() < 2 {
        return Err(Error::InsufficientSamples {
            got: images.len(),
            need: 2,
        });
    }
    let pixel_count: usize = images.iter().map(|i| i.height() * i.width()).sum();

    let sums: [f64; 3] = images
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut s = [0.0f64; 3];
            for img in chunk {
                for px in img.pixels.rows() {
                    s[0] += px[0];
                    s[1] += px[1];
                    s[2] += px[2];
                }
            }
            s
        })
        .collect::<Vec<_>>()
        .into_iter()
        .fold([0.0; 3], |mut acc, s| {
            for k in 0..3 {
                acc[k] += s[k];
            }
            acc
        });
    let mean = [
        sums[0] / pixel_count as f64,
        sums[1] / pixel_count as f64,
        sums[2] / pixel_count as f64,
    ];

    let cov_sum: [f64; 9] = images
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut c = [0.0f64; 9];
            for img in chunk {
                for px in img.pixels.rows() {
                    let d = [px[0] - mean[0], px[1] - mean[1], px[2] - mean[2]];
                    for i in 0..3 {
                        for j in 0..3 {
                            c[i * 3 + j] += d[i] * d[j];
                        }
                    }
                }
            }
            c
        })
        .collect::<Vec<_>>()
        .into_iter()
        .fold([0.0; 9], |mut acc, c| {
            for k in 0..9 {
                acc[k] += c[k];
            }
            acc
        });

    let mut cov = Array2::<f64>::zeros((3, 3));
    for i in 0..3 {
        for j in 0..3 {
            cov[[i, j]] = cov_sum[i * 3 + j] / pixel_count as f64;
        }
    }

    let total: f64 = (0..3).map(|i| cov[[i, i]]).sum();
    if total <= 1e-18 {
        return Err(Error::DegenerateInput(
            "all pixels identical: zero color covariance".into(),
        ));
    }

    let eig = sym_eigen(&cov);
    let sum: f64 = eig.values.sum();
    Ok(ColorPca {
        basis: eig.vectors,
        mean: Array1::from_vec(mean.to_vec()),
        energy_fractions: eig.values.mapv(|v| v / sum),
    })
}

impl ColorPca {
    /// Project one pixel onto principal coordinate `row`.
    #[inline]
    pub fn project_component(&self, rgb: [f64; 3], row: usize) -> f64 {
        (0..3)
            .map(|k| self.basis[[row, k]] * (rgb[k] - self.mean[k]))
            .sum()
    }
}

/// Project an image onto the first two principal channels. The third channel
/// is dropped; downstream stages never see it.
pub fn project_pq(img: &LabeledImage, pca: &ColorPca) -> (Array2<f64>, Array2<f64>) {
    let (h, w, _) = img.pixels.dim();
    let mut p = Array2::<f64>::zeros((h, w));
    let mut q = Array2::<f64>::zeros((h, w));
    for r in 0..h {
        for c in 0..w {
            let rgb = [
                img.pixels[[r, c, 0]],
                img.pixels[[r, c, 1]],
                img.pixels[[r, c, 2]],
            ];
            p[[r, c]] = pca.project_component(rgb, 0);
            q[[r, c]] = pca.project_component(rgb, 1);
        }
    }
    (p, q)
}
