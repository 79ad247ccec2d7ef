//! Grayscale PNG export of soft-label grids, for hop-by-hop confidence
//! visualizations.

use std::io::BufWriter;
use std::path::Path;

use ndarray::{Array2, Array3};

use crate::error::{Error, Result};

/// One class's probability grid from a (C-1)-component label map. The
/// dropped last class is reconstructed as the simplex complement.
pub fn class_probability_grid(
    grid: &Array3<f64>,
    class: usize,
    class_count: usize,
) -> Result<Array2<f64>> {
    let (h, w, comps) = grid.dim();
    if comps != class_count - 1 || class >= class_count {
        return Err(Error::DimensionMismatch {
            context: "label map components".into(),
            expected: class_count - 1,
            got: comps,
        });
    }
    Ok(Array2::from_shape_fn((h, w), |(r, c)| {
        if class < comps {
            grid[[r, c, class]]
        } else {
            let stored: f64 = (0..comps).map(|k| grid[[r, c, k]]).sum();
            (1.0 - stored).clamp(0.0, 1.0)
        }
    }))
}

/// Write one stored component of a label grid as an 8-bit grayscale PNG,
/// pixel value `round(255 * p)`.
pub fn write_label_heatmap(grid: &Array3<f64>, component: usize, path: &Path) -> Result<()> {
    let (h, w, comps) = grid.dim();
    if component >= comps {
        return Err(Error::DimensionMismatch {
            context: "heatmap component".into(),
            expected: comps,
            got: component,
        });
    }
    let plane = Array2::from_shape_fn((h, w), |(r, c)| grid[[r, c, component]]);
    write_probability_heatmap(&plane, path)
}

/// Write a probability plane as an 8-bit grayscale PNG.
pub fn write_probability_heatmap(plane: &Array2<f64>, path: &Path) -> Result<()> {
    let (h, w) = plane.dim();
    let mut data = Vec::with_capacity(h * w);
    for r in 0..h {
        for c in 0..w {
            data.push((plane[[r, c]].clamp(0.0, 1.0) * 255.0).round() as u8);
        }
    }
    let io_err = |source: std::io::Error| Error::Io {
        path: path.to_path_buf(),
        source,
    };
    let file = std::fs::File::create(path).map_err(io_err)?;
    let mut encoder = png::Encoder::new(BufWriter::new(file), w as u32, h as u32);
    encoder.set_color(png::ColorType::Grayscale);
    encoder.set_depth(png::BitDepth::Eight);
    let mut writer = encoder.write_header().map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: std::io::Error::other(e),
    })?;
    writer.write_image_data(&data).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: std::io::Error::other(e),
    })?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn writes_valid_png_with_expected_values() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("map.png");
        let mut grid = Array3::<f64>::zeros((5, 5, 2));
        grid[[0, 0, 1]] = 1.0;
        grid[[2, 3, 1]] = 0.5;
        write_label_heatmap(&grid, 1, &path).unwrap();

        let decoder =
            png::Decoder::new(std::io::BufReader::new(std::fs::File::open(&path).unwrap()));
        let mut reader = decoder.read_info().unwrap();
        let mut buf = vec![0; reader.output_buffer_size().unwrap()];
        let info = reader.next_frame(&mut buf).unwrap();
        assert_eq!((info.width, info.height), (5, 5));
        assert_eq!(buf[0], 255);
        assert_eq!(buf[2 * 5 + 3], 128); // round(0.5 * 255)
        assert_eq!(buf[1], 0);
    }

    #[test]
    fn complement_reconstructs_last_class() {
        let mut grid = Array3::<f64>::zeros((2, 2, 2)); // C = 3, stored 2
        grid[[0, 0, 0]] = 0.2;
        grid[[0, 0, 1]] = 0.3;
        let g0 = class_probability_grid(&grid, 0, 3).unwrap();
        let g2 = class_probability_grid(&grid, 2, 3).unwrap();
        assert_eq!(g0[[0, 0]], 0.2);
        assert!((g2[[0, 0]] - 0.5).abs() < 1e-12);
        assert!((g2[[1, 1]] - 1.0).abs() < 1e-12); // all-zero stored components
        assert!(class_probability_grid(&grid, 3, 3).is_err());
        assert!(class_probability_grid(&grid, 0, 4).is_err());
    }

    #[test]
    fn rejects_out_of_range_component() {
        let dir = tempfile::tempdir().unwrap();
        let grid = Array3::<f64>::zeros((3, 3, 1));
        assert!(write_label_heatmap(&grid, 1, &dir.path().join("x.png")).is_err());
    }
}
