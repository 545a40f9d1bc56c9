//! Heatmaps as CSV plus a binary PPM raster.

use std::fs;
use std::path::Path;

use crate::Result;

const CELL: usize = 24;
const NULL_RGB: [u8; 3] = [200, 200, 200];

pub fn write_heatmap_csv(
    names: &[String],
    grid: &[Vec<Option<f64>>],
    path: impl AsRef<Path>,
) -> Result<()> {
    let mut w = csv::Writer::from_path(path.as_ref())?;
    let mut header = vec![String::new()];
    header.extend(names.iter().cloned());
    w.write_record(&header)?;
    for (name, row) in names.iter().zip(grid) {
        let mut rec = vec![name.clone()];
        rec.extend(
            row.iter()
                .map(|v| v.map_or(String::new(), |x| x.to_string())),
        );
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// White for zero through dark blue for the grid maximum; null cells grey.
pub fn render_heatmap_ppm(grid: &[Vec<Option<f64>>]) -> Vec<u8> {
    let m = grid.len();
    let side = m * CELL;
    let max = grid
        .iter()
        .flatten()
        .flatten()
        .copied()
        .fold(0.0_f64, f64::max);
    let mut out = format!("P6\n{side} {side}\n255\n").into_bytes();
    for py in 0..side {
        for px in 0..side {
            let rgb = match grid[py / CELL].get(px / CELL).copied().flatten() {
                None => NULL_RGB,
                Some(v) => {
                    let t = if max > 0.0 {
                        (v / max).clamp(0.0, 1.0)
                    } else {
                        0.0
                    };
                    let shade = |lo: f64, hi: f64| (lo + (hi - lo) * t).round() as u8;
                    [shade(255.0, 8.0), shade(255.0, 48.0), shade(255.0, 107.0)]
                }
            };
            out.extend_from_slice(&rgb);
        }
    }
    out
}

pub(crate) fn write_heatmap_ppm(grid: &[Vec<Option<f64>>], path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, render_heatmap_ppm(grid))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn raster_has_header_and_pixels() {
        let grid = vec![vec![None, Some(0.5)], vec![Some(0.0), None]];
        let img = render_heatmap_ppm(&grid);
        let header = format!("P6\n{} {}\n255\n", 2 * CELL, 2 * CELL);
        assert!(img.starts_with(header.as_bytes()));
        assert_eq!(img.len(), header.len() + 3 * (2 * CELL) * (2 * CELL));
        let px = |x: usize, y: usize| {
            let o = header.len() + 3 * (y * 2 * CELL + x);
            [img[o], img[o + 1], img[o + 2]]
        };
        assert_eq!(px(0, 0), NULL_RGB);
        assert_eq!(px(CELL, 0), [8, 48, 107]);
        assert_eq!(px(0, CELL), [255, 255, 255]);
    }
}
