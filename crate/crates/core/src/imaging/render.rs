//! Binary PPM rendering through a fixed colour ramp.

use std::fs;
use std::path::Path;

use super::{Mask, Raster};
use crate::error::{Error, Result};

// Dark blue through magenta and orange to pale yellow; the first stop is kept
// off pure black so masked-out pixels stay distinguishable.
const RAMP: [[f64; 3]; 5] = [
    [0.02, 0.05, 0.20],
    [0.35, 0.16, 0.50],
    [0.80, 0.30, 0.38],
    [0.97, 0.62, 0.25],
    [1.00, 0.97, 0.75],
];

/// Colour of a value already scaled to [0, 1].
pub fn colormap(u: f64) -> [u8; 3] {
    let u = u.clamp(0.0, 1.0);
    let pos = u * (RAMP.len() - 1) as f64;
    let i = (pos.floor() as usize).min(RAMP.len() - 2);
    let f = pos - i as f64;
    let mut rgb = [0u8; 3];
    for (c, out) in rgb.iter_mut().enumerate() {
        let v = RAMP[i][c] * (1.0 - f) + RAMP[i + 1][c] * f;
        *out = (v * 255.0).round() as u8;
    }
    rgb
}

/// Writes a P6 image of `raster`, clipping values to `range` before colour
/// mapping. Pixels outside `mask` are black.
pub fn render_ppm(
    raster: &Raster,
    range: (f64, f64),
    mask: Option<&Mask>,
    path: &Path,
) -> Result<()> {
    let (low, high) = range;
    if !(low < high) {
        return Err(Error::InvalidInput(format!(
            "render range ({low}, {high}) is empty"
        )));
    }
    if let Some(m) = mask {
        if m.height() != raster.height() || m.width() != raster.width() {
            return Err(Error::GridMismatch("render mask".into()));
        }
    }
    let mut bytes = format!("P6\n{} {}\n255\n", raster.width(), raster.height()).into_bytes();
    for (i, &v) in raster.data().iter().enumerate() {
        let inside = mask.map_or(true, |m| m.data()[i]);
        let rgb = if inside {
            colormap((v.clamp(low, high) - low) / (high - low))
        } else {
            [0, 0, 0]
        };
        bytes.extend_from_slice(&rgb);
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pixels(path: &Path) -> Vec<[u8; 3]> {
        let bytes = fs::read(path).unwrap();
        // header is three newline-terminated lines
        let mut nl = 0;
        let start = bytes
            .iter()
            .position(|&b| {
                if b == b'\n' {
                    nl += 1;
                }
                nl == 3
            })
            .unwrap()
            + 1;
        bytes[start..]
            .chunks_exact(3)
            .map(|c| [c[0], c[1], c[2]])
            .collect()
    }

    #[test]
    fn constant_raster_renders_uniform() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.ppm");
        render_ppm(&Raster::filled(4, 5, 0.5), (0.0, 1.0), None, &p).unwrap();
        let px = pixels(&p);
        assert_eq!(px.len(), 20);
        assert!(px.iter().all(|&c| c == px[0]));
        assert_eq!(px[0], colormap(0.5));
    }

    #[test]
    fn below_range_clips_to_low_colour_and_mask_is_black() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.ppm");
        let r = Raster::new(1, 3, vec![-50.0, 100.0, 3.0]).unwrap();
        let m = Mask::new(1, 3, vec![true, true, false]).unwrap();
        render_ppm(&r, (0.0, 10.0), Some(&m), &p).unwrap();
        let px = pixels(&p);
        assert_eq!(px[0], colormap(0.0));
        assert_eq!(px[1], colormap(1.0));
        assert_eq!(px[2], [0, 0, 0]);
        assert_ne!(colormap(0.0), [0, 0, 0]);
    }

    #[test]
    fn empty_range_and_bad_path_fail() {
        let r = Raster::zeros(2, 2);
        assert!(render_ppm(&r, (1.0, 1.0), None, Path::new("/tmp/x.ppm")).is_err());
        assert!(matches!(
            render_ppm(&r, (0.0, 1.0), None, Path::new("/nonexistent/dir/x.ppm")),
            Err(Error::Io { .. })
        ));
    }
}
