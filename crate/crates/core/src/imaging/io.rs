//! Raw float32 rasters and the JSON series manifest.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Frame, Grid2D, Mask, Raster, SequenceKind, Series};
use crate::confidence::SegFrame;
use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameEntry {
    pub file: String,
    pub t_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegEntry {
    pub myo: String,
    pub lv: String,
    pub conf: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesManifest {
    pub sequence: SequenceKind,
    pub height: usize,
    pub width: usize,
    pub spacing_mm: [f64; 2],
    pub slice_id: String,
    pub frames: Vec<FrameEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub segmentations: Option<Vec<SegEntry>>,
}

impl SeriesManifest {
    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|source| Error::Manifest {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn grid(&self) -> Result<Grid2D> {
        Grid2D::new(
            self.height,
            self.width,
            self.spacing_mm[0],
            self.spacing_mm[1],
        )
    }
}

/// Accepts either a manifest file or a directory holding `manifest.json`.
fn manifest_location(path: &Path) -> (PathBuf, PathBuf) {
    let file = if path.is_dir() {
        path.join(MANIFEST_FILE)
    } else {
        path.to_path_buf()
    };
    let dir = file
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."));
    (file, dir)
}

/// Reads a headerless little-endian float32 raster.
pub fn load_map(path: &Path, height: usize, width: usize) -> Result<Raster> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let expected = 4 * height * width;
    if bytes.len() != expected {
        return Err(Error::SizeMismatch {
            path: path.to_path_buf(),
            expected,
            found: bytes.len(),
        });
    }
    let data: Vec<f64> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    if let Some(index) = data.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            what: path.display().to_string(),
            index,
        });
    }
    Raster::new(height, width, data)
}

/// Writes a raster as headerless little-endian float32, row-major.
pub fn save_map(raster: &Raster, path: &Path) -> Result<()> {
    let mut bytes = Vec::with_capacity(4 * raster.len());
    for &v in raster.data() {
        bytes.extend_from_slice(&(v as f32).to_le_bytes());
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn save_mask(mask: &Mask, path: &Path) -> Result<()> {
    save_map(&mask.to_raster(), path)
}

/// Loads the frames listed in a series manifest, in manifest order.
pub fn load_series(manifest_path: &Path) -> Result<Series> {
    let (file, dir) = manifest_location(manifest_path);
    let manifest = SeriesManifest::read(&file)?;
    let grid = manifest.grid()?;
    if manifest.frames.len() < Series::MIN_FRAMES {
        return Err(Error::TooFewFrames(manifest.frames.len()));
    }
    let mut frames = Vec::with_capacity(manifest.frames.len());
    for entry in &manifest.frames {
        let values = load_map(&dir.join(&entry.file), grid.height, grid.width)?;
        if let Some(index) = values.data().iter().position(|&v| v < 0.0) {
            return Err(Error::NegativeValue {
                what: entry.file.clone(),
                index,
                value: values.data()[index],
            });
        }
        frames.push(Frame {
            values,
            t_ms: entry.t_ms,
        });
    }
    Series::new(manifest.sequence, grid, frames, manifest.slice_id)
}

/// Loads the optional per-frame segmentations of a series manifest.
pub fn load_segmentations(manifest_path: &Path) -> Result<Option<Vec<SegFrame>>> {
    let (file, dir) = manifest_location(manifest_path);
    let manifest = SeriesManifest::read(&file)?;
    let Some(entries) = &manifest.segmentations else {
        return Ok(None);
    };
    if entries.len() != manifest.frames.len() {
        return Err(Error::InvalidInput(format!(
            "{} segmentations for {} frames",
            entries.len(),
            manifest.frames.len()
        )));
    }
    let (h, w) = (manifest.height, manifest.width);
    let mut segs = Vec::with_capacity(entries.len());
    for e in entries {
        let myo = Mask::from_binary_raster(&load_map(&dir.join(&e.myo), h, w)?)?;
        let lv = Mask::from_binary_raster(&load_map(&dir.join(&e.lv), h, w)?)?;
        let conf = load_map(&dir.join(&e.conf), h, w)?;
        segs.push(SegFrame::new(myo, lv, conf)?);
    }
    Ok(Some(segs))
}

pub fn load_case(manifest_path: &Path) -> Result<(Series, Option<Vec<SegFrame>>)> {
    Ok((
        load_series(manifest_path)?,
        load_segmentations(manifest_path)?,
    ))
}

/// Writes a series (and optional segmentations) as rasters plus manifest into
/// `dir`, returning the manifest path.
pub fn write_series(dir: &Path, series: &Series, segs: Option<&[SegFrame]>) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let grid = series.grid();
    let mut frames = Vec::with_capacity(series.len());
    for (i, f) in series.frames().iter().enumerate() {
        let file = format!("frame_{i:02}.f32");
        save_map(&f.values, &dir.join(&file))?;
        frames.push(FrameEntry { file, t_ms: f.t_ms });
    }
    let segmentations = match segs {
        Some(segs) => {
            let mut entries = Vec::with_capacity(segs.len());
            for (i, s) in segs.iter().enumerate() {
                let e = SegEntry {
                    myo: format!("myo_{i:02}.f32"),
                    lv: format!("lv_{i:02}.f32"),
                    conf: format!("conf_{i:02}.f32"),
                };
                save_mask(&s.myo, &dir.join(&e.myo))?;
                save_mask(&s.lv, &dir.join(&e.lv))?;
                save_map(&s.conf, &dir.join(&e.conf))?;
                entries.push(e);
            }
            Some(entries)
        }
        None => None,
    };
    let manifest = SeriesManifest {
        sequence: series.kind(),
        height: grid.height,
        width: grid.width,
        spacing_mm: [grid.spacing_x, grid.spacing_y],
        slice_id: series.slice_id().to_string(),
        frames,
        segmentations,
    };
    let path = dir.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn tiny_series(n: usize) -> Series {
        let grid = Grid2D::new(8, 10, 2.1, 2.1).unwrap();
        let frames = (0..n)
            .map(|i| Frame {
                values: Raster::from_fn(8, 10, |x, y| (x + y * 10 + i) as f64),
                t_ms: 100.0 * (i + 1) as f64,
            })
            .collect();
        Series::new(SequenceKind::Molli, grid, frames, "slice").unwrap()
    }

    #[test]
    fn two_by_two_map_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.f32");
        let r = Raster::new(2, 2, vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        save_map(&r, &p).unwrap();
        assert_eq!(load_map(&p, 2, 2).unwrap(), r);
    }

    #[test]
    fn series_round_trip_through_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let s = tiny_series(5);
        let path = write_series(dir.path(), &s, None).unwrap();
        let back = load_series(&path).unwrap();
        assert_eq!(back, s);
        // directory form works too
        assert_eq!(load_series(dir.path()).unwrap(), s);
        assert!(load_segmentations(dir.path()).unwrap().is_none());
    }

    #[test]
    fn truncated_frame_is_size_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        write_series(dir.path(), &tiny_series(4), None).unwrap();
        let f = dir.path().join("frame_02.f32");
        let bytes = fs::read(&f).unwrap();
        fs::write(&f, &bytes[..bytes.len() - 4]).unwrap();
        assert!(matches!(
            load_series(dir.path()),
            Err(Error::SizeMismatch { .. })
        ));
    }

    #[test]
    fn three_frames_rejected() {
        let dir = tempfile::tempdir().unwrap();
        write_series(dir.path(), &tiny_series(4), None).unwrap();
        let mpath = dir.path().join(MANIFEST_FILE);
        let mut m = SeriesManifest::read(&mpath).unwrap();
        m.frames.truncate(3);
        fs::write(&mpath, serde_json::to_string(&m).unwrap()).unwrap();
        assert!(matches!(
            load_series(dir.path()),
            Err(Error::TooFewFrames(3))
        ));
    }

    #[test]
    fn missing_file_and_negative_values_rejected() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            load_series(&dir.path().join("nope.json")),
            Err(Error::Io { .. })
        ));
        write_series(dir.path(), &tiny_series(4), None).unwrap();
        let mut neg = Raster::zeros(8, 10);
        neg.set(1, 1, -2.0);
        save_map(&neg, &dir.path().join("frame_01.f32")).unwrap();
        assert!(matches!(
            load_series(dir.path()),
            Err(Error::NegativeValue { .. })
        ));
        let mut nan = Raster::zeros(8, 10);
        nan.set(0, 0, f64::NAN);
        save_map(&nan, &dir.path().join("frame_01.f32")).unwrap();
        assert!(matches!(
            load_series(dir.path()),
            Err(Error::NonFinite { .. })
        ));
    }

    #[test]
    fn manifest_parses_documented_schema() {
        let text = r#"{
            "sequence": "STONE", "height": 160, "width": 160,
            "spacing_mm": [2.1, 2.1], "slice_id": "mid",
            "frames": [{"file": "frame_00.f32", "t_ms": 100}],
            "segmentations": [{"myo": "myo_00.f32", "lv": "lv_00.f32", "conf": "conf_00.f32"}]
        }"#;
        let m: SeriesManifest = serde_json::from_str(text).unwrap();
        assert_eq!(m.sequence, SequenceKind::Stone);
        assert_eq!(m.frames[0].t_ms, 100.0);
        assert_eq!(m.segmentations.unwrap()[0].lv, "lv_00.f32");
    }

    proptest! {
        #[test]
        fn float32_rasters_round_trip_bit_exact(
            vals in proptest::collection::vec(-1e30f32..1e30f32, 12)
        ) {
            let dir = tempfile::tempdir().unwrap();
            let p = dir.path().join("r.f32");
            let r = Raster::new(3, 4, vals.iter().map(|&v| v as f64).collect()).unwrap();
            save_map(&r, &p).unwrap();
            let back = load_map(&p, 3, 4).unwrap();
            for (a, b) in vals.iter().zip(back.data()) {
                prop_assert_eq!(a.to_bits(), (*b as f32).to_bits());
            }
        }
    }
}
