//! PNG / binary PGM persistence and probability-map sidecars.

use super::{Image2D, LabelMap, ProbMap, DEFAULT_PIXEL_PITCH};
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

/// Decoded binary PGM raster.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PgmData {
    pub width: usize,
    pub height: usize,
    pub maxval: u16,
    pub samples: Vec<u16>,
}

/// Sidecar record stored next to every persisted probability map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapMetadata {
    pub width: usize,
    pub height: usize,
    pub pixel_pitch: f64,
    #[serde(default)]
    pub provenance: BTreeMap<String, String>,
}

pub fn write_pgm8(path: &Path, width: usize, height: usize, data: &[u8]) -> Result<()> {
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(data);
    fs::write(path, out)?;
    Ok(())
}

pub fn write_pgm16(path: &Path, width: usize, height: usize, data: &[u16]) -> Result<()> {
    let mut out = format!("P5\n{width} {height}\n65535\n").into_bytes();
    out.reserve(data.len() * 2);
    for v in data {
        out.extend_from_slice(&v.to_be_bytes());
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn read_pgm(path: &Path) -> Result<PgmData> {
    let bytes = fs::read(path)?;
    parse_pgm(&bytes).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

fn parse_pgm(bytes: &[u8]) -> std::result::Result<PgmData, String> {
    let mut pos = 0;
    let mut token = || -> std::result::Result<String, String> {
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            break;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err("truncated header".into());
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    if token()? != "P5" {
        return Err("not a binary PGM (P5)".into());
    }
    let num = |s: String| s.parse::<usize>().map_err(|_| format!("bad header field {s:?}"));
    let width = num(token()?)?;
    let height = num(token()?)?;
    let maxval = num(token()?)?;
    if maxval == 0 || maxval > 65535 {
        return Err(format!("unsupported maxval {maxval}"));
    }
    // exactly one whitespace byte separates header and raster
    pos += 1;
    let n = width * height;
    let wide = maxval > 255;
    let need = if wide { 2 * n } else { n };
    if bytes.len() < pos + need {
        return Err("truncated raster".into());
    }
    let raster = &bytes[pos..pos + need];
    let samples = if wide {
        raster
            .chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]))
            .collect()
    } else {
        raster.iter().map(|&b| b as u16).collect()
    };
    Ok(PgmData {
        width,
        height,
        maxval: maxval as u16,
        samples,
    })
}

pub fn write_gray_png(path: &Path, image: &Image2D) -> Result<()> {
    let buf = image::GrayImage::from_raw(image.width as u32, image.height as u32, image.data.clone())
        .ok_or_else(|| Error::Format("image buffer size mismatch".into()))?;
    buf.save(path)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

pub fn write_rgb_png(path: &Path, width: usize, height: usize, rgb: Vec<u8>) -> Result<()> {
    let buf = image::RgbImage::from_raw(width as u32, height as u32, rgb)
        .ok_or_else(|| Error::Format("rgb buffer size mismatch".into()))?;
    buf.save(path)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

/// Reads an 8-bit grayscale image from PNG or PGM. 16-bit PGM samples are
/// rescaled to 8 bits.
pub fn read_gray(path: &Path, pixel_pitch: f64) -> Result<Image2D> {
    if is_pgm(path) {
        let pgm = read_pgm(path)?;
        let scale = 255.0 / pgm.maxval as f64;
        let data = pgm
            .samples
            .iter()
            .map(|&v| (v as f64 * scale).round() as u8)
            .collect();
        return Image2D::new(pgm.width, pgm.height, data, pixel_pitch);
    }
    let img = image::open(path)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?
        .to_luma8();
    let (w, h) = img.dimensions();
    Image2D::new(w as usize, h as usize, img.into_raw(), pixel_pitch)
}

fn is_pgm(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .map(|e| e.eq_ignore_ascii_case("pgm"))
        .unwrap_or(false)
}

/// Sidecar path: `name.pgm` -> `name.meta.json`.
pub fn sidecar_path(path: &Path) -> PathBuf {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("map");
    path.with_file_name(format!("{stem}.meta.json"))
}

/// Writes a 16-bit PGM (`round(p * 65535)`) plus its metadata sidecar.
pub fn write_prob_map(path: &Path, map: &ProbMap, provenance: BTreeMap<String, String>) -> Result<()> {
    let q: Vec<u16> = map
        .data
        .iter()
        .map(|&p| (p.clamp(0.0, 1.0) * 65535.0).round() as u16)
        .collect();
    write_pgm16(path, map.width, map.height, &q)?;
    let meta = MapMetadata {
        width: map.width,
        height: map.height,
        pixel_pitch: map.pixel_pitch,
        provenance,
    };
    fs::write(sidecar_path(path), serde_json::to_string_pretty(&meta)? + "\n")?;
    Ok(())
}

/// Reads a probability map from PGM (8 or 16 bit) or PNG. The pixel pitch is
/// taken from the sidecar when present.
pub fn read_prob_map(path: &Path) -> Result<ProbMap> {
    let side = sidecar_path(path);
    let meta: Option<MapMetadata> = if side.exists() {
        Some(serde_json::from_str(&fs::read_to_string(&side)?)?)
    } else {
        None
    };
    let pitch = meta.as_ref().map(|m| m.pixel_pitch).unwrap_or(DEFAULT_PIXEL_PITCH);
    if is_pgm(path) {
        let pgm = read_pgm(path)?;
        let scale = 1.0 / pgm.maxval as f64;
        let values = pgm.samples.iter().map(|&v| v as f64 * scale).collect();
        return Ok(ProbMap::from_values(pgm.width, pgm.height, values)?.with_pitch(pitch));
    }
    Ok(read_gray(path, pitch)?.to_prob_map())
}

/// Label maps are stored as 16-bit PGM; labels above 65535 are rejected.
pub fn write_label_pgm(path: &Path, labels: &LabelMap) -> Result<()> {
    let mut q = Vec::with_capacity(labels.data.len());
    for &l in &labels.data {
        q.push(u16::try_from(l).map_err(|_| Error::Format("label exceeds 16 bits".into()))?);
    }
    write_pgm16(path, labels.width, labels.height, &q)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn prob_map_round_trip_is_lossless_at_16_bits() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.pgm");
        let values: Vec<f64> = (0..35).map(|i| (i as f64 * 0.0371).fract()).collect();
        let map = ProbMap::from_values(7, 5, values).unwrap().with_pitch(0.8);
        write_prob_map(&p, &map, BTreeMap::new()).unwrap();
        let back = read_prob_map(&p).unwrap();
        assert_eq!(back.pixel_pitch, 0.8);
        for (a, b) in map.data.iter().zip(&back.data) {
            assert!((a - b).abs() <= 0.5 / 65535.0 + 1e-12);
        }
        let first = fs::read(&p).unwrap();
        write_prob_map(&p, &back, BTreeMap::new()).unwrap();
        assert_eq!(first, fs::read(&p).unwrap());
    }

    #[test]
    fn pgm8_and_png_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let img = Image2D::new(4, 3, (0..12).map(|v| v * 20).collect(), 1.0).unwrap();
        let a = dir.path().join("a.pgm");
        write_pgm8(&a, 4, 3, &img.data).unwrap();
        assert_eq!(read_gray(&a, 1.0).unwrap(), img);
        let b = dir.path().join("b.png");
        write_gray_png(&b, &img).unwrap();
        assert_eq!(read_gray(&b, 1.0).unwrap(), img);
    }

    #[test]
    fn pgm_parser_rejects_garbage() {
        assert!(parse_pgm(b"P2\n1 1\n255\n0").is_err());
        assert!(parse_pgm(b"P5\n2 2\n255\n\x00").is_err());
        let ok = parse_pgm(b"P5\n# comment\n1 1\n255\n\x07").unwrap();
        assert_eq!(ok.samples, vec![7]);
    }
}
