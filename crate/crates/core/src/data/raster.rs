//! Single-band raster I/O: a JSON sidecar header next to a flat
//! little-endian float32 buffer, plus binary PGM masks.

use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_NODATA: f32 = -9999.0;

/// Single-band backscatter grid in dB.
#[derive(Clone, Debug)]
pub struct Raster {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f32>,
    /// `true` marks pixels that carry no data.
    pub nodata_mask: Option<Vec<bool>>,
}

impl Raster {
    pub fn new(width: usize, height: usize, values: Vec<f32>) -> Result<Self> {
        if values.len() != width * height {
            return Err(Error::Dimension(format!(
                "raster {width}x{height} needs {} values, got {}",
                width * height,
                values.len()
            )));
        }
        Ok(Raster {
            width,
            height,
            values,
            nodata_mask: None,
        })
    }
}

/// Binary water mask (1 = water).
#[derive(Clone, Debug)]
pub struct Mask {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RasterHeader {
    width: usize,
    height: usize,
    dtype: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    nodata: Option<f32>,
    /// Data file name, relative to the header; defaults to the header stem
    /// with a `.f32` extension.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    data: Option<String>,
}

fn data_path(header_path: &Path, header: &RasterHeader) -> PathBuf {
    match &header.data {
        Some(name) => header_path.parent().unwrap_or(Path::new(".")).join(name),
        None => header_path.with_extension("f32"),
    }
}

/// Read a raster given the path of its JSON header.
pub fn load_raster(path: impl AsRef<Path>) -> Result<Raster> {
    let path = path.as_ref();
    let header: RasterHeader = serde_json::from_str(
        &std::fs::read_to_string(path)
            .map_err(|e| Error::Format(format!("cannot read raster header {}: {e}", path.display())))?,
    )
    .map_err(|e| Error::Format(format!("malformed raster header {}: {e}", path.display())))?;
    if header.dtype != "f32le" {
        return Err(Error::Format(format!(
            "unsupported raster dtype {:?} (only f32le)",
            header.dtype
        )));
    }
    let dpath = data_path(path, &header);
    let bytes = std::fs::read(&dpath)
        .map_err(|e| Error::Format(format!("cannot read raster data {}: {e}", dpath.display())))?;
    let expected = header.width * header.height * 4;
    if bytes.len() != expected {
        return Err(Error::Format(format!(
            "raster data {} holds {} bytes, header {}x{} implies {expected}",
            dpath.display(),
            bytes.len(),
            header.width,
            header.height
        )));
    }
    let values: Vec<f32> = bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();

    let nodata_mask = header.nodata.map(|sentinel| {
        values.iter().map(|&v| v == sentinel || v.is_nan()).collect::<Vec<bool>>()
    });
    for (i, &v) in values.iter().enumerate() {
        let is_nodata = nodata_mask.as_ref().is_some_and(|m| m[i]);
        if !v.is_finite() && !is_nodata {
            return Err(Error::Data(format!(
                "non-finite value {v} at pixel {i} outside the nodata mask"
            )));
        }
    }
    let nodata_mask = nodata_mask.filter(|m| m.iter().any(|&b| b));
    Ok(Raster {
        width: header.width,
        height: header.height,
        values,
        nodata_mask,
    })
}

/// Write a raster as header + `.f32` buffer. Nodata pixels are stored as the
/// sentinel value.
pub fn save_raster(raster: &Raster, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let dpath = path.with_extension("f32");
    let data_name = dpath
        .file_name()
        .ok_or_else(|| Error::Config(format!("bad raster path {}", path.display())))?
        .to_string_lossy()
        .to_string();
    let header = RasterHeader {
        width: raster.width,
        height: raster.height,
        dtype: "f32le".into(),
        nodata: raster.nodata_mask.as_ref().map(|_| DEFAULT_NODATA),
        data: Some(data_name),
    };
    let mut file = std::fs::File::create(path)?;
    file.write_all(serde_json::to_string_pretty(&header)?.as_bytes())?;
    file.write_all(b"\n")?;

    let mut out = std::fs::File::create(&dpath)?;
    let mut buf = Vec::with_capacity(raster.values.len() * 4);
    for (i, &v) in raster.values.iter().enumerate() {
        let stored = if raster.nodata_mask.as_ref().is_some_and(|m| m[i]) {
            DEFAULT_NODATA
        } else {
            v
        };
        buf.extend_from_slice(&stored.to_le_bytes());
    }
    out.write_all(&buf)?;
    Ok(())
}

/// Read a binary (P5, maxval 255) PGM mask; values >= 128 count as water.
pub fn load_mask_pgm(path: impl AsRef<Path>) -> Result<Mask> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .map_err(|e| Error::Format(format!("cannot open mask {}: {e}", path.display())))?
        .read_to_end(&mut bytes)?;
    let mut pos = 0usize;
    let mut token = |bytes: &[u8]| -> Result<String> {
        // skip whitespace and # comments
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                break;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Format("truncated PGM header".into()));
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    if token(&bytes)? != "P5" {
        return Err(Error::Format("mask must be binary PGM (P5)".into()));
    }
    let width: usize = token(&bytes)?.parse().map_err(|_| Error::Format("bad PGM width".into()))?;
    let height: usize = token(&bytes)?.parse().map_err(|_| Error::Format("bad PGM height".into()))?;
    let maxval: usize = token(&bytes)?.parse().map_err(|_| Error::Format("bad PGM maxval".into()))?;
    if maxval != 255 {
        return Err(Error::Format(format!("PGM maxval must be 255, got {maxval}")));
    }
    pos += 1; // single whitespace after maxval
    if bytes.len() - pos < width * height {
        return Err(Error::Format(format!(
            "PGM payload has {} bytes, expected {}",
            bytes.len() - pos,
            width * height
        )));
    }
    let data = bytes[pos..pos + width * height]
        .iter()
        .map(|&v| u8::from(v >= 128))
        .collect();
    Ok(Mask {
        width,
        height,
        data,
    })
}

pub fn save_mask_pgm(mask: &Mask, path: impl AsRef<Path>) -> Result<()> {
    let mut out = Vec::with_capacity(mask.data.len() + 32);
    out.extend_from_slice(format!("P5\n{} {}\n255\n", mask.width, mask.height).as_bytes());
    out.extend(mask.data.iter().map(|&v| if v > 0 { 255u8 } else { 0 }));
    std::fs::write(path, out)?;
    Ok(())
}
