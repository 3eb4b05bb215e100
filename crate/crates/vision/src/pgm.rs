//! 16-bit binary PGM (P5) import and export for depth images.
//!
//! Readings are scaled linearly so that `max_range` maps to 65535. The range
//! itself is recorded in a `# max_range <meters>` header comment so that a
//! file written here reads back with the same scale.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Result, VisionError};
use crate::image::DepthImage;

const MAXVAL: f64 = 65535.0;

pub fn write_pgm<W: Write>(image: &DepthImage, mut out: W) -> Result<()> {
    write!(
        out,
        "P5\n# max_range {}\n{} {}\n65535\n",
        image.max_range(),
        image.width(),
        image.height()
    )?;
    let mut bytes = Vec::with_capacity(image.data().len() * 2);
    for d in image.data() {
        let v = (d / image.max_range() * MAXVAL).round().clamp(0.0, MAXVAL) as u16;
        bytes.extend_from_slice(&v.to_be_bytes());
    }
    out.write_all(&bytes)?;
    Ok(())
}

pub fn save_pgm(image: &DepthImage, path: impl AsRef<Path>) -> Result<()> {
    let file = std::fs::File::create(path)?;
    write_pgm(image, std::io::BufWriter::new(file))
}

/// Reads a P5 image. `default_max_range` applies when the file carries no
/// `max_range` comment.
pub fn read_pgm<R: Read>(mut input: R, default_max_range: f64) -> Result<DepthImage> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    let mut pos = 0;
    let mut max_range = default_max_range;
    let mut fields = Vec::new();
    while fields.len() < 4 {
        // skip whitespace and comments
        while pos < bytes.len() {
            if bytes[pos].is_ascii_whitespace() {
                pos += 1;
            } else if bytes[pos] == b'#' {
                let end = bytes[pos..]
                    .iter()
                    .position(|&b| b == b'\n')
                    .map_or(bytes.len(), |e| pos + e);
                let comment = String::from_utf8_lossy(&bytes[pos + 1..end]);
                let mut parts = comment.split_whitespace();
                if parts.next() == Some("max_range") {
                    if let Some(v) = parts.next().and_then(|v| v.parse::<f64>().ok()) {
                        max_range = v;
                    }
                }
                pos = end;
            } else {
                break;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() && bytes[pos] != b'#' {
            pos += 1;
        }
        if start == pos {
            return Err(VisionError::Pgm("truncated header".into()));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    if fields[0] != "P5" {
        return Err(VisionError::Pgm(format!("magic `{}` is not P5", fields[0])));
    }
    let parse = |s: &str, what: &str| {
        s.parse::<usize>()
            .map_err(|_| VisionError::Pgm(format!("bad {what} `{s}`")))
    };
    let width = parse(&fields[1], "width")?;
    let height = parse(&fields[2], "height")?;
    let maxval = parse(&fields[3], "maxval")?;
    if maxval == 0 || maxval > 65535 {
        return Err(VisionError::Pgm(format!("maxval {maxval} out of range")));
    }
    // exactly one whitespace byte separates the header from the raster
    pos += 1;
    let sample_bytes = if maxval > 255 { 2 } else { 1 };
    let need = width * height * sample_bytes;
    let raster = bytes
        .get(pos..pos + need)
        .ok_or_else(|| VisionError::Pgm(format!("raster truncated: need {need} bytes")))?;
    let data: Vec<f64> = if sample_bytes == 2 {
        raster
            .chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]) as f64 / maxval as f64 * max_range)
            .collect()
    } else {
        raster.iter().map(|&b| b as f64 / maxval as f64 * max_range).collect()
    };
    DepthImage::new(height, width, max_range, data)
}

pub fn load_pgm(path: impl AsRef<Path>, default_max_range: f64) -> Result<DepthImage> {
    let file = std::fs::File::open(path)?;
    read_pgm(std::io::BufReader::new(file), default_max_range)
}
