//! Netpbm grayscale/color images (P2, P3, P5, P6) and a plain-text format
//! for real-valued degraded images.

use std::fs;
use std::path::Path;

use super::{DegradedImage, Image};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PnmFormat {
    /// P2 or P3
    Ascii,
    /// P5 or P6
    Binary,
}

fn parse_err(reason: impl Into<String>) -> Error {
    Error::parse("pnm", reason)
}

/// Splits the header into whitespace-separated tokens, skipping `#` comments.
/// Returns the tokens and the byte offset just past the last one.
fn header_tokens(bytes: &[u8], count: usize) -> Result<(Vec<String>, usize)> {
    let mut tokens = Vec::with_capacity(count);
    let mut i = 0;
    while tokens.len() < count {
        while i < bytes.len() && bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        if i >= bytes.len() {
            return Err(parse_err("truncated header"));
        }
        if bytes[i] == b'#' {
            while i < bytes.len() && bytes[i] != b'\n' {
                i += 1;
            }
            continue;
        }
        let start = i;
        while i < bytes.len() && !bytes[i].is_ascii_whitespace() && bytes[i] != b'#' {
            i += 1;
        }
        tokens.push(String::from_utf8_lossy(&bytes[start..i]).into_owned());
    }
    Ok((tokens, i))
}

fn number(token: &str, what: &str) -> Result<usize> {
    token
        .parse::<usize>()
        .map_err(|_| parse_err(format!("bad {what} '{token}'")))
}

/// Decodes a PGM/PPM, mapping samples onto `0..q`. A file whose maxval is
/// already `q - 1` is taken as is; other maxvals are rescaled with
/// `round(v (q - 1) / maxval)`.
pub fn decode(bytes: &[u8], q: usize) -> Result<(Image, PnmFormat)> {
    let (head, mut pos) = header_tokens(bytes, 4)?;
    let (channels, format) = match head[0].as_str() {
        "P2" => (1, PnmFormat::Ascii),
        "P3" => (3, PnmFormat::Ascii),
        "P5" => (1, PnmFormat::Binary),
        "P6" => (3, PnmFormat::Binary),
        m => return Err(parse_err(format!("unsupported magic '{m}'"))),
    };
    let width = number(&head[1], "width")?;
    let height = number(&head[2], "height")?;
    let maxval = number(&head[3], "maxval")?;
    if maxval == 0 || maxval > 65535 {
        return Err(parse_err("maxval out of range"));
    }
    let count = width * height * channels;
    let raw: Vec<usize> = match format {
        PnmFormat::Ascii => {
            let text = std::str::from_utf8(&bytes[pos..]).map_err(|_| parse_err("non-UTF-8 body"))?;
            let mut values = Vec::with_capacity(count);
            for line in text.lines() {
                let line = line.split('#').next().unwrap_or("");
                for tok in line.split_ascii_whitespace() {
                    values.push(number(tok, "sample")?);
                }
            }
            values
        }
        PnmFormat::Binary => {
            // exactly one whitespace byte separates header and raster
            pos += 1;
            let wide = maxval > 255;
            let need = count * if wide { 2 } else { 1 };
            if bytes.len() < pos + need {
                return Err(parse_err("truncated raster"));
            }
            let body = &bytes[pos..pos + need];
            if wide {
                body.chunks_exact(2).map(|b| ((b[0] as usize) << 8) | b[1] as usize).collect()
            } else {
                body.iter().map(|&b| b as usize).collect()
            }
        }
    };
    if raw.len() != count {
        return Err(parse_err(format!("expected {count} samples, found {}", raw.len())));
    }
    if let Some(v) = raw.iter().find(|&&v| v > maxval) {
        return Err(parse_err(format!("sample {v} exceeds maxval {maxval}")));
    }
    // interleaved pixels -> channel planes
    let n = width * height;
    let mut data = vec![0u16; count];
    for (k, &v) in raw.iter().enumerate() {
        let level = if maxval == q - 1 {
            v
        } else {
            ((v * (q - 1)) as f64 / maxval as f64).round() as usize
        };
        data[(k % channels) * n + k / channels] = level as u16;
    }
    Ok((Image::new(width, height, channels, q, data)?, format))
}

/// Encodes with maxval `q - 1`.
pub fn encode(image: &Image, format: PnmFormat) -> Vec<u8> {
    let magic = match (image.channels(), format) {
        (1, PnmFormat::Ascii) => "P2",
        (_, PnmFormat::Ascii) => "P3",
        (1, PnmFormat::Binary) => "P5",
        (_, PnmFormat::Binary) => "P6",
    };
    let maxval = image.q() - 1;
    let mut out = format!("{magic}\n{} {}\n{maxval}\n", image.width(), image.height()).into_bytes();
    let n = image.n_pixels();
    let sample = |k: usize| image.data()[(k % image.channels()) * n + k / image.channels()];
    let count = n * image.channels();
    match format {
        PnmFormat::Ascii => {
            let per_line = image.width() * image.channels();
            for row in 0..image.height() {
                let line: Vec<String> = (0..per_line).map(|k| sample(row * per_line + k).to_string()).collect();
                out.extend_from_slice(line.join(" ").as_bytes());
                out.push(b'\n');
            }
        }
        PnmFormat::Binary => {
            for k in 0..count {
                let v = sample(k);
                if maxval > 255 {
                    out.extend_from_slice(&v.to_be_bytes());
                } else {
                    out.push(v as u8);
                }
            }
        }
    }
    out
}

pub fn read_image(path: &Path, q: usize) -> Result<(Image, PnmFormat)> {
    let bytes = fs::read(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    decode(&bytes, q)
}

pub fn write_image(path: &Path, image: &Image, format: PnmFormat) -> Result<()> {
    fs::write(path, encode(image, format)).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// `DEGRADED <width> <height> <channels>` followed by one value per line,
/// channel-major then row-major.
pub fn encode_degraded(image: &DegradedImage) -> String {
    let mut out = format!("DEGRADED {} {} {}\n", image.width(), image.height(), image.channels());
    for v in image.values() {
        out.push_str(&format!("{v:e}\n"));
    }
    out
}

pub fn decode_degraded(text: &str) -> Result<DegradedImage> {
    let err = |r: &str| Error::parse("degraded image", r.to_string());
    let mut tokens = text.split_ascii_whitespace();
    if tokens.next() != Some("DEGRADED") {
        return Err(err("missing DEGRADED header"));
    }
    let mut dim = || -> Result<usize> {
        tokens
            .next()
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| err("bad dimensions"))
    };
    let (w, h, c) = (dim()?, dim()?, dim()?);
    let values: Vec<f64> = tokens
        .map(|t| t.parse::<f64>().map_err(|_| err("bad value")))
        .collect::<Result<_>>()?;
    DegradedImage::new(w, h, c, values)
}
