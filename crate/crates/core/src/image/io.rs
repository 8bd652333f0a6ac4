use std::fs;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use super::{ImageTensor, CHANNELS};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ImageFormat {
    /// Binary PPM (`P6`), maxval 255.
    Ppm,
    /// 8-bit RGB PNG.
    Png,
}

impl ImageFormat {
    pub fn from_path(path: &Path) -> Option<Self> {
        match path.extension()?.to_str()?.to_ascii_lowercase().as_str() {
            "ppm" => Some(Self::Ppm),
            "png" => Some(Self::Png),
            _ => None,
        }
    }
}

pub fn load_image(path: impl AsRef<Path>, format: ImageFormat) -> Result<ImageTensor> {
    let path = path.as_ref();
    match format {
        ImageFormat::Ppm => {
            let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
            decode_ppm(&bytes)
        }
        ImageFormat::Png => {
            let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
            decode_png(BufReader::new(file))
        }
    }
}

pub fn save_image(img: &ImageTensor, path: impl AsRef<Path>, format: ImageFormat) -> Result<()> {
    let path = path.as_ref();
    let bytes = match format {
        ImageFormat::Ppm => encode_ppm(img),
        ImageFormat::Png => encode_png(img)?,
    };
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn to_byte(x: f64) -> u8 {
    (x * 255.0 + 0.5).floor().clamp(0.0, 255.0) as u8
}

fn interleaved_bytes(img: &ImageTensor) -> Vec<u8> {
    let n = img.height() * img.width();
    let mut out = Vec::with_capacity(n * CHANNELS);
    for i in 0..n {
        for c in 0..CHANNELS {
            out.push(to_byte(img.data()[c * n + i]));
        }
    }
    out
}

fn from_interleaved(height: usize, width: usize, bytes: &[u8]) -> Result<ImageTensor> {
    let n = height * width;
    let mut data = vec![0.0; n * CHANNELS];
    for (i, px) in bytes.chunks_exact(CHANNELS).enumerate() {
        for c in 0..CHANNELS {
            data[c * n + i] = f64::from(px[c]) / 255.0;
        }
    }
    ImageTensor::new(height, width, data)
}

pub(crate) fn encode_ppm(img: &ImageTensor) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    out.extend(interleaved_bytes(img));
    out
}

struct HeaderCursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl HeaderCursor<'_> {
    fn skip_space_and_comments(&mut self) {
        while self.pos < self.bytes.len() {
            match self.bytes[self.pos] {
                b'#' => {
                    while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                b if b.is_ascii_whitespace() => self.pos += 1,
                _ => break,
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<usize> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(Error::Parse {
                offset: start,
                message: format!("expected {what}"),
            });
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or(Error::Parse {
                offset: start,
                message: format!("{what} out of range"),
            })
    }
}

pub(crate) fn decode_ppm(bytes: &[u8]) -> Result<ImageTensor> {
    if bytes.len() < 2 || bytes[0] != b'P' {
        return Err(Error::Parse {
            offset: 0,
            message: "missing PPM magic".into(),
        });
    }
    match bytes[1] {
        b'6' => {}
        b'1'..=b'5' => {
            return Err(Error::UnsupportedFormat(format!(
                "P{} is not binary RGB",
                bytes[1] as char
            )))
        }
        _ => {
            return Err(Error::Parse {
                offset: 1,
                message: "unknown PNM variant".into(),
            })
        }
    }
    let mut cur = HeaderCursor { bytes, pos: 2 };
    let width = cur.number("width")?;
    let height = cur.number("height")?;
    let maxval_at = cur.pos;
    let maxval = cur.number("maxval")?;
    if maxval != 255 {
        return Err(Error::UnsupportedFormat(format!(
            "maxval {maxval} at byte {maxval_at}; only 8-bit supported"
        )));
    }
    if width == 0 || height == 0 {
        return Err(Error::Parse {
            offset: maxval_at,
            message: "zero image dimension".into(),
        });
    }
    match bytes.get(cur.pos) {
        Some(b) if b.is_ascii_whitespace() => cur.pos += 1,
        _ => {
            return Err(Error::Parse {
                offset: cur.pos,
                message: "expected single whitespace before raster".into(),
            })
        }
    }
    let need = width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(CHANNELS))
        .ok_or(Error::Parse {
            offset: cur.pos,
            message: "dimensions overflow".into(),
        })?;
    let raster = &bytes[cur.pos..];
    if raster.len() < need {
        return Err(Error::Parse {
            offset: bytes.len(),
            message: format!("raster truncated: {} of {need} bytes", raster.len()),
        });
    }
    from_interleaved(height, width, &raster[..need])
}

fn encode_png(img: &ImageTensor) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    {
        let w = BufWriter::new(&mut out);
        let mut encoder = png::Encoder::new(w, img.width() as u32, img.height() as u32);
        encoder.set_color(png::ColorType::Rgb);
        encoder.set_depth(png::BitDepth::Eight);
        let mut writer = encoder
            .write_header()
            .map_err(|e| Error::UnsupportedFormat(e.to_string()))?;
        writer
            .write_image_data(&interleaved_bytes(img))
            .map_err(|e| Error::UnsupportedFormat(e.to_string()))?;
        writer
            .finish()
            .map_err(|e| Error::UnsupportedFormat(e.to_string()))?;
    }
    out.flush().ok();
    Ok(out)
}

fn decode_png<R: std::io::BufRead + std::io::Seek>(reader: R) -> Result<ImageTensor> {
    let decoder = png::Decoder::new(reader);
    let mut reader = decoder.read_info().map_err(|e| Error::Parse {
        offset: 0,
        message: e.to_string(),
    })?;
    let size = reader.output_buffer_size().ok_or(Error::Parse {
        offset: 0,
        message: "PNG too large".into(),
    })?;
    let mut buf = vec![0; size];
    let info = reader.next_frame(&mut buf).map_err(|e| Error::Parse {
        offset: 0,
        message: e.to_string(),
    })?;
    if info.color_type != png::ColorType::Rgb || info.bit_depth != png::BitDepth::Eight {
        return Err(Error::UnsupportedFormat(format!(
            "{:?} {:?}; only 8-bit RGB",
            info.color_type, info.bit_depth
        )));
    }
    buf.truncate(info.buffer_size());
    from_interleaved(info.height as usize, info.width as usize, &buf)
}
