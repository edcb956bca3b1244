//! Pseudo-image encoding: a `T x M` grid per coordinate axis, rows are
//! frames and columns are joints in arrangement order, min–max scaled to
//! 8 bits per channel.

use std::io::{BufWriter, Write};
use std::path::Path;

use crate::arrangement::{ArrangementSet, JointArrangement};
use crate::error::{Error, Result};
use crate::skeleton::{ActionSequence, DEFAULT_FRAMES, NUM_JOINTS};

pub const CHANNELS: usize = 3;

/// `rows x cols x 3` bytes, interleaved by channel (x, y, z).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PseudoImage {
    rows: usize,
    cols: usize,
    data: Vec<u8>,
}

impl PseudoImage {
    pub fn new(rows: usize, cols: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != rows * cols * CHANNELS {
            return Err(Error::dim(
                "pseudo_image",
                format!("{rows}x{cols}x{CHANNELS} needs {} bytes, got {}", rows * cols * CHANNELS, data.len()),
            ));
        }
        Ok(PseudoImage { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        PseudoImage {
            rows,
            cols,
            data: vec![0; rows * cols * CHANNELS],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    /// Interleaved bytes, row-major.
    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn get(&self, row: usize, col: usize, channel: usize) -> u8 {
        self.data[(row * self.cols + col) * CHANNELS + channel]
    }

    /// Image whose column `k` is column `order[k]` of `self`.
    pub fn permute_columns(&self, order: &[usize]) -> Self {
        let mut data = Vec::with_capacity(self.data.len());
        for r in 0..self.rows {
            for &c in order {
                let at = (r * self.cols + c) * CHANNELS;
                data.extend_from_slice(&self.data[at..at + CHANNELS]);
            }
        }
        PseudoImage {
            rows: self.rows,
            cols: order.len(),
            data,
        }
    }
}

/// Per-channel range recorded at encode time.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ChannelScaling {
    pub min: [f64; CHANNELS],
    pub max: [f64; CHANNELS],
}

fn scale_to_byte(v: f64, min: f64, max: f64) -> u8 {
    if max <= min {
        return 0;
    }
    // Round half up.
    ((v - min) / (max - min) * 255.0 + 0.5).floor().clamp(0.0, 255.0) as u8
}

/// Encodes a `T = 25` frame sequence under one joint arrangement.
pub fn encode(seq: &ActionSequence, arr: &JointArrangement) -> Result<(PseudoImage, ChannelScaling)> {
    if seq.frames.len() != DEFAULT_FRAMES {
        return Err(Error::dim(
            "encode",
            format!("expected {DEFAULT_FRAMES} frames, got {}", seq.frames.len()),
        ));
    }
    if arr.len() != NUM_JOINTS {
        return Err(Error::dim(
            "encode",
            format!("arrangement covers {} joints, expected {NUM_JOINTS}", arr.len()),
        ));
    }
    let mut min = [f64::INFINITY; CHANNELS];
    let mut max = [f64::NEG_INFINITY; CHANNELS];
    for frame in &seq.frames {
        for j in &frame.joints {
            for ch in 0..CHANNELS {
                min[ch] = min[ch].min(j.axis(ch));
                max[ch] = max[ch].max(j.axis(ch));
            }
        }
    }
    let (rows, cols) = (seq.frames.len(), arr.len());
    let mut data = Vec::with_capacity(rows * cols * CHANNELS);
    for frame in &seq.frames {
        for &joint in arr.order() {
            let j = &frame.joints[joint];
            for ch in 0..CHANNELS {
                data.push(scale_to_byte(j.axis(ch), min[ch], max[ch]));
            }
        }
    }
    Ok((PseudoImage { rows, cols, data }, ChannelScaling { min, max }))
}

/// One image per member of the set, in set order.
pub fn encode_set(seq: &ActionSequence, set: &ArrangementSet) -> Result<Vec<PseudoImage>> {
    set.members().iter().map(|a| encode(seq, a).map(|(img, _)| img)).collect()
}

/// Writes an 8-bit RGB PNG (x, y, z as red, green, blue).
pub fn export_png(img: &PseudoImage, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut encoder = png::Encoder::new(BufWriter::new(file), img.cols as u32, img.rows as u32);
    encoder.set_color(png::ColorType::Rgb);
    encoder.set_depth(png::BitDepth::Eight);
    let png_err = |e: png::EncodingError| Error::io(path, std::io::Error::other(e));
    let mut writer = encoder.write_header().map_err(png_err)?;
    writer.write_image_data(&img.data).map_err(png_err)?;
    writer.finish().map_err(png_err)
}

pub fn import_png(path: &Path) -> Result<PseudoImage> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let decoder = png::Decoder::new(std::io::BufReader::new(file));
    let png_err = |e: png::DecodingError| Error::io(path, std::io::Error::other(e));
    let mut reader = decoder.read_info().map_err(png_err)?;
    let mut buf = vec![0; reader.output_buffer_size().unwrap_or(0)];
    let info = reader.next_frame(&mut buf).map_err(png_err)?;
    if info.color_type != png::ColorType::Rgb || info.bit_depth != png::BitDepth::Eight {
        return Err(Error::dim("import_png", format!("{:?}/{:?}, expected 8-bit RGB", info.color_type, info.bit_depth)));
    }
    buf.truncate(info.buffer_size());
    PseudoImage::new(info.height as usize, info.width as usize, buf)
}

/// Raw dump: ASCII header `SKPI <rows> <cols> 3\n`, then the x plane, the y
/// plane and the z plane, each row-major.
pub fn write_raw<W: Write>(img: &PseudoImage, mut w: W) -> std::io::Result<()> {
    writeln!(w, "SKPI {} {} {CHANNELS}", img.rows, img.cols)?;
    for ch in 0..CHANNELS {
        let plane: Vec<u8> = img.data.iter().skip(ch).step_by(CHANNELS).copied().collect();
        w.write_all(&plane)?;
    }
    Ok(())
}

pub fn read_raw(bytes: &[u8]) -> Result<PseudoImage> {
    let bad = |m: &str| Error::dim("read_raw", m.to_string());
    let nl = bytes.iter().position(|&b| b == b'\n').ok_or_else(|| bad("missing header"))?;
    let header = std::str::from_utf8(&bytes[..nl]).map_err(|_| bad("header is not ascii"))?;
    let fields: Vec<&str> = header.split_whitespace().collect();
    if fields.len() != 4 || fields[0] != "SKPI" || fields[3] != "3" {
        return Err(bad("bad header"));
    }
    let rows: usize = fields[1].parse().map_err(|_| bad("bad rows"))?;
    let cols: usize = fields[2].parse().map_err(|_| bad("bad cols"))?;
    let body = &bytes[nl + 1..];
    let plane = rows * cols;
    if body.len() != plane * CHANNELS {
        return Err(bad("payload length mismatch"));
    }
    let mut data = vec![0; plane * CHANNELS];
    for ch in 0..CHANNELS {
        for i in 0..plane {
            data[i * CHANNELS + ch] = body[ch * plane + i];
        }
    }
    PseudoImage::new(rows, cols, data)
}
