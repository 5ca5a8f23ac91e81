//! Image and label-map codecs: binary PPM/PGM always, PNG and JPEG for
//! VOC-style data.

use std::fs;
use std::io::BufWriter;
use std::path::Path;

use crate::error::{Error, Result};
use crate::metrics::LabelMap;

/// 8-bit interleaved RGB raster.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize) -> Self {
        RgbImage {
            width,
            height,
            data: vec![0; width * height * 3],
        }
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }
}

fn extension(path: &Path) -> String {
    path.extension()
        .map(|e| e.to_string_lossy().to_ascii_lowercase())
        .unwrap_or_default()
}

/// Parses a binary netpbm header, returning (width, height, body offset).
fn netpbm_header(bytes: &[u8], magic: &[u8; 2], path: &Path) -> Result<(usize, usize, usize)> {
    if bytes.len() < 2 || &bytes[..2] != magic {
        return Err(Error::format(
            path,
            format!("expected {} header", String::from_utf8_lossy(magic)),
        ));
    }
    let mut fields = Vec::with_capacity(3);
    let mut i = 2;
    while fields.len() < 3 {
        while i < bytes.len() && bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        if i < bytes.len() && bytes[i] == b'#' {
            while i < bytes.len() && bytes[i] != b'\n' {
                i += 1;
            }
            continue;
        }
        let start = i;
        while i < bytes.len() && bytes[i].is_ascii_digit() {
            i += 1;
        }
        if start == i {
            return Err(Error::format(path, "truncated netpbm header"));
        }
        let v: usize = std::str::from_utf8(&bytes[start..i])
            .unwrap()
            .parse()
            .map_err(|_| Error::format(path, "bad netpbm number"))?;
        fields.push(v);
    }
    if fields[2] != 255 {
        return Err(Error::format(
            path,
            format!("only maxval 255 is supported, got {}", fields[2]),
        ));
    }
    // exactly one whitespace byte separates header and raster
    Ok((fields[0], fields[1], i + 1))
}

pub fn read_ppm(path: &Path) -> Result<RgbImage> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let (w, h, off) = netpbm_header(&bytes, b"P6", path)?;
    let need = w * h * 3;
    if bytes.len() < off + need {
        return Err(Error::format(path, "truncated PPM raster"));
    }
    Ok(RgbImage {
        width: w,
        height: h,
        data: bytes[off..off + need].to_vec(),
    })
}

pub fn write_ppm(path: &Path, img: &RgbImage) -> Result<()> {
    let mut out = format!("P6\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend_from_slice(&img.data);
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_pgm(path: &Path) -> Result<LabelMap> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let (w, h, off) = netpbm_header(&bytes, b"P5", path)?;
    if bytes.len() < off + w * h {
        return Err(Error::format(path, "truncated PGM raster"));
    }
    LabelMap::new(h, w, bytes[off..off + w * h].to_vec())
}

pub fn write_pgm(path: &Path, label: &LabelMap) -> Result<()> {
    let mut out = format!("P5\n{} {}\n255\n", label.width(), label.height()).into_bytes();
    out.extend_from_slice(label.data());
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Reads raw 8-bit values of a palette or grayscale PNG without expanding
/// the palette.
pub fn read_png_indices(path: &Path) -> Result<LabelMap> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut decoder = png::Decoder::new(file);
    decoder.set_transformations(png::Transformations::IDENTITY);
    let mut reader = decoder
        .read_info()
        .map_err(|e| Error::format(path, e.to_string()))?;
    let mut buf = vec![0; reader.output_buffer_size()];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| Error::format(path, e.to_string()))?;
    use png::{BitDepth, ColorType};
    match (info.color_type, info.bit_depth) {
        (ColorType::Indexed | ColorType::Grayscale, BitDepth::Eight) => {}
        (ct, bd) => {
            return Err(Error::format(
                path,
                format!("label PNG must be 8-bit palette or grayscale, got {ct:?} {bd:?}"),
            ))
        }
    }
    let (w, h) = (info.width as usize, info.height as usize);
    let mut data = Vec::with_capacity(w * h);
    for row in buf.chunks(info.line_size).take(h) {
        data.extend_from_slice(&row[..w]);
    }
    LabelMap::new(h, w, data)
}

/// Writes a label map as an 8-bit grayscale PNG.
pub fn write_png_gray(path: &Path, label: &LabelMap) -> Result<()> {
    encode_png(
        path,
        label.width(),
        label.height(),
        png::ColorType::Grayscale,
        label.data(),
    )
}

pub fn write_png_rgb(path: &Path, img: &RgbImage) -> Result<()> {
    encode_png(path, img.width, img.height, png::ColorType::Rgb, &img.data)
}

fn encode_png(path: &Path, w: usize, h: usize, ct: png::ColorType, data: &[u8]) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), w as u32, h as u32);
    enc.set_color(ct);
    enc.set_depth(png::BitDepth::Eight);
    let to_err = |e: png::EncodingError| match e {
        png::EncodingError::IoError(io) => Error::io(path, io),
        other => Error::format(path, other.to_string()),
    };
    let mut writer = enc.write_header().map_err(to_err)?;
    writer.write_image_data(data).map_err(to_err)
}

/// Reads an RGB image from PPM, PNG or JPEG (chosen by extension).
pub fn read_rgb(path: &Path) -> Result<RgbImage> {
    if extension(path) == "ppm" {
        return read_ppm(path);
    }
    let img = image::open(path).map_err(|e| match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => Error::format(path, other.to_string()),
    })?;
    let rgb = img.to_rgb8();
    Ok(RgbImage {
        width: rgb.width() as usize,
        height: rgb.height() as usize,
        data: rgb.into_raw(),
    })
}

/// Reads a label map from PGM or PNG (chosen by extension).
pub fn read_labels(path: &Path) -> Result<LabelMap> {
    match extension(path).as_str() {
        "pgm" => read_pgm(path),
        "png" => read_png_indices(path),
        other => Err(Error::format(
            path,
            format!("unsupported label format .{other}"),
        )),
    }
}
