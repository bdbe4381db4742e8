//! PPM/PGM/PNG readers and writers.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use super::{BinaryMask, GrayMap, RasterError, RgbImage};

const PNG_SIGNATURE: &[u8] = &[0x89, b'P', b'N', b'G', 0x0d, 0x0a, 0x1a, 0x0a];

/// Loads a binary PPM (P6) or PNG file as 8-bit RGB.
pub fn load_image(path: impl AsRef<Path>) -> Result<RgbImage, RasterError> {
    let bytes = fs::read(path)?;
    if bytes.starts_with(b"P6") {
        decode_ppm(&bytes)
    } else if bytes.starts_with(PNG_SIGNATURE) {
        decode_png(&bytes)
    } else {
        Err(RasterError::MalformedHeader(
            "expected a P6 PPM or PNG signature".into(),
        ))
    }
}

struct PnmHeader {
    width: usize,
    height: usize,
    maxval: u32,
    data_offset: usize,
}

fn parse_pnm_header(bytes: &[u8], magic: &[u8; 2]) -> Result<PnmHeader, RasterError> {
    if !bytes.starts_with(magic) {
        return Err(RasterError::MalformedHeader(format!(
            "expected magic {}",
            String::from_utf8_lossy(magic)
        )));
    }
    let mut pos = 2;
    let mut fields = [0u32; 3];
    for field in fields.iter_mut() {
        // whitespace and comments
        loop {
            match bytes.get(pos) {
                Some(c) if c.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&c| c != b'\n') {
                        pos += 1;
                    }
                }
                Some(_) => break,
                None => return Err(RasterError::MalformedHeader("truncated header".into())),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(|c| c.is_ascii_digit()) {
            pos += 1;
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| RasterError::MalformedHeader("expected an integer".into()))?;
    }
    if !bytes.get(pos).is_some_and(|c| c.is_ascii_whitespace()) {
        return Err(RasterError::MalformedHeader(
            "missing whitespace after maxval".into(),
        ));
    }
    let [width, height, maxval] = fields;
    if width == 0 || height == 0 || maxval == 0 || maxval > 65535 {
        return Err(RasterError::MalformedHeader(format!(
            "bad header values {width}x{height} maxval {maxval}"
        )));
    }
    Ok(PnmHeader {
        width: width as usize,
        height: height as usize,
        maxval,
        data_offset: pos + 1,
    })
}

/// Reads `n` samples, rescaling to 8 bits when maxval differs from 255.
fn read_samples(bytes: &[u8], header: &PnmHeader, n: usize) -> Result<Vec<u8>, RasterError> {
    let wide = header.maxval > 255;
    let needed = if wide { 2 * n } else { n };
    let body = &bytes[header.data_offset.min(bytes.len())..];
    if body.len() < needed {
        return Err(RasterError::MalformedHeader(format!(
            "pixel data truncated: need {needed} bytes, have {}",
            body.len()
        )));
    }
    let maxval = header.maxval;
    Ok(if wide {
        body[..needed]
            .chunks_exact(2)
            .map(|c| ((u16::from_be_bytes([c[0], c[1]]) as u32 * 255 + maxval / 2) / maxval) as u8)
            .collect()
    } else if maxval == 255 {
        body[..n].to_vec()
    } else {
        body[..n]
            .iter()
            .map(|&v| ((v as u32 * 255 + maxval / 2) / maxval) as u8)
            .collect()
    })
}

fn decode_ppm(bytes: &[u8]) -> Result<RgbImage, RasterError> {
    let header = parse_pnm_header(bytes, b"P6")?;
    let data = read_samples(bytes, &header, 3 * header.width * header.height)?;
    RgbImage::new(header.width, header.height, data)
}

fn decode_png(bytes: &[u8]) -> Result<RgbImage, RasterError> {
    let decoder = png::Decoder::new(bytes);
    let mut reader = decoder.read_info().map_err(png_error)?;
    let mut buf = vec![0; reader.output_buffer_size()];
    let info = reader.next_frame(&mut buf).map_err(png_error)?;
    let (width, height) = (info.width as usize, info.height as usize);
    let channels = match info.color_type {
        png::ColorType::Grayscale => 1,
        png::ColorType::GrayscaleAlpha => 2,
        png::ColorType::Rgb => 3,
        png::ColorType::Rgba => 4,
        png::ColorType::Indexed => {
            return Err(RasterError::UnsupportedColorType("indexed".into()))
        }
    };
    let stride = match info.bit_depth {
        png::BitDepth::Eight => 1,
        // big-endian samples: the high byte is the 16-bit value shifted right by 8
        png::BitDepth::Sixteen => 2,
        other => {
            return Err(RasterError::UnsupportedColorType(format!(
                "{other:?}-bit samples"
            )))
        }
    };
    let row_bytes = info.line_size;
    let mut data = Vec::with_capacity(3 * width * height);
    for y in 0..height {
        let row = &buf[y * row_bytes..];
        for x in 0..width {
            let sample = |c: usize| row[(x * channels + c) * stride];
            match channels {
                1 | 2 => {
                    let g = sample(0);
                    data.extend_from_slice(&[g, g, g]);
                }
                _ => data.extend_from_slice(&[sample(0), sample(1), sample(2)]),
            }
        }
    }
    RgbImage::new(width, height, data)
}

fn png_error(e: png::DecodingError) -> RasterError {
    match e {
        png::DecodingError::IoError(io) => RasterError::Io(io),
        other => RasterError::MalformedHeader(other.to_string()),
    }
}

pub fn save_ppm(img: &RgbImage, path: impl AsRef<Path>) -> Result<(), RasterError> {
    let mut out = BufWriter::new(fs::File::create(path)?);
    write!(out, "P6\n{} {}\n255\n", img.width(), img.height())?;
    out.write_all(img.data())?;
    out.flush()?;
    Ok(())
}

/// Raw 8-bit samples of a P5 file, rescaled to maxval 255.
pub fn load_pgm(path: impl AsRef<Path>) -> Result<(usize, usize, Vec<u8>), RasterError> {
    let bytes = fs::read(path)?;
    let header = parse_pnm_header(&bytes, b"P5")?;
    let data = read_samples(&bytes, &header, header.width * header.height)?;
    Ok((header.width, header.height, data))
}

fn save_pgm(path: &Path, width: usize, height: usize, data: &[u8]) -> Result<(), RasterError> {
    let mut out = BufWriter::new(fs::File::create(path)?);
    write!(out, "P5\n{width} {height}\n255\n")?;
    out.write_all(data)?;
    out.flush()?;
    Ok(())
}

/// Any sample >= 128 is foreground.
pub fn load_mask_pgm(path: impl AsRef<Path>) -> Result<BinaryMask, RasterError> {
    let (w, h, data) = load_pgm(path)?;
    BinaryMask::new(w, h, data.into_iter().map(|v| v >= 128).collect())
}

pub fn save_mask_pgm(mask: &BinaryMask, path: impl AsRef<Path>) -> Result<(), RasterError> {
    let data: Vec<u8> = mask.data().iter().map(|&b| if b { 255 } else { 0 }).collect();
    save_pgm(path.as_ref(), mask.width(), mask.height(), &data)
}

/// Samples divided by 255.
pub fn load_map_pgm(path: impl AsRef<Path>) -> Result<GrayMap, RasterError> {
    let (w, h, data) = load_pgm(path)?;
    GrayMap::new(w, h, data.into_iter().map(|v| v as f64 / 255.0).collect())
}

/// Values are clamped to [0,1], scaled by 255 and rounded to nearest.
pub fn save_map_pgm(map: &GrayMap, path: impl AsRef<Path>) -> Result<(), RasterError> {
    let data: Vec<u8> = map
        .data()
        .iter()
        .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    save_pgm(path.as_ref(), map.width(), map.height(), &data)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_png(path: &Path, w: u32, h: u32, color: png::ColorType, depth: png::BitDepth, data: &[u8]) {
        let file = fs::File::create(path).unwrap();
        let mut enc = png::Encoder::new(std::io::BufWriter::new(file), w, h);
        enc.set_color(color);
        enc.set_depth(depth);
        let mut writer = enc.write_header().unwrap();
        writer.write_image_data(data).unwrap();
    }

    #[test]
    fn ppm_decode() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("red.ppm");
        let mut bytes = b"P6\n# comment\n2 2\n255\n".to_vec();
        for _ in 0..4 {
            bytes.extend_from_slice(&[255, 0, 0]);
        }
        fs::write(&path, bytes).unwrap();
        let img = load_image(&path).unwrap();
        assert_eq!(img.dims(), (2, 2));
        assert!((0..2).all(|y| (0..2).all(|x| img.pixel(x, y) == [255, 0, 0])));
    }

    #[test]
    fn empty_file_is_malformed() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.ppm");
        fs::write(&path, b"").unwrap();
        assert!(matches!(load_image(&path), Err(RasterError::MalformedHeader(_))));
    }

    #[test]
    fn truncated_ppm_is_malformed() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("short.ppm");
        fs::write(&path, b"P6\n2 2\n255\n\x01\x02").unwrap();
        assert!(matches!(load_image(&path), Err(RasterError::MalformedHeader(_))));
    }

    #[test]
    fn png_roundtrip_through_reference_encoder() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("px.png");
        write_png(&path, 1, 1, png::ColorType::Rgb, png::BitDepth::Eight, &[10, 20, 30]);
        let img = load_image(&path).unwrap();
        assert_eq!(img, RgbImage::new(1, 1, vec![10, 20, 30]).unwrap());
    }

    #[test]
    fn png_sixteen_bit_and_gray() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("wide.png");
        write_png(
            &path,
            1,
            1,
            png::ColorType::Rgb,
            png::BitDepth::Sixteen,
            &[0x12, 0x34, 0xab, 0xcd, 0xff, 0x00],
        );
        assert_eq!(load_image(&path).unwrap().pixel(0, 0), [0x12, 0xab, 0xff]);

        let path = dir.path().join("gray.png");
        write_png(&path, 2, 1, png::ColorType::Grayscale, png::BitDepth::Eight, &[7, 200]);
        let img = load_image(&path).unwrap();
        assert_eq!(img.pixel(0, 0), [7, 7, 7]);
        assert_eq!(img.pixel(1, 0), [200, 200, 200]);
    }

    #[test]
    fn png_indexed_is_unsupported() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("idx.png");
        let file = fs::File::create(&path).unwrap();
        let mut enc = png::Encoder::new(std::io::BufWriter::new(file), 1, 1);
        enc.set_color(png::ColorType::Indexed);
        enc.set_depth(png::BitDepth::Eight);
        enc.set_palette(vec![1, 2, 3]);
        enc.write_header().unwrap().write_image_data(&[0]).unwrap();
        assert!(matches!(load_image(&path), Err(RasterError::UnsupportedColorType(_))));
    }

    #[test]
    fn pgm_mask_and_map_files() {
        let dir = tempfile::tempdir().unwrap();
        let mask = BinaryMask::from_fn(5, 3, |x, y| (x + y) % 2 == 0);
        let p = dir.path().join("m.pgm");
        save_mask_pgm(&mask, &p).unwrap();
        assert_eq!(load_mask_pgm(&p).unwrap(), mask);

        fs::write(&p, b"P5\n3 1\n255\n\x7f\x80\xff").unwrap();
        assert_eq!(load_mask_pgm(&p).unwrap().data(), &[false, true, true]);

        let map = GrayMap::new(3, 1, vec![0.0, 0.5, 1.0]).unwrap();
        save_map_pgm(&map, &p).unwrap();
        assert_eq!(load_pgm(&p).unwrap().2, vec![0, 128, 255]);
    }

    #[test]
    fn ppm_save_load() {
        let dir = tempfile::tempdir().unwrap();
        let img = RgbImage::from_fn(4, 3, |x, y| [x as u8, y as u8, (x * y) as u8]);
        let p = dir.path().join("a.ppm");
        save_ppm(&img, &p).unwrap();
        assert_eq!(load_image(&p).unwrap(), img);
    }
}
