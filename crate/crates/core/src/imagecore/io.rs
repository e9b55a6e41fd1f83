//! Binary PGM (P5) and grayscale PNG reading and writing.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};

use super::{FloatPlane, Raster};

const PNG_MAGIC: &[u8] = b"\x89PNG\r\n\x1a\n";

/// Reads a grayscale raster. The format is chosen from the file's magic
/// bytes, not its extension. Samples are kept at their stored depth.
pub fn load_raster(path: impl AsRef<Path>) -> Result<Raster> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let raster = if bytes.starts_with(b"P5") {
        decode_pgm(&bytes)
    } else if bytes.starts_with(PNG_MAGIC) {
        decode_png(&bytes)
    } else {
        Err(Error::Format("not a binary PGM (P5) or PNG file".into()))
    };
    raster
        .map(|r| r.with_source(path))
        .map_err(|e| match e {
            Error::Format(msg) => Error::Format(format!("{}: {msg}", path.display())),
            other => other,
        })
}

/// Writes `raster` as PNG when the extension is `.png`, binary PGM otherwise.
pub fn save_raster(raster: &Raster, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = if is_png_path(path) {
        encode_png(raster)?
    } else {
        encode_pgm(raster)
    };
    write_file(path, &bytes)
}

/// Value range recorded alongside a plane saved with [`save_plane`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlaneRange {
    pub min: f64,
    pub max: f64,
}

/// Saves an arbitrary real plane as 16-bit, linearly mapping `[min, max]` to
/// `[0, 65535]`. The range goes to a `<path>.range` sidecar so the values can
/// be recovered.
pub fn save_plane(plane: &FloatPlane, path: impl AsRef<Path>) -> Result<PlaneRange> {
    let path = path.as_ref();
    let (min, max) = plane.min_max();
    let span = max - min;
    let pixels = plane
        .values()
        .iter()
        .map(|&v| {
            if span > 0.0 {
                (((v - min) / span) * 65535.0).round() as u16
            } else {
                0
            }
        })
        .collect();
    let raster = Raster::new(plane.width(), plane.height(), 16, pixels)?;
    save_raster(&raster, path)?;
    let mut sidecar = path.as_os_str().to_owned();
    sidecar.push(".range");
    write_file(
        Path::new(&sidecar),
        format!("min = {min:e}\nmax = {max:e}\n").as_bytes(),
    )?;
    Ok(PlaneRange { min, max })
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    w.write_all(bytes)
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

fn is_png_path(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("png"))
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
                c if c.is_ascii_whitespace() => self.pos += 1,
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
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Format(format!("bad PGM header: missing {what}")))
    }
}

fn decode_pgm(bytes: &[u8]) -> Result<Raster> {
    let mut cur = HeaderCursor { bytes, pos: 2 };
    let width = cur.number("width")?;
    let height = cur.number("height")?;
    let maxval = cur.number("maxval")?;
    // exactly one whitespace byte separates the header from the samples
    match bytes.get(cur.pos) {
        Some(c) if c.is_ascii_whitespace() => cur.pos += 1,
        _ => return Err(Error::Format("bad PGM header: no separator".into())),
    }
    let depth = match maxval {
        255 => 8,
        65535 => 16,
        other => {
            return Err(Error::Format(format!(
                "unsupported bit depth: PGM maxval {other} (expected 255 or 65535)"
            )))
        }
    };
    let n = width
        .checked_mul(height)
        .ok_or_else(|| Error::Format("PGM dimensions overflow".into()))?;
    let data = &bytes[cur.pos..];
    let bytes_per = if depth == 8 { 1 } else { 2 };
    if data.len() < n * bytes_per {
        return Err(Error::Format(format!(
            "truncated PGM: {} sample bytes for {width}x{height}",
            data.len()
        )));
    }
    let pixels = if depth == 8 {
        data[..n].iter().map(|&b| u16::from(b)).collect()
    } else {
        data[..2 * n]
            .chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]))
            .collect()
    };
    Raster::new(width, height, depth, pixels)
}

fn encode_pgm(raster: &Raster) -> Vec<u8> {
    let mut out = format!(
        "P5\n{} {}\n{}\n",
        raster.width(),
        raster.height(),
        raster.max_value()
    )
    .into_bytes();
    if raster.depth() == 8 {
        out.extend(raster.pixels().iter().map(|&s| s as u8));
    } else {
        for &s in raster.pixels() {
            out.extend_from_slice(&s.to_be_bytes());
        }
    }
    out
}

fn decode_png(bytes: &[u8]) -> Result<Raster> {
    let mut decoder = png::Decoder::new(bytes);
    decoder.set_transformations(png::Transformations::IDENTITY);
    let mut reader = decoder
        .read_info()
        .map_err(|e| Error::Format(format!("png: {e}")))?;
    let (color, bit_depth) = reader.output_color_type();
    if color != png::ColorType::Grayscale {
        return Err(Error::Format(format!(
            "color or paletted image ({color:?}); only grayscale is supported"
        )));
    }
    let depth = match bit_depth {
        png::BitDepth::Eight => 8,
        png::BitDepth::Sixteen => 16,
        other => {
            return Err(Error::Format(format!(
                "unsupported bit depth {other:?} (expected 8 or 16)"
            )))
        }
    };
    let mut buf = vec![0; reader.output_buffer_size()];
    let frame = reader
        .next_frame(&mut buf)
        .map_err(|e| Error::Format(format!("png: {e}")))?;
    let (w, h) = (frame.width as usize, frame.height as usize);
    let data = &buf[..frame.buffer_size()];
    let pixels = if depth == 8 {
        data.iter().map(|&b| u16::from(b)).collect()
    } else {
        data.chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]))
            .collect()
    };
    Raster::new(w, h, depth, pixels)
}

fn encode_png(raster: &Raster) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, raster.width() as u32, raster.height() as u32);
        enc.set_color(png::ColorType::Grayscale);
        let data: Vec<u8> = if raster.depth() == 8 {
            enc.set_depth(png::BitDepth::Eight);
            raster.pixels().iter().map(|&s| s as u8).collect()
        } else {
            enc.set_depth(png::BitDepth::Sixteen);
            raster.pixels().iter().flat_map(|s| s.to_be_bytes()).collect()
        };
        let mut writer = enc
            .write_header()
            .map_err(|e| Error::Format(format!("png: {e}")))?;
        writer
            .write_image_data(&data)
            .map_err(|e| Error::Format(format!("png: {e}")))?;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_raster(depth: u8, seed: u64) -> Raster {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let max = if depth == 8 { 255 } else { 65535 };
        let px = (0..64 * 64).map(|_| rng.gen_range(0..=max)).collect();
        Raster::new(64, 64, depth, px).unwrap()
    }

    #[test]
    fn minimal_pgm() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("one.pgm");
        fs::write(&path, b"P5\n1 1\n255\n\x00").unwrap();
        let r = load_raster(&path).unwrap();
        assert_eq!((r.width(), r.height(), r.depth()), (1, 1, 8));
        assert_eq!(r.pixels(), &[0]);
        assert_eq!(r.source(), Some(path.as_path()));
    }

    #[test]
    fn pgm_header_comments() {
        let r = decode_pgm(b"P5 # made by hand\n2 1\n# max\n65535\n\x01\x02\xff\xff").unwrap();
        assert_eq!(r.depth(), 16);
        assert_eq!(r.pixels(), &[0x0102, 0xffff]);
    }

    #[test]
    fn round_trip_16bit_pgm_and_png() {
        let dir = tempfile::tempdir().unwrap();
        for (depth, name) in [(16, "a.pgm"), (16, "a.png"), (8, "b.pgm"), (8, "b.png")] {
            let r = random_raster(depth, 3);
            let p = dir.path().join(name);
            save_raster(&r, &p).unwrap();
            let back = load_raster(&p).unwrap();
            assert_eq!(back.depth(), depth);
            assert_eq!(back.pixels(), r.pixels(), "{name}");
        }
    }

    #[test]
    fn paper_sized_png_keeps_geometry() {
        let r = Raster::new(2456, 2054, 16, vec![1234; 2456 * 2054]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("big.png");
        save_raster(&r, &p).unwrap();
        let back = load_raster(&p).unwrap();
        assert_eq!((back.width(), back.height(), back.depth()), (2456, 2054, 16));
    }

    #[test]
    fn rejects_color_png() {
        let mut out = Vec::new();
        {
            let mut enc = png::Encoder::new(&mut out, 2, 2);
            enc.set_color(png::ColorType::Rgb);
            enc.set_depth(png::BitDepth::Eight);
            let mut w = enc.write_header().unwrap();
            w.write_image_data(&[0u8; 12]).unwrap();
        }
        let err = decode_png(&out).unwrap_err();
        assert!(err.to_string().contains("color"), "{err}");
        assert!(err.is_validation());
    }

    #[test]
    fn rejects_odd_maxval_and_truncation() {
        assert!(decode_pgm(b"P5\n1 1\n4095\n\x00\x00")
            .unwrap_err()
            .to_string()
            .contains("bit depth"));
        assert!(decode_pgm(b"P5\n2 2\n255\n\x00")
            .unwrap_err()
            .to_string()
            .contains("truncated"));
    }

    #[test]
    fn unreadable_file_is_io_error() {
        let err = load_raster("/nonexistent/x.pgm").unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
    }

    #[test]
    fn save_plane_writes_range_sidecar() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("plane.pgm");
        let plane = FloatPlane::new(2, 1, vec![-0.5, 1.5]).unwrap();
        let range = save_plane(&plane, &p).unwrap();
        assert_eq!(range, PlaneRange { min: -0.5, max: 1.5 });
        let text = fs::read_to_string(dir.path().join("plane.pgm.range")).unwrap();
        assert!(text.contains("min = -5e-1"));
        assert_eq!(load_raster(&p).unwrap().pixels(), &[0, 65535]);
    }
}
