//! Grayscale PGM ingestion and export.

use std::io::{BufWriter, Write};
use std::path::Path;

use image::{DynamicImage, ImageFormat};

use crate::error::{Error, Result};
use crate::field::{Domain, ScalarField};

/// Reads an 8- or 16-bit binary PGM and maps intensities to `[0, 1]`.
///
/// Image row 0 is the top of the picture, so it lands on `y_max`.
pub fn read_pgm(path: &Path, domain: Domain) -> Result<ScalarField> {
    let bytes = std::fs::read(path).map_err(|e| Error::Image { path: path.into(), reason: e.to_string() })?;
    decode_pgm(&bytes, domain).map_err(|e| match e {
        Error::Input(reason) => Error::Image { path: path.into(), reason },
        other => other,
    })
}

pub fn decode_pgm(bytes: &[u8], domain: Domain) -> Result<ScalarField> {
    if !bytes.starts_with(b"P5") {
        return Err(Error::Input("not a binary (P5) PGM".into()));
    }
    let img = image::load_from_memory_with_format(bytes, ImageFormat::Pnm)
        .map_err(|e| Error::Input(e.to_string()))?;
    let (w, h, values): (usize, usize, Vec<f64>) = match img {
        DynamicImage::ImageLuma8(buf) => {
            let (w, h) = buf.dimensions();
            (w as usize, h as usize, buf.into_raw().into_iter().map(|v| v as f64 / 255.0).collect())
        }
        DynamicImage::ImageLuma16(buf) => {
            let (w, h) = buf.dimensions();
            (w as usize, h as usize, buf.into_raw().into_iter().map(|v| v as f64 / 65535.0).collect())
        }
        other => return Err(Error::Input(format!("unsupported PGM pixel layout {:?}", other.color()))),
    };
    let mut flipped = Vec::with_capacity(values.len());
    for row in (0..h).rev() {
        flipped.extend_from_slice(&values[row * w..(row + 1) * w]);
    }
    ScalarField::new(w, h, domain, flipped)
}

/// Writes an 8-bit P5 PGM, linearly mapping `[lo, hi]` to `[0, 255]`.
pub fn write_pgm(path: &Path, field: &ScalarField, lo: f64, hi: f64) -> Result<()> {
    let mut out = BufWriter::new(std::fs::File::create(path)?);
    write!(out, "P5\n{} {}\n255\n", field.nx(), field.ny())?;
    let span = if hi > lo { hi - lo } else { 1.0 };
    let mut row = Vec::with_capacity(field.nx());
    for j in (0..field.ny()).rev() {
        row.clear();
        for i in 0..field.nx() {
            let v = ((field.get(i, j) - lo) / span).clamp(0.0, 1.0);
            row.push((v * 255.0).round() as u8);
        }
        out.write_all(&row)?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decodes_8_bit() {
        let mut bytes = b"P5\n# comment\n3 2\n255\n".to_vec();
        bytes.extend_from_slice(&[0, 51, 255, 255, 0, 102]);
        let f = decode_pgm(&bytes, Domain::default()).unwrap();
        assert_eq!((f.nx(), f.ny()), (3, 2));
        // top row of the file is y_max
        assert_eq!(f.get(0, 1), 0.0);
        assert!((f.get(1, 1) - 0.2).abs() < 1e-12);
        assert!((f.get(2, 0) - 0.4).abs() < 1e-12);
    }

    #[test]
    fn decodes_16_bit() {
        let mut bytes = b"P5\n2 1\n65535\n".to_vec();
        bytes.extend_from_slice(&[0xff, 0xff, 0x00, 0x00]);
        let f = decode_pgm(&bytes, Domain::default()).unwrap();
        assert_eq!(f.values(), &[1.0, 0.0]);
    }

    #[test]
    fn rejects_ascii_and_garbage() {
        assert!(decode_pgm(b"P2\n1 1\n255\n7\n", Domain::default()).is_err());
        assert!(decode_pgm(b"P5\n4 4\n255\n\x01", Domain::default()).is_err());
    }

    #[test]
    fn write_then_read() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.pgm");
        let f = ScalarField::from_fn(5, 4, Domain::default(), |x, y| 0.5 + 0.25 * x * y).unwrap();
        write_pgm(&path, &f, 0.0, 1.0).unwrap();
        let g = read_pgm(&path, Domain::default()).unwrap();
        assert!(f.max_abs_diff(&g).unwrap() <= 0.5 / 255.0 + 1e-12);
    }
}
