//! PNG input and output.
//!
//! Color images are 8-bit gray or RGB; masks are single-channel with
//! 0 = false and 255 = true; label maps store raw category ids.

use std::path::Path;

use image::{ColorType, DynamicImage, ExtendedColorType, ImageReader};

use crate::error::{Error, Result};
use crate::raster::{BitMask, RasterImage};
use crate::scalar::Real;

/// Raw 8-bit samples with their shape.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Bytes {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<u8>,
}

fn decode(path: &Path) -> Result<DynamicImage> {
    let reader = ImageReader::open(path).map_err(|source| Error::Unreadable {
        path: path.to_path_buf(),
        source,
    })?;
    let reader = reader.with_guessed_format().map_err(|source| Error::Unreadable {
        path: path.to_path_buf(),
        source,
    })?;
    reader.decode().map_err(|e| Error::Decode {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

/// Reads an 8-bit PNG with one or three channels.
pub fn read_bytes(path: impl AsRef<Path>) -> Result<Bytes> {
    let path = path.as_ref();
    let img = decode(path)?;
    let color = img.color();
    let bits = color.bits_per_pixel() / color.channel_count() as u16;
    if bits != 8 {
        return Err(Error::UnsupportedBitDepth {
            path: path.to_path_buf(),
            bits,
        });
    }
    let (width, height) = (img.width() as usize, img.height() as usize);
    let (channels, data) = match color {
        ColorType::L8 => (1, img.into_luma8().into_raw()),
        ColorType::Rgb8 => (3, img.into_rgb8().into_raw()),
        other => {
            return Err(Error::UnsupportedChannels {
                path: path.to_path_buf(),
                channels: other.channel_count(),
            })
        }
    };
    Ok(Bytes {
        width,
        height,
        channels,
        data,
    })
}

pub fn write_bytes(path: impl AsRef<Path>, bytes: &Bytes) -> Result<()> {
    let path = path.as_ref();
    let color = match bytes.channels {
        1 => ExtendedColorType::L8,
        3 => ExtendedColorType::Rgb8,
        c => return Err(Error::invalid(format!("cannot write {c}-channel image"))),
    };
    image::save_buffer_with_format(
        path,
        &bytes.data,
        bytes.width as u32,
        bytes.height as u32,
        color,
        image::ImageFormat::Png,
    )
    .map_err(|e| Error::Write {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

pub fn read_image<T: Real>(path: impl AsRef<Path>) -> Result<RasterImage<T>> {
    let b = read_bytes(path)?;
    RasterImage::from_u8(b.width, b.height, b.channels, &b.data)
}

pub fn write_image<T: Real>(img: &RasterImage<T>, path: impl AsRef<Path>) -> Result<()> {
    write_bytes(
        path,
        &Bytes {
            width: img.width(),
            height: img.height(),
            channels: img.channels(),
            data: img.to_u8(),
        },
    )
}

fn require_gray(path: &Path, b: &Bytes) -> Result<()> {
    if b.channels != 1 {
        return Err(Error::UnsupportedChannels {
            path: path.to_path_buf(),
            channels: b.channels as u8,
        });
    }
    Ok(())
}

/// Reads a single-channel mask; any non-zero sample is `true`.
pub fn read_mask(path: impl AsRef<Path>) -> Result<BitMask> {
    let path = path.as_ref();
    let b = read_bytes(path)?;
    require_gray(path, &b)?;
    BitMask::from_vec(b.width, b.height, b.data.iter().map(|&v| v != 0).collect())
}

pub fn write_mask(mask: &BitMask, path: impl AsRef<Path>) -> Result<()> {
    write_bytes(
        path,
        &Bytes {
            width: mask.width(),
            height: mask.height(),
            channels: 1,
            data: mask.bits().iter().map(|&b| if b { 255 } else { 0 }).collect(),
        },
    )
}

/// Reads a single-channel PNG of raw ids.
pub fn read_ids(path: impl AsRef<Path>) -> Result<Bytes> {
    let path = path.as_ref();
    let b = read_bytes(path)?;
    require_gray(path, &b)?;
    Ok(b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn png_round_trip_is_lossless() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for channels in [1, 3] {
            let data: Vec<u8> = (0..9 * channels).map(|_| rng.random()).collect();
            let img = RasterImage::<f64>::from_u8(3, 3, channels, &data).unwrap();
            let path = dir.path().join(format!("rt{channels}.png"));
            write_image(&img, &path).unwrap();
            let back: RasterImage<f64> = read_image(&path).unwrap();
            assert_eq!(back.to_u8(), data);
            assert_eq!(back, img);
        }
    }

    #[test]
    fn sixteen_bit_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("deep.png");
        let buf: image::ImageBuffer<image::Luma<u16>, Vec<u16>> =
            image::ImageBuffer::from_fn(4, 4, |x, y| image::Luma([(x * 1000 + y) as u16]));
        buf.save(&path).unwrap();
        match read_image::<f64>(&path) {
            Err(Error::UnsupportedBitDepth { bits: 16, .. }) => {}
            other => panic!("expected bit depth error, got {other:?}"),
        }
    }

    #[test]
    fn rgba_is_rejected_and_missing_file_is_unreadable() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rgba.png");
        let buf = image::RgbaImage::from_pixel(2, 2, image::Rgba([1, 2, 3, 4]));
        buf.save(&path).unwrap();
        assert!(matches!(
            read_image::<f64>(&path),
            Err(Error::UnsupportedChannels { channels: 4, .. })
        ));
        assert!(matches!(
            read_image::<f64>(dir.path().join("nope.png")),
            Err(Error::Unreadable { .. })
        ));
        let junk = dir.path().join("junk.png");
        std::fs::write(&junk, b"not a png").unwrap();
        assert!(matches!(read_image::<f64>(&junk), Err(Error::Decode { .. })));
    }

    #[test]
    fn mask_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let m = BitMask::from_fn(5, 3, |x, y| (x + y) % 2 == 0);
        let path = dir.path().join("m.png");
        write_mask(&m, &path).unwrap();
        assert_eq!(read_mask(&path).unwrap(), m);
    }
}
