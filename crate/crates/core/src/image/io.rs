use std::path::Path;

use image::{DynamicImage, ImageBuffer, ImageReader, Luma, Rgb};

use super::{ColorImage, ColorSpace, Image};
use crate::error::{Error, Result};

/// Result of [`load_image`]: grayscale files yield a single plane, color
/// files an RGB [`ColorImage`].
#[derive(Debug, Clone, PartialEq)]
pub enum LoadedImage {
    Gray(Image),
    Color(ColorImage),
}

impl LoadedImage {
    pub fn shape(&self) -> (usize, usize) {
        match self {
            LoadedImage::Gray(img) => img.shape(),
            LoadedImage::Color(img) => img.shape(),
        }
    }

    /// Grayscale view: the plane itself, or BT.601 luma of a color image.
    pub fn to_gray(&self) -> Image {
        match self {
            LoadedImage::Gray(img) => img.clone(),
            LoadedImage::Color(img) => {
                let ycc = match img.space() {
                    ColorSpace::YCbCr => img.clone(),
                    ColorSpace::Rgb => super::convert_color(img, ColorSpace::YCbCr),
                };
                ycc.plane(0).clone()
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BitDepth {
    Eight,
    #[default]
    Sixteen,
}

/// Reads a PNG (8/16-bit gray or RGB) or binary PGM/PPM file, mapping
/// intensities linearly onto `[0, 1]`.
pub fn load_image(path: impl AsRef<Path>) -> Result<LoadedImage> {
    let path = path.as_ref();
    let reader = ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?;
    let decoded = reader.decode().map_err(|source| Error::Codec {
        path: path.to_path_buf(),
        source,
    })?;
    let (w, h) = (decoded.width() as usize, decoded.height() as usize);
    if w == 0 || h == 0 {
        return Err(Error::UnsupportedFormat {
            path: path.to_path_buf(),
            reason: "zero-sized image".into(),
        });
    }

    let gray = |data: Vec<f64>| Image::new(h, w, data).map(LoadedImage::Gray);
    let color = |data: Vec<f64>| {
        let mut planes = [
            Vec::with_capacity(w * h),
            Vec::with_capacity(w * h),
            Vec::with_capacity(w * h),
        ];
        for px in data.chunks_exact(3) {
            for (plane, &v) in planes.iter_mut().zip(px) {
                plane.push(v);
            }
        }
        let [r, g, b] = planes;
        ColorImage::new(
            [
                Image::new(h, w, r)?,
                Image::new(h, w, g)?,
                Image::new(h, w, b)?,
            ],
            ColorSpace::Rgb,
        )
        .map(LoadedImage::Color)
    };

    match decoded {
        DynamicImage::ImageLuma8(buf) => gray(scale(buf.as_raw(), u8::MAX as f64)),
        DynamicImage::ImageLuma16(buf) => gray(scale(buf.as_raw(), u16::MAX as f64)),
        DynamicImage::ImageRgb8(buf) => color(scale(buf.as_raw(), u8::MAX as f64)),
        DynamicImage::ImageRgb16(buf) => color(scale(buf.as_raw(), u16::MAX as f64)),
        other => Err(Error::UnsupportedFormat {
            path: path.to_path_buf(),
            reason: format!(
                "pixel layout {:?} is not 8/16-bit gray or RGB",
                other.color()
            ),
        }),
    }
}

fn scale<T: Copy + Into<f64>>(raw: &[T], max: f64) -> Vec<f64> {
    raw.iter().map(|&v| v.into() / max).collect()
}

fn quantize_u16(v: f64) -> u16 {
    (v.clamp(0.0, 1.0) * u16::MAX as f64).round() as u16
}

fn quantize_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * u8::MAX as f64).round() as u8
}

/// Writes a grayscale image as 16-bit. The container follows the file
/// extension (`.png`, `.pgm`).
pub fn save_image(image: &Image, path: impl AsRef<Path>) -> Result<()> {
    save_image_with_depth(image, path, BitDepth::Sixteen)
}

pub fn save_image_with_depth(image: &Image, path: impl AsRef<Path>, depth: BitDepth) -> Result<()> {
    let path = path.as_ref();
    let (w, h) = (image.width() as u32, image.height() as u32);
    let result = match depth {
        BitDepth::Sixteen => {
            let raw: Vec<u16> = image.data().iter().map(|&v| quantize_u16(v)).collect();
            ImageBuffer::<Luma<u16>, _>::from_raw(w, h, raw)
                .expect("buffer length matches dimensions")
                .save(path)
        }
        BitDepth::Eight => {
            let raw: Vec<u8> = image.data().iter().map(|&v| quantize_u8(v)).collect();
            ImageBuffer::<Luma<u8>, _>::from_raw(w, h, raw)
                .expect("buffer length matches dimensions")
                .save(path)
        }
    };
    result.map_err(|source| codec_error(path, source))
}

/// Writes a color image as 16-bit RGB (`.png`, `.ppm`), converting from
/// YCbCr first if needed.
pub fn save_color_image(image: &ColorImage, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let rgb = match image.space() {
        ColorSpace::Rgb => image.clone(),
        ColorSpace::YCbCr => super::convert_color(image, ColorSpace::Rgb),
    };
    let (h, w) = rgb.shape();
    let [r, g, b] = rgb.planes();
    let mut raw = Vec::with_capacity(3 * w * h);
    for i in 0..w * h {
        raw.push(quantize_u16(r.data()[i]));
        raw.push(quantize_u16(g.data()[i]));
        raw.push(quantize_u16(b.data()[i]));
    }
    ImageBuffer::<Rgb<u16>, _>::from_raw(w as u32, h as u32, raw)
        .expect("buffer length matches dimensions")
        .save(path)
        .map_err(|source| codec_error(path, source))
}

fn codec_error(path: &Path, source: image::ImageError) -> Error {
    match source {
        image::ImageError::IoError(e) => Error::io(path, e),
        source => Error::Codec {
            path: path.to_path_buf(),
            source,
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn gray(loaded: LoadedImage) -> Image {
        match loaded {
            LoadedImage::Gray(img) => img,
            LoadedImage::Color(_) => panic!("expected grayscale"),
        }
    }

    #[test]
    fn png_endpoints_8bit() {
        let dir = tempfile::tempdir().unwrap();
        for (value, expected) in [(255u8, 1.0), (0u8, 0.0)] {
            let path = dir.path().join(format!("p{value}.png"));
            ImageBuffer::<Luma<u8>, _>::from_raw(1, 1, vec![value])
                .unwrap()
                .save(&path)
                .unwrap();
            let img = gray(load_image(&path).unwrap());
            assert_eq!(img.data(), &[expected]);
        }
    }

    #[test]
    fn pgm_bytes_decode() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("k.pgm");
        let mut bytes = b"P5\n2 2\n255\n".to_vec();
        bytes.extend_from_slice(&[0, 85, 170, 255]);
        std::fs::write(&path, &bytes).unwrap();

        // Hand decode: payload follows the third header line, one byte per pixel.
        let payload = &bytes[bytes.len() - 4..];
        let oracle: Vec<f64> = payload.iter().map(|&b| b as f64 / 255.0).collect();

        let img = gray(load_image(&path).unwrap());
        assert_eq!(img.shape(), (2, 2));
        for ((a, b), nominal) in
            img.data()
                .iter()
                .zip(&oracle)
                .zip([0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0])
        {
            assert_eq!(a, b);
            assert!((a - nominal).abs() < 1e-2);
        }
    }

    #[test]
    fn save_load_endpoints_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.png");
        let img = Image::new(1, 2, vec![0.0, 1.0]).unwrap();
        save_image(&img, &path).unwrap();
        assert_eq!(gray(load_image(&path).unwrap()), img);
    }

    #[test]
    fn save_load_within_quantization_step() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let img = Image::from_fn(8, 8, |_, _| rng.random::<f64>());
        for ext in ["png", "pgm"] {
            let path = dir.path().join(format!("r.{ext}"));
            save_image(&img, &path).unwrap();
            let back = gray(load_image(&path).unwrap());
            let err = back.max_abs_diff(&img).unwrap();
            assert!(err <= 1.0 / 65535.0 + 1e-12, "{ext}: {err}");
        }
    }

    #[test]
    fn save_clamps_out_of_range() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.png");
        save_image(&Image::new(1, 2, vec![1.5, -0.25]).unwrap(), &path).unwrap();
        assert_eq!(gray(load_image(&path).unwrap()).data(), &[1.0, 0.0]);
    }

    #[test]
    fn color_roundtrip_ppm() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.ppm");
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut plane = || Image::from_fn(3, 4, |_, _| rng.random::<f64>());
        let img = ColorImage::new([plane(), plane(), plane()], ColorSpace::Rgb).unwrap();
        save_color_image(&img, &path).unwrap();
        let LoadedImage::Color(back) = load_image(&path).unwrap() else {
            panic!("expected color");
        };
        for (a, b) in back.planes().iter().zip(img.planes()) {
            assert!(a.max_abs_diff(b).unwrap() <= 1.0 / 65535.0 + 1e-12);
        }
    }

    #[test]
    fn rejects_alpha_and_missing_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.png");
        ImageBuffer::<image::LumaA<u8>, _>::from_raw(1, 1, vec![1, 2])
            .unwrap()
            .save(&path)
            .unwrap();
        assert!(matches!(
            load_image(&path),
            Err(Error::UnsupportedFormat { .. })
        ));
        assert!(matches!(
            load_image(dir.path().join("missing.png")),
            Err(Error::Io { .. })
        ));
        assert!(save_image(&Image::zeros(1, 1), dir.path().join("no/such/dir/x.png")).is_err());
    }
}
