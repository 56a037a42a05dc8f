use std::path::Path;

use crate::error::{Error, Result};
use crate::image::{load_image, Image};

/// A nonnegative, unit-sum blur kernel with odd dimensions. The center pixel
/// is `(height / 2, width / 2)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Psf {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl Psf {
    /// Validates and normalizes raw kernel weights. Even dimensions get one
    /// zero row appended at the bottom and/or one zero column at the right,
    /// so the original center shifts up/left by half a pixel.
    pub fn from_weights(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 || data.len() != height * width {
            return Err(Error::InvalidInput(format!(
                "kernel of {height}x{width} needs {} values, got {}",
                height * width,
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "kernel entry {v} is not finite"
            )));
        }
        if let Some(v) = data.iter().find(|&&v| v < 0.0) {
            return Err(Error::InvalidInput(format!("kernel entry {v} is negative")));
        }
        let sum: f64 = data.iter().sum();
        if sum <= 0.0 {
            return Err(Error::InvalidInput("kernel is all zero".into()));
        }

        let out_h = height | 1;
        let out_w = width | 1;
        let mut padded = vec![0.0; out_h * out_w];
        for r in 0..height {
            for c in 0..width {
                padded[r * out_w + c] = data[r * width + c] / sum;
            }
        }
        Ok(Self {
            height: out_h,
            width: out_w,
            data: padded,
        })
    }

    /// The `size`x`size` identity kernel (`size` must be odd).
    pub fn delta(size: usize) -> Self {
        assert!(size % 2 == 1, "delta kernel needs an odd size");
        let mut data = vec![0.0; size * size];
        data[(size / 2) * size + size / 2] = 1.0;
        Self {
            height: size,
            width: size,
            data,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.width + col]
    }

    pub fn center(&self) -> (usize, usize) {
        (self.height / 2, self.width / 2)
    }

    /// The kernel rotated by 180 degrees.
    pub fn flipped(&self) -> Self {
        Self {
            height: self.height,
            width: self.width,
            data: self.data.iter().rev().copied().collect(),
        }
    }

    pub fn as_image(&self) -> Image {
        Image::new(self.height, self.width, self.data.clone()).expect("valid kernel")
    }
}

/// Loads a kernel from an image file (`.png`, `.pgm`, `.ppm`, `.pnm`) or a
/// whitespace-delimited text grid (any other extension). Color kernel images
/// are reduced to their luma plane.
pub fn load_kernel(path: impl AsRef<Path>) -> Result<Psf> {
    let path = path.as_ref();
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase());
    match ext.as_deref() {
        Some("png" | "pgm" | "ppm" | "pnm") => {
            let img = load_image(path)?.to_gray();
            Psf::from_weights(img.height(), img.width(), img.into_data())
        }
        _ => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            parse_kernel_text(&text)
        }
    }
}

/// Parses rows separated by newlines and entries by whitespace. Blank lines
/// and lines starting with `#` are ignored.
pub fn parse_kernel_text(text: &str) -> Result<Psf> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let row = line
            .split_whitespace()
            .map(|tok| {
                tok.parse::<f64>().map_err(|_| {
                    Error::InvalidInput(format!("line {}: cannot parse {tok:?}", lineno + 1))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(Error::InvalidInput(format!(
                    "line {}: expected {} entries, found {}",
                    lineno + 1,
                    first.len(),
                    row.len()
                )));
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::InvalidInput("kernel text has no rows".into()));
    }
    let (h, w) = (rows.len(), rows[0].len());
    Psf::from_weights(h, w, rows.concat())
}
