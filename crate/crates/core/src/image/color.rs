use super::{ColorImage, ColorSpace, Image};

// ITU-R BT.601 luma weights.
const KR: f64 = 0.299;
const KG: f64 = 0.587;
const KB: f64 = 0.114;
// 2(1 - KB) and 2(1 - KR).
const CB_SCALE: f64 = 1.772;
const CR_SCALE: f64 = 1.402;

/// Full-range BT.601 conversion between RGB and YCbCr. Chroma planes carry a
/// +0.5 offset so every plane lives in `[0, 1]`. Converting into the space
/// the image is already in returns it unchanged.
pub fn convert_color(img: &ColorImage, target: ColorSpace) -> ColorImage {
    if img.space() == target {
        return img.clone();
    }
    let [a, b, c] = img.planes();
    let (h, w) = img.shape();
    let n = h * w;
    let mut out = [vec![0.0; n], vec![0.0; n], vec![0.0; n]];
    for i in 0..n {
        let px = [a.data()[i], b.data()[i], c.data()[i]];
        let converted = match target {
            ColorSpace::YCbCr => rgb_to_ycbcr(px),
            ColorSpace::Rgb => ycbcr_to_rgb(px),
        };
        for (plane, v) in out.iter_mut().zip(converted) {
            plane[i] = v;
        }
    }
    let [p0, p1, p2] = out.map(|d| Image::new(h, w, d).expect("finite conversion"));
    ColorImage::new([p0, p1, p2], target).expect("planes share a shape")
}

fn rgb_to_ycbcr([r, g, b]: [f64; 3]) -> [f64; 3] {
    let y = KR * r + KG * g + KB * b;
    [y, 0.5 + (b - y) / CB_SCALE, 0.5 + (r - y) / CR_SCALE]
}

fn ycbcr_to_rgb([y, cb, cr]: [f64; 3]) -> [f64; 3] {
    let r = y + CR_SCALE * (cr - 0.5);
    let b = y + CB_SCALE * (cb - 0.5);
    let g = (y - KR * r - KB * b) / KG;
    [r, g, b]
}
