use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::manifest::{CaseSpec, DatasetManifest};
use super::synth::{motion_kernel, procedural_scene};
use crate::error::{Error, Result};
use crate::fft_conv::Psf;
use crate::image::save_image;

/// Plain-text kernel, one row per line, values printed exactly.
pub fn kernel_to_text(psf: &Psf) -> String {
    let mut s = String::new();
    for r in 0..psf.height() {
        let row: Vec<String> = (0..psf.width())
            .map(|c| format!("{:?}", psf.get(r, c)))
            .collect();
        writeln!(s, "{}", row.join(" ")).expect("writing to a string");
    }
    s
}

/// What [`write_synthetic_dataset`] generates.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDataset {
    pub images: usize,
    /// Odd side length of each motion kernel.
    pub kernel_sizes: Vec<usize>,
    pub image_size: usize,
    pub noise: f64,
    pub seed: u64,
}

impl Default for SyntheticDataset {
    fn default() -> Self {
        Self {
            images: 4,
            kernel_sizes: vec![13, 15, 17, 19, 21, 23, 25, 27],
            image_size: 255,
            noise: 0.01,
            seed: 0,
        }
    }
}

/// Writes procedural scenes, motion kernels and `manifest.json` (every
/// image paired with every kernel) into `dir`.
pub fn write_synthetic_dataset(
    dir: impl AsRef<Path>,
    spec: &SyntheticDataset,
) -> Result<DatasetManifest> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut cases = Vec::new();
    for (k, &size) in spec.kernel_sizes.iter().enumerate() {
        let psf = motion_kernel(
            size,
            spec.seed.wrapping_mul(1000).wrapping_add(500 + k as u64),
        )?;
        let path = dir.join(format!("kernel{k}.txt"));
        fs::write(&path, kernel_to_text(&psf)).map_err(|e| Error::io(&path, e))?;
    }
    for i in 0..spec.images {
        let n = spec.image_size;
        let scene = procedural_scene(n, n, spec.seed.wrapping_mul(1000).wrapping_add(i as u64));
        save_image(&scene, dir.join(format!("image{i}.png")))?;
        for k in 0..spec.kernel_sizes.len() {
            cases.push(CaseSpec {
                name: Some(format!("im{i}_k{k}")),
                ground_truth: Some(format!("image{i}.png").into()),
                blurred: None,
                kernel: format!("kernel{k}.txt").into(),
                noise: spec.noise,
            });
        }
    }
    let manifest = DatasetManifest::new(cases, dir);
    manifest.save(dir.join("manifest.json"))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fft_conv::{load_kernel, parse_kernel_text};

    #[test]
    fn kernel_text_round_trip() {
        let k = motion_kernel(11, 3).unwrap();
        let back = parse_kernel_text(&kernel_to_text(&k)).unwrap();
        assert_eq!(back.shape(), k.shape());
        for (a, b) in back.data().iter().zip(k.data()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn dataset_layout() {
        let dir = tempfile::tempdir().unwrap();
        let spec = SyntheticDataset {
            images: 2,
            kernel_sizes: vec![5, 7],
            image_size: 24,
            ..SyntheticDataset::default()
        };
        let m = write_synthetic_dataset(dir.path(), &spec).unwrap();
        assert_eq!(m.cases.len(), 4);
        let loaded = DatasetManifest::load(dir.path().join("manifest.json")).unwrap();
        assert_eq!(loaded.cases, m.cases);
        assert_eq!(
            load_kernel(dir.path().join("kernel1.txt")).unwrap().shape(),
            (7, 7)
        );
        assert!(dir.path().join("image1.png").exists());
    }
}
