use std::path::{Path, PathBuf};

use super::{Inputs, Sample, StepTargets};
use crate::error::{Error, Result};
use crate::linalg::Rng;

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;
pub const PIXELS: usize = 784;
const CLASSES: u8 = 10;
const VALID_HOLDOUT: usize = 10_000;

/// Images stored as raw bytes, row-major, one image after another.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageSet {
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<u8>,
    pub labels: Vec<u8>,
}

impl ImageSet {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn image_size(&self) -> usize {
        self.rows * self.cols
    }

    pub fn image(&self, i: usize) -> &[u8] {
        let s = self.image_size();
        &self.pixels[i * s..(i + 1) * s]
    }

    /// Pixel values of image `i` scaled to `[0, 1]`.
    pub fn scaled(&self, i: usize) -> Vec<f64> {
        self.image(i).iter().map(|p| *p as f64 / 255.0).collect()
    }

    /// Images `start..end` as a new set.
    pub fn slice(&self, start: usize, end: usize) -> ImageSet {
        let s = self.image_size();
        ImageSet {
            rows: self.rows,
            cols: self.cols,
            pixels: self.pixels[start * s..end * s].to_vec(),
            labels: self.labels[start..end].to_vec(),
        }
    }

    pub fn truncated(&self, count: usize) -> ImageSet {
        self.slice(0, count.min(self.len()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MnistData {
    pub train: ImageSet,
    pub valid: ImageSet,
    pub test: ImageSet,
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    name: &'a str,
}

impl Reader<'_> {
    fn u32(&mut self, field: &str) -> Result<u32> {
        let end = self.pos + 4;
        let b = self.bytes.get(self.pos..end).ok_or_else(|| self.error(format!("truncated before {field}")))?;
        self.pos = end;
        Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn payload(&mut self, len: usize) -> Result<&[u8]> {
        let end = self.pos + len;
        if self.bytes.len() < end {
            return Err(self.error(format!(
                "truncated payload: expected {len} bytes, found {}",
                self.bytes.len() - self.pos
            )));
        }
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn error(&self, message: String) -> Error {
        Error::format(format!("{} byte {}", self.name, self.pos), message)
    }
}

fn magic(r: &mut Reader, expected: u32) -> Result<()> {
    let m = r.u32("magic")?;
    if m != expected {
        r.pos = 0;
        return Err(r.error(format!("bad magic 0x{m:08x}, expected 0x{expected:08x}")));
    }
    Ok(())
}

/// Parses an IDX image file: `(count, rows, cols, pixels)`.
pub fn parse_idx_images(bytes: &[u8], name: &str) -> Result<(usize, usize, usize, Vec<u8>)> {
    let mut r = Reader { bytes, pos: 0, name };
    magic(&mut r, IMAGES_MAGIC)?;
    let count = r.u32("image count")? as usize;
    let rows = r.u32("row count")? as usize;
    let cols = r.u32("column count")? as usize;
    let pixels = r.payload(count * rows * cols)?.to_vec();
    Ok((count, rows, cols, pixels))
}

/// Parses an IDX label file.
pub fn parse_idx_labels(bytes: &[u8], name: &str) -> Result<Vec<u8>> {
    let mut r = Reader { bytes, pos: 0, name };
    magic(&mut r, LABELS_MAGIC)?;
    let count = r.u32("label count")? as usize;
    let labels = r.payload(count)?.to_vec();
    if let Some(i) = labels.iter().position(|l| *l >= CLASSES) {
        r.pos = 8 + i;
        return Err(r.error(format!("label {} out of range", labels[i])));
    }
    Ok(labels)
}

pub fn load_mnist_idx(images_path: &Path, labels_path: &Path) -> Result<ImageSet> {
    let img_name = images_path.display().to_string();
    let lbl_name = labels_path.display().to_string();
    let (count, rows, cols, pixels) = parse_idx_images(&std::fs::read(images_path)?, &img_name)?;
    let labels = parse_idx_labels(&std::fs::read(labels_path)?, &lbl_name)?;
    if labels.len() != count {
        return Err(Error::format(
            format!("{lbl_name} byte 4"),
            format!("{} labels for {count} images in {img_name}", labels.len()),
        ));
    }
    Ok(ImageSet { rows, cols, pixels, labels })
}

fn find(dir: &Path, stem: &str) -> Result<PathBuf> {
    let candidates = [
        format!("{stem}-ubyte"),
        format!("{}.{}-ubyte", &stem[..stem.len() - 5], &stem[stem.len() - 4..]),
    ];
    for c in &candidates {
        let p = dir.join(c);
        if p.is_file() {
            return Ok(p);
        }
    }
    Err(Error::Io(std::io::Error::new(
        std::io::ErrorKind::NotFound,
        format!("{} not found in {}", candidates[0], dir.display()),
    )))
}

/// Loads the four standard files from `dir`. The last 10,000 training
/// images become the validation set.
pub fn load_mnist_dir(dir: &Path) -> Result<MnistData> {
    let full = load_mnist_idx(&find(dir, "train-images-idx3")?, &find(dir, "train-labels-idx1")?)?;
    let test = load_mnist_idx(&find(dir, "t10k-images-idx3")?, &find(dir, "t10k-labels-idx1")?)?;
    if full.len() <= VALID_HOLDOUT {
        return Err(Error::Degenerate(format!(
            "training file has {} images, need more than {VALID_HOLDOUT}",
            full.len()
        )));
    }
    let cut = full.len() - VALID_HOLDOUT;
    Ok(MnistData {
        train: full.slice(0, cut),
        valid: full.slice(cut, full.len()),
        test,
    })
}

/// Pixel order shared by every sample of a sequential MNIST run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SeqMnistSpec {
    pub permutation: Vec<usize>,
    pub permutation_seed: u64,
}

impl SeqMnistSpec {
    /// Raster order when `permute` is false, otherwise a permutation drawn
    /// from `seed`.
    pub fn new(permute: bool, seed: u64) -> Self {
        let permutation = if permute {
            Rng::new(seed).fork("pixel-permutation").permutation(PIXELS)
        } else {
            (0..PIXELS).collect()
        };
        SeqMnistSpec { permutation, permutation_seed: seed }
    }
}

/// One pixel per step in permutation order; the class is predicted at the
/// last step.
pub fn to_pixel_sequence(image: &[u8], label: u8, spec: &SeqMnistSpec) -> Result<Sample> {
    if image.len() != spec.permutation.len() {
        return Err(Error::Config(format!(
            "image has {} pixels, permutation covers {}",
            image.len(),
            spec.permutation.len()
        )));
    }
    let t = image.len();
    let pixels = spec.permutation.iter().map(|i| image[*i]).collect();
    let mut targets = vec![0u8; t];
    targets[t - 1] = label;
    let mut mask = vec![false; t];
    mask[t - 1] = true;
    Sample::new(Inputs::Pixels(pixels), StepTargets::Classes(targets), mask)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn images_fixture() -> Vec<u8> {
        let mut b = vec![0, 0, 8, 3, 0, 0, 0, 2, 0, 0, 0, 2, 0, 0, 0, 3];
        b.extend([0, 1, 2, 3, 4, 5, 250, 251, 252, 253, 254, 255]);
        b
    }

    fn labels_fixture() -> Vec<u8> {
        vec![0, 0, 8, 1, 0, 0, 0, 2, 7, 3]
    }

    #[test]
    fn fixture_round_trip() {
        let (count, rows, cols, pixels) = parse_idx_images(&images_fixture(), "img").unwrap();
        assert_eq!((count, rows, cols), (2, 2, 3));
        assert_eq!(pixels, vec![0, 1, 2, 3, 4, 5, 250, 251, 252, 253, 254, 255]);
        assert_eq!(parse_idx_labels(&labels_fixture(), "lbl").unwrap(), vec![7, 3]);

        let dir = tempfile::tempdir().unwrap();
        let ip = dir.path().join("i");
        let lp = dir.path().join("l");
        std::fs::write(&ip, images_fixture()).unwrap();
        std::fs::write(&lp, labels_fixture()).unwrap();
        let set = load_mnist_idx(&ip, &lp).unwrap();
        assert_eq!(set.image(1), &[250, 251, 252, 253, 254, 255]);
        assert_eq!(set.scaled(1)[5], 1.0);
        assert_eq!(set.scaled(0)[0], 0.0);
    }

    #[test]
    fn wrong_magic() {
        let mut lbl = labels_fixture();
        lbl[3] = 3;
        let err = parse_idx_labels(&lbl, "lbl").unwrap_err();
        match err {
            Error::Format { location, message } => {
                assert_eq!(location, "lbl byte 0");
                assert!(message.contains("0x00000803"));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn truncated_payload_reports_offset() {
        let img = images_fixture();
        let err = parse_idx_images(&img[..20], "img").unwrap_err();
        let Error::Format { location, .. } = err else { panic!() };
        assert_eq!(location, "img byte 16");
        let err = parse_idx_images(&img[..6], "img").unwrap_err();
        let Error::Format { location, message } = err else { panic!() };
        assert_eq!(location, "img byte 4");
        assert!(message.contains("image count"));
    }

    #[test]
    fn count_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let ip = dir.path().join("i");
        let lp = dir.path().join("l");
        std::fs::write(&ip, images_fixture()).unwrap();
        std::fs::write(&lp, [0, 0, 8, 1, 0, 0, 0, 1, 4]).unwrap();
        assert!(matches!(load_mnist_idx(&ip, &lp), Err(Error::Format { .. })));
    }

    #[test]
    fn label_range_checked() {
        let mut lbl = labels_fixture();
        lbl[9] = 10;
        let Error::Format { location, .. } = parse_idx_labels(&lbl, "lbl").unwrap_err() else { panic!() };
        assert_eq!(location, "lbl byte 9");
    }

    #[test]
    fn permutation_is_bijection_and_fixed() {
        let spec = SeqMnistSpec::new(true, 11);
        let mut sorted = spec.permutation.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..PIXELS).collect::<Vec<_>>());
        assert_eq!(spec, SeqMnistSpec::new(true, 11));
        assert_ne!(spec, SeqMnistSpec::new(true, 12));
    }

    #[test]
    fn pixel_sequences() {
        let image: Vec<u8> = (0..PIXELS).map(|i| (i * 7 % 256) as u8).collect();
        let raster = to_pixel_sequence(&image, 4, &SeqMnistSpec::new(false, 0)).unwrap();
        assert_eq!(raster.inputs, Inputs::Pixels(image.clone()));
        assert_eq!(raster.mask.iter().filter(|m| **m).count(), 1);
        assert!(raster.mask[PIXELS - 1]);

        let spec = SeqMnistSpec::new(true, 3);
        let a = to_pixel_sequence(&image, 4, &spec).unwrap();
        let b = to_pixel_sequence(&image, 4, &spec).unwrap();
        assert_eq!(a, b);
        let other = to_pixel_sequence(&image, 4, &SeqMnistSpec::new(true, 4)).unwrap();
        assert_ne!(a.inputs, other.inputs);

        let Inputs::Pixels(mut seq) = a.inputs else { panic!() };
        let mut orig = image.clone();
        seq.sort_unstable();
        orig.sort_unstable();
        assert_eq!(seq, orig);
        assert!(to_pixel_sequence(&image[..10], 0, &spec).is_err());
    }
}
