//! Datasets: the synthetic layout classification task and IDX-format
//! ingestion/export.
//!
//! Synthetic images are quantized to the 8-bit grid at generation time, so
//! exporting them as IDX bytes and reloading reproduces the tensors exactly.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::shapes;
use crate::tensor::Tensor;

pub const SYNTH_CLASSES: [&str; 4] = ["bar", "oblique", "arc", "blob"];

/// Labeled image set; images are (N, 1, h, w) with values in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub images: Tensor,
    pub labels: Vec<usize>,
    pub num_classes: usize,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// First n samples and the rest, as independent datasets.
    pub fn split_at(&self, n: usize) -> Result<(Dataset, Dataset)> {
        if n == 0 || n >= self.len() {
            return Err(Error::InvalidArgument(format!(
                "split point {n} outside 1..{}",
                self.len()
            )));
        }
        let s = self.images.shape();
        let plane = s.c * s.h * s.w;
        let head = Tensor::from_vec(n, s.c, s.h, s.w, self.images.data()[..n * plane].to_vec())?;
        let tail = Tensor::from_vec(
            s.n - n,
            s.c,
            s.h,
            s.w,
            self.images.data()[n * plane..].to_vec(),
        )?;
        Ok((
            Dataset { images: head, labels: self.labels[..n].to_vec(), num_classes: self.num_classes },
            Dataset { images: tail, labels: self.labels[n..].to_vec(), num_classes: self.num_classes },
        ))
    }

    /// Copy the listed samples into a batch tensor plus labels.
    pub fn batch(&self, indices: &[usize]) -> Result<(Tensor, Vec<usize>)> {
        let s = self.images.shape();
        let plane = s.c * s.h * s.w;
        let mut data = Vec::with_capacity(indices.len() * plane);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            if i >= self.len() {
                return Err(Error::Index(format!("sample {i} outside 0..{}", self.len())));
            }
            data.extend_from_slice(&self.images.data()[i * plane..(i + 1) * plane]);
            labels.push(self.labels[i]);
        }
        Ok((Tensor::from_vec(indices.len(), s.c, s.h, s.w, data)?, labels))
    }
}

/// Pixel noise added to every synthetic image before quantization.
pub const SYNTH_NOISE_STD: f64 = 0.35;

/// 4-class layout classification: axis-aligned bar, oblique line, arc, blob,
/// rendered at random positions/orientations/thicknesses with gaussian pixel
/// noise, quantized to 8 bits. Deterministic for a given seed.
pub fn synth_layouts(n_samples: usize, image_size: usize, rng: &mut Rng) -> Result<Dataset> {
    if image_size < 16 {
        return Err(Error::InvalidArgument(format!(
            "image size must be >= 16, got {image_size}"
        )));
    }
    if n_samples == 0 {
        return Err(Error::InvalidArgument("need at least one sample".into()));
    }
    let (h, w) = (image_size, image_size);
    let mut data = Vec::with_capacity(n_samples * h * w);
    let mut labels = Vec::with_capacity(n_samples);
    for _ in 0..n_samples {
        let class = rng.next_below(4);
        let raster = match class {
            0 => shapes::random_bar(h, w, (2, 4), rng),
            1 => shapes::random_oblique(h, w, (1.0, 2.2), rng),
            2 => shapes::random_arc(h, w, (1.6, 3.2), rng),
            _ => shapes::random_blob(h, w, (2.5, 5.5), rng),
        };
        let intensity = rng.range_f64(0.6, 1.0);
        for cell in &raster.cells {
            let fg = if *cell { intensity } else { 0.0 };
            let v = (fg + SYNTH_NOISE_STD * rng.next_normal()).clamp(0.0, 1.0);
            data.push((v * 255.0).round() / 255.0);
        }
        labels.push(class);
    }
    Ok(Dataset {
        images: Tensor::from_vec(n_samples, 1, h, w, data)?,
        labels,
        num_classes: 4,
    })
}

// ---- IDX format ----------------------------------------------------------
//
// Big-endian container: images carry magic 0x00000803 and dims (n, h, w) as
// u32, then unsigned bytes; labels carry magic 0x00000801 and (n,).

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

struct Offset(u64);

fn read_u32_be<R: Read>(r: &mut R, off: &mut Offset) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf).map_err(|e| Error::Format {
        offset: off.0,
        msg: format!("truncated u32: {e}"),
    })?;
    off.0 += 4;
    Ok(u32::from_be_bytes(buf))
}

/// Parse an IDX image file into a (n, 1, h, w) tensor normalized to [0, 1].
pub fn load_idx_images(path: &Path) -> Result<Tensor> {
    let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut off = Offset(0);
    let magic = read_u32_be(&mut r, &mut off)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::Format {
            offset: 0,
            msg: format!("bad image magic {magic:#010x}, expected {IDX_IMAGES_MAGIC:#010x}"),
        });
    }
    let n = read_u32_be(&mut r, &mut off)? as usize;
    let h = read_u32_be(&mut r, &mut off)? as usize;
    let w = read_u32_be(&mut r, &mut off)? as usize;
    let mut bytes = vec![0u8; n * h * w];
    let mut filled = 0usize;
    while filled < bytes.len() {
        let got = r.read(&mut bytes[filled..])?;
        if got == 0 {
            return Err(Error::Format {
                offset: off.0 + filled as u64,
                msg: format!("truncated pixel data: expected {} bytes", bytes.len()),
            });
        }
        filled += got;
    }
    let data = bytes.iter().map(|&b| b as f64 / 255.0).collect();
    Tensor::from_vec(n, 1, h, w, data)
}

/// Parse an IDX label file.
pub fn load_idx_labels(path: &Path) -> Result<Vec<usize>> {
    let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut off = Offset(0);
    let magic = read_u32_be(&mut r, &mut off)?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::Format {
            offset: 0,
            msg: format!("bad label magic {magic:#010x}, expected {IDX_LABELS_MAGIC:#010x}"),
        });
    }
    let n = read_u32_be(&mut r, &mut off)? as usize;
    let mut bytes = vec![0u8; n];
    let mut filled = 0usize;
    while filled < bytes.len() {
        let got = r.read(&mut bytes[filled..])?;
        if got == 0 {
            return Err(Error::Format {
                offset: off.0 + filled as u64,
                msg: format!("truncated label data: expected {n} bytes"),
            });
        }
        filled += got;
    }
    Ok(bytes.iter().map(|&b| b as usize).collect())
}

/// Load a paired image/label IDX dataset.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset> {
    let images = load_idx_images(images_path)?;
    let labels = load_idx_labels(labels_path)?;
    if images.shape().n != labels.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} images vs {} labels",
            images.shape().n,
            labels.len()
        )));
    }
    let num_classes = labels.iter().copied().max().unwrap_or(0) + 1;
    Ok(Dataset { images, labels, num_classes })
}

/// Write images as IDX bytes (values scaled by 255 and rounded).
pub fn write_idx_images(images: &Tensor, path: &Path) -> Result<()> {
    let s = images.shape();
    if s.c != 1 {
        return Err(Error::InvalidArgument(format!(
            "IDX images are single channel, got {} channels",
            s.c
        )));
    }
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    f.write_all(&IDX_IMAGES_MAGIC.to_be_bytes())?;
    for d in [s.n, s.h, s.w] {
        f.write_all(&(d as u32).to_be_bytes())?;
    }
    for &v in images.data() {
        f.write_all(&[(v * 255.0).round().clamp(0.0, 255.0) as u8])?;
    }
    Ok(())
}

pub fn write_idx_labels(labels: &[usize], path: &Path) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    f.write_all(&IDX_LABELS_MAGIC.to_be_bytes())?;
    f.write_all(&(labels.len() as u32).to_be_bytes())?;
    for &l in labels {
        if l > 255 {
            return Err(Error::InvalidArgument(format!("label {l} exceeds one byte")));
        }
        f.write_all(&[l as u8])?;
    }
    Ok(())
}

/// Export a dataset as `<stem>-images.idx3-ubyte` / `<stem>-labels.idx1-ubyte`.
pub fn export_idx(ds: &Dataset, dir: &Path, stem: &str) -> Result<(std::path::PathBuf, std::path::PathBuf)> {
    std::fs::create_dir_all(dir)?;
    let images_path = dir.join(format!("{stem}-images.idx3-ubyte"));
    let labels_path = dir.join(format!("{stem}-labels.idx1-ubyte"));
    write_idx_images(&ds.images, &images_path)?;
    write_idx_labels(&ds.labels, &labels_path)?;
    Ok((images_path, labels_path))
}
