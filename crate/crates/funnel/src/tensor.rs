//! Dense rank-4 tensors in batch/channel/row/col (NCHW) order.
//!
//! Everything in the crate computes on this one value type: a flat `Vec<f64>`
//! in row-major n→c→h→w order. Tensors are immutable once an op returns them;
//! ops are pure functions. All arithmetic is `f64` so finite-difference
//! gradient checks have headroom.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::rng::Rng;

/// NCHW dimensions. Every dimension is at least 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Shape {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape {
    pub fn new(n: usize, c: usize, h: usize, w: usize) -> Result<Self> {
        if n == 0 || c == 0 || h == 0 || w == 0 {
            return Err(Error::InvalidShape(format!(
                "dimensions must be >= 1, got ({n},{c},{h},{w})"
            )));
        }
        Ok(Shape { n, c, h, w })
    }

    pub fn len(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    pub fn is_empty(&self) -> bool {
        false // every dimension is >= 1 by construction
    }

    /// Flat index of element (n, c, i, j).
    #[inline]
    pub fn index(&self, n: usize, c: usize, i: usize, j: usize) -> usize {
        ((n * self.c + c) * self.h + i) * self.w + j
    }
}

impl std::fmt::Display for Shape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({},{},{},{})", self.n, self.c, self.h, self.w)
    }
}

/// Reducible axes for `mean_axes` / `sum_axes`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    N,
    C,
    H,
    W,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Shape,
    data: Vec<f64>,
}

impl Tensor {
    /// All-zero tensor. Errors if any dimension is 0.
    pub fn zeros(n: usize, c: usize, h: usize, w: usize) -> Result<Tensor> {
        let shape = Shape::new(n, c, h, w)?;
        Ok(Tensor { data: vec![0.0; shape.len()], shape })
    }

    pub fn zeros_like(&self) -> Tensor {
        Tensor { shape: self.shape, data: vec![0.0; self.data.len()] }
    }

    pub fn filled(n: usize, c: usize, h: usize, w: usize, value: f64) -> Result<Tensor> {
        let shape = Shape::new(n, c, h, w)?;
        Ok(Tensor { data: vec![value; shape.len()], shape })
    }

    pub fn from_vec(n: usize, c: usize, h: usize, w: usize, data: Vec<f64>) -> Result<Tensor> {
        let shape = Shape::new(n, c, h, w)?;
        if data.len() != shape.len() {
            return Err(Error::InvalidShape(format!(
                "shape {shape} expects {} elements, got {}",
                shape.len(),
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    /// I.i.d. normal samples, deterministic for a given generator state.
    pub fn gaussian(
        n: usize,
        c: usize,
        h: usize,
        w: usize,
        mean: f64,
        std: f64,
        rng: &mut Rng,
    ) -> Result<Tensor> {
        if std < 0.0 || !std.is_finite() || !mean.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "gaussian requires finite mean and std >= 0, got mean={mean} std={std}"
            )));
        }
        let shape = Shape::new(n, c, h, w)?;
        let data = (0..shape.len()).map(|_| mean + std * rng.next_normal()).collect();
        Ok(Tensor { shape, data })
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn at(&self, n: usize, c: usize, i: usize, j: usize) -> f64 {
        self.data[self.shape.index(n, c, i, j)]
    }

    #[inline]
    pub fn set(&mut self, n: usize, c: usize, i: usize, j: usize, v: f64) {
        let idx = self.shape.index(n, c, i, j);
        self.data[idx] = v;
    }

    fn check_same_shape(&self, other: &Tensor, op: &str) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch(format!(
                "{op}: {} vs {}",
                self.shape, other.shape
            )));
        }
        Ok(())
    }

    /// Per-element maximum. Ties keep the left operand's value.
    pub fn elementwise_max(&self, other: &Tensor) -> Result<Tensor> {
        self.check_same_shape(other, "elementwise_max")?;
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| if a >= b { a } else { b })
            .collect();
        Ok(Tensor { shape: self.shape, data })
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.check_same_shape(other, "add")?;
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect();
        Ok(Tensor { shape: self.shape, data })
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.check_same_shape(other, "sub")?;
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect();
        Ok(Tensor { shape: self.shape, data })
    }

    pub fn mul_scalar(&self, s: f64) -> Tensor {
        Tensor { shape: self.shape, data: self.data.iter().map(|v| v * s).collect() }
    }

    /// Per-element product (used by gradient plumbing).
    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.check_same_shape(other, "mul")?;
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a * b).collect();
        Ok(Tensor { shape: self.shape, data })
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor { shape: self.shape, data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn mean_all(&self) -> f64 {
        self.sum() / self.data.len() as f64
    }

    /// Dot product of two equally shaped tensors.
    pub fn dot(&self, other: &Tensor) -> Result<f64> {
        self.check_same_shape(other, "dot")?;
        Ok(self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum())
    }

    /// Mean over the listed axes; reduced axes keep size 1.
    pub fn mean_axes(&self, axes: &[Axis]) -> Tensor {
        let mut out = self.sum_axes(axes);
        let mut count = 1usize;
        for &a in axes {
            count *= match a {
                Axis::N => self.shape.n,
                Axis::C => self.shape.c,
                Axis::H => self.shape.h,
                Axis::W => self.shape.w,
            };
        }
        let inv = 1.0 / count as f64;
        for v in out.data.iter_mut() {
            *v *= inv;
        }
        out
    }

    /// Sum over the listed axes; reduced axes keep size 1.
    pub fn sum_axes(&self, axes: &[Axis]) -> Tensor {
        let red_n = axes.contains(&Axis::N);
        let red_c = axes.contains(&Axis::C);
        let red_h = axes.contains(&Axis::H);
        let red_w = axes.contains(&Axis::W);
        let os = Shape {
            n: if red_n { 1 } else { self.shape.n },
            c: if red_c { 1 } else { self.shape.c },
            h: if red_h { 1 } else { self.shape.h },
            w: if red_w { 1 } else { self.shape.w },
        };
        let mut out = Tensor { shape: os, data: vec![0.0; os.len()] };
        for n in 0..self.shape.n {
            for c in 0..self.shape.c {
                for i in 0..self.shape.h {
                    for j in 0..self.shape.w {
                        let dst = os.index(
                            if red_n { 0 } else { n },
                            if red_c { 0 } else { c },
                            if red_h { 0 } else { i },
                            if red_w { 0 } else { j },
                        );
                        out.data[dst] += self.at(n, c, i, j);
                    }
                }
            }
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    // ---- FNK1 binary serialization -------------------------------------
    //
    // Little-endian: magic "FNK1", four u32 dims (n,c,h,w), then n*c*h*w
    // f64 values. Used by checkpoints and golden-file tests.

    pub const MAGIC: &'static [u8; 4] = b"FNK1";

    pub fn write_fnk1<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(Self::MAGIC)?;
        for d in [self.shape.n, self.shape.c, self.shape.h, self.shape.w] {
            let d = u32::try_from(d).map_err(|_| {
                Error::InvalidShape(format!("dimension {d} exceeds u32 range"))
            })?;
            w.write_all(&d.to_le_bytes())?;
        }
        for v in &self.data {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_fnk1<R: Read>(r: &mut R) -> Result<Tensor> {
        let mut offset = 0u64;
        let mut magic = [0u8; 4];
        read_exact_at(r, &mut magic, &mut offset)?;
        if &magic != Self::MAGIC {
            return Err(Error::Format {
                offset: 0,
                msg: format!("bad magic {magic:?}, expected {:?}", Self::MAGIC),
            });
        }
        let mut dims = [0usize; 4];
        for d in dims.iter_mut() {
            let mut buf = [0u8; 4];
            read_exact_at(r, &mut buf, &mut offset)?;
            *d = u32::from_le_bytes(buf) as usize;
        }
        let shape = Shape::new(dims[0], dims[1], dims[2], dims[3]).map_err(|e| Error::Format {
            offset: 4,
            msg: e.to_string(),
        })?;
        let mut data = Vec::with_capacity(shape.len());
        for _ in 0..shape.len() {
            let mut buf = [0u8; 8];
            read_exact_at(r, &mut buf, &mut offset)?;
            data.push(f64::from_le_bytes(buf));
        }
        Ok(Tensor { shape, data })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_fnk1(&mut f)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Tensor> {
        let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
        Tensor::read_fnk1(&mut f)
    }
}

fn read_exact_at<R: Read>(r: &mut R, buf: &mut [u8], offset: &mut u64) -> Result<()> {
    r.read_exact(buf).map_err(|e| Error::Format {
        offset: *offset,
        msg: format!("truncated read of {} bytes: {e}", buf.len()),
    })?;
    *offset += buf.len() as u64;
    Ok(())
}
