//! Dense rank-4 tensors in NCHW layout and their binary checkpoint format.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Extents of a rank-4 tensor: batch, channels, height, width.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Shape(pub [usize; 4]);

impl Shape {
    pub const fn new(n: usize, c: usize, h: usize, w: usize) -> Self {
        Shape([n, c, h, w])
    }

    pub const fn scalar() -> Self {
        Shape([1, 1, 1, 1])
    }

    pub fn n(&self) -> usize {
        self.0[0]
    }
    pub fn c(&self) -> usize {
        self.0[1]
    }
    pub fn h(&self) -> usize {
        self.0[2]
    }
    pub fn w(&self) -> usize {
        self.0[3]
    }

    pub fn numel(&self) -> usize {
        self.0.iter().product()
    }

    /// Elements per spatial plane.
    pub fn plane(&self) -> usize {
        self.h() * self.w()
    }

    pub fn to_vec(&self) -> Vec<usize> {
        self.0.to_vec()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Shape,
    data: Vec<f64>,
    grad: Option<Vec<f64>>,
    requires_grad: bool,
}

impl Tensor {
    pub fn from_vec(shape: Shape, data: Vec<f64>) -> Result<Self> {
        if shape.numel() != data.len() {
            return Err(Error::config(format!(
                "shape {:?} holds {} values, buffer has {}",
                shape.0,
                shape.numel(),
                data.len()
            )));
        }
        Ok(Tensor {
            shape,
            data,
            grad: None,
            requires_grad: false,
        })
    }

    pub fn zeros(shape: Shape) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn ones(shape: Shape) -> Self {
        Self::full(shape, 1.0)
    }

    pub fn full(shape: Shape, value: f64) -> Self {
        Tensor {
            shape,
            data: vec![value; shape.numel()],
            grad: None,
            requires_grad: false,
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self::full(Shape::scalar(), value)
    }

    /// Standard-normal entries scaled by `std`.
    pub fn randn<R: Rng + ?Sized>(shape: Shape, std: f64, rng: &mut R) -> Self {
        use rand_distr::{Distribution, StandardNormal};
        let data = (0..shape.numel())
            .map(|_| {
                let z: f64 = StandardNormal.sample(rng);
                z * std
            })
            .collect();
        Tensor {
            shape,
            data,
            grad: None,
            requires_grad: false,
        }
    }

    pub fn with_requires_grad(mut self, flag: bool) -> Self {
        self.requires_grad = flag;
        self
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn grad(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }

    pub fn zero_grad(&mut self) {
        self.grad = None;
    }

    /// Adds `delta` into the gradient buffer, allocating it on first use.
    pub fn accumulate_grad(&mut self, delta: &[f64]) {
        debug_assert_eq!(delta.len(), self.data.len());
        match &mut self.grad {
            Some(g) => g.iter_mut().zip(delta).for_each(|(a, b)| *a += b),
            None => self.grad = Some(delta.to_vec()),
        }
    }

    pub fn item(&self) -> f64 {
        self.data[0]
    }

    pub fn index(&self, n: usize, c: usize, h: usize, w: usize) -> usize {
        let [_, cc, hh, ww] = self.shape.0;
        ((n * cc + c) * hh + h) * ww + w
    }

    pub fn at(&self, n: usize, c: usize, h: usize, w: usize) -> f64 {
        self.data[self.index(n, c, h, w)]
    }

    /// The contiguous `h*w` plane of sample `n`, channel `c`.
    pub fn plane(&self, n: usize, c: usize) -> &[f64] {
        let p = self.shape.plane();
        let start = (n * self.shape.c() + c) * p;
        &self.data[start..start + p]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Stacks single-sample tensors of equal shape along the batch axis.
    pub fn stack(items: &[&Tensor]) -> Result<Tensor> {
        let first = items
            .first()
            .ok_or_else(|| Error::config("cannot stack an empty list"))?;
        let s = first.shape;
        let mut data = Vec::with_capacity(s.numel() * items.len());
        let mut n = 0;
        for t in items {
            let ts = t.shape;
            if ts.c() != s.c() || ts.h() != s.h() || ts.w() != s.w() {
                return Err(Error::ShapeMismatch {
                    op: "stack",
                    left: s.to_vec(),
                    right: ts.to_vec(),
                });
            }
            n += ts.n();
            data.extend_from_slice(&t.data);
        }
        Tensor::from_vec(Shape::new(n, s.c(), s.h(), s.w()), data)
    }

    /// Encodes as `DRT1`, four little-endian u64 extents, then the f64 values.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(4 + 32 + 8 * self.data.len());
        out.extend_from_slice(MAGIC);
        for e in self.shape.0 {
            out.extend_from_slice(&(e as u64).to_le_bytes());
        }
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    /// Decodes one record from the front of `bytes`, returning it with the
    /// number of bytes consumed.
    pub fn from_bytes(bytes: &[u8]) -> Result<(Tensor, usize)> {
        if bytes.len() < 36 || &bytes[..4] != MAGIC {
            return Err(Error::config("tensor record does not start with DRT1"));
        }
        let mut dims = [0usize; 4];
        for (i, d) in dims.iter_mut().enumerate() {
            let off = 4 + 8 * i;
            let raw = u64::from_le_bytes(bytes[off..off + 8].try_into().unwrap());
            *d = usize::try_from(raw).map_err(|_| Error::config("tensor extent overflows"))?;
        }
        let shape = Shape(dims);
        let n = shape.numel();
        let end = 36 + 8 * n;
        if bytes.len() < end {
            return Err(Error::config(format!(
                "tensor record truncated: need {end} bytes, have {}",
                bytes.len()
            )));
        }
        let data = bytes[36..end]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok((Tensor::from_vec(shape, data)?, end))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Tensor> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Ok(Tensor::from_bytes(&bytes)?.0)
    }
}

const MAGIC: &[u8; 4] = b"DRT1";

/// One entry of a parameter manifest: the tensor name and its byte offset in
/// the accompanying blob.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    pub offset: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
}

/// Writes named tensors as a manifest (JSON) plus one concatenated blob.
pub fn save_named(tensors: &[(String, &Tensor)], manifest: &Path, blob: &Path) -> Result<()> {
    let mut bytes = Vec::new();
    let mut m = Manifest::default();
    for (name, t) in tensors {
        m.entries.push(ManifestEntry {
            name: name.clone(),
            offset: bytes.len() as u64,
        });
        bytes.extend_from_slice(&t.to_bytes());
    }
    let mut f = fs::File::create(blob).map_err(|e| Error::io(blob, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(blob, e))?;
    let text = serde_json::to_string_pretty(&m)?;
    fs::write(manifest, text).map_err(|e| Error::io(manifest, e))
}

pub fn load_named(manifest: &Path, blob: &Path) -> Result<Vec<(String, Tensor)>> {
    let text = fs::read_to_string(manifest).map_err(|e| Error::io(manifest, e))?;
    let m: Manifest = serde_json::from_str(&text)?;
    let mut bytes = Vec::new();
    fs::File::open(blob)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(blob, e))?;
    m.entries
        .into_iter()
        .map(|e| {
            let off = e.offset as usize;
            if off >= bytes.len() {
                return Err(Error::config(format!(
                    "manifest offset {off} for {} is past the blob end",
                    e.name
                )));
            }
            let (t, _) = Tensor::from_bytes(&bytes[off..])?;
            Ok((e.name, t))
        })
        .collect()
}
