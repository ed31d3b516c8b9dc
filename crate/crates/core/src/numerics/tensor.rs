//! Dense f32 tensors and the KTEN binary interchange format.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! offset  size        field
//! 0       4           magic  b"KTEN"
//! 4       1           version (1)
//! 5       1           rank r
//! 6       4*r         dims, u32 each
//! 6+4r    4*prod(dims) payload, f32 row-major
//! ```

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{KawhiError, Result};

pub const KTEN_MAGIC: &[u8; 4] = b"KTEN";
pub const KTEN_VERSION: u8 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if data.len() != expected {
            return Err(KawhiError::invalid(format!(
                "tensor data length {} does not match shape {:?} (expected {})",
                data.len(),
                shape,
                expected
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            data: vec![0.0; n],
        }
    }

    pub fn scalar(value: f32) -> Self {
        Self {
            shape: Vec::new(),
            data: vec![value],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    /// Row-major offset of a full index.
    pub fn offset(&self, index: &[usize]) -> usize {
        debug_assert_eq!(index.len(), self.shape.len());
        index.iter().zip(&self.shape).fold(0, |acc, (&i, &n)| {
            debug_assert!(i < n);
            acc * n + i
        })
    }

    pub fn get(&self, index: &[usize]) -> f32 {
        self.data[self.offset(index)]
    }

    /// Contiguous slice covering all trailing axes at a leading index prefix.
    pub fn slice(&self, prefix: &[usize]) -> &[f32] {
        let inner: usize = self.shape[prefix.len()..].iter().product();
        let mut start = 0;
        for (&i, &n) in prefix.iter().zip(&self.shape) {
            start = start * n + i;
        }
        let start = start * inner;
        &self.data[start..start + inner]
    }

    pub fn first_non_finite(&self) -> Option<usize> {
        self.data.iter().position(|v| !v.is_finite())
    }

    pub fn encode(&self, mut w: impl Write) -> Result<()> {
        if let Some(i) = self.first_non_finite() {
            return Err(KawhiError::Numeric {
                index: i,
                detail: "non-finite value cannot be written".into(),
            });
        }
        let rank = u8::try_from(self.shape.len()).map_err(|_| KawhiError::format("rank", "rank exceeds 255"))?;
        let mut buf = Vec::with_capacity(6 + 4 * self.shape.len() + 4 * self.data.len());
        buf.extend_from_slice(KTEN_MAGIC);
        buf.push(KTEN_VERSION);
        buf.push(rank);
        for &d in &self.shape {
            let d = u32::try_from(d).map_err(|_| KawhiError::format("dims", format!("extent {d} exceeds u32")))?;
            buf.extend_from_slice(&d.to_le_bytes());
        }
        for &v in &self.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf).map_err(|e| KawhiError::io("<writer>", e))
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 4 {
            return Err(KawhiError::format("magic", "truncated before magic"));
        }
        if &bytes[..4] != KTEN_MAGIC {
            return Err(KawhiError::format(
                "magic",
                format!("expected \"KTEN\", found {:?}", String::from_utf8_lossy(&bytes[..4])),
            ));
        }
        let version = *bytes
            .get(4)
            .ok_or_else(|| KawhiError::format("version", "truncated before version byte"))?;
        if version != KTEN_VERSION {
            return Err(KawhiError::format("version", format!("unsupported version {version}")));
        }
        let rank = *bytes
            .get(5)
            .ok_or_else(|| KawhiError::format("rank", "truncated before rank byte"))? as usize;
        let dims_end = 6 + 4 * rank;
        if bytes.len() < dims_end {
            return Err(KawhiError::format(
                "dims",
                format!("expected {rank} dims, file truncated"),
            ));
        }
        let shape: Vec<usize> = bytes[6..dims_end]
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes(c.try_into().unwrap()) as usize)
            .collect();
        let count = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| KawhiError::format("dims", "element count overflows"))?;
        let payload = &bytes[dims_end..];
        if payload.len() != count * 4 {
            return Err(KawhiError::format(
                "payload",
                format!("expected {} bytes, found {}", count * 4, payload.len()),
            ));
        }
        let data: Vec<f32> = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(KawhiError::format(
                "payload",
                format!("non-finite value at element {i}"),
            ));
        }
        Ok(Self { shape, data })
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes).map_err(|e| KawhiError::io("<reader>", e))?;
        Self::decode(&bytes)
    }
}

pub fn tensor_write(t: &Tensor, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    t.encode(&mut bytes)?;
    std::fs::write(path, bytes).map_err(|e| KawhiError::io(path, e))
}

pub fn tensor_read(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| KawhiError::io(path, e))?;
    Tensor::decode(&bytes)
}
