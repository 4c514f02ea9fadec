//! Flat parameter storage shared by both network types.
//!
//! Binary layout (little endian):
//!
//! ```text
//! magic     8 bytes   b"RWNETv1\0"
//! count     u64       number of tensors
//! per tensor:
//!   name_len u32, name utf-8 bytes, rows u64, cols u64
//! data      f64 × Σ rows·cols, tensors in table order, each row-major
//! ```

use std::io::{Read, Write};
use std::path::Path;

use ndarray::{ArrayView2, ArrayViewMut2};
use rand::Rng;

use super::LearnError;

pub const MAGIC: &[u8; 8] = b"RWNETv1\0";

#[derive(Debug, Clone, PartialEq)]
pub struct TensorShape {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub offset: usize,
}

impl TensorShape {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetParams {
    pub data: Vec<f64>,
    pub shapes: Vec<TensorShape>,
}

impl NetParams {
    pub fn zeros(table: &[(&str, usize, usize)]) -> Self {
        let mut shapes = Vec::with_capacity(table.len());
        let mut offset = 0;
        for &(name, rows, cols) in table {
            shapes.push(TensorShape { name: name.to_string(), rows, cols, offset });
            offset += rows * cols;
        }
        Self { data: vec![0.0; offset], shapes }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn zeros_like(&self) -> Vec<f64> {
        vec![0.0; self.data.len()]
    }

    pub fn shape(&self, idx: usize) -> &TensorShape {
        &self.shapes[idx]
    }

    pub fn view(&self, idx: usize) -> ArrayView2<'_, f64> {
        let s = &self.shapes[idx];
        ArrayView2::from_shape((s.rows, s.cols), &self.data[s.offset..s.offset + s.len()]).unwrap()
    }

    pub fn slice(&self, idx: usize) -> &[f64] {
        let s = &self.shapes[idx];
        &self.data[s.offset..s.offset + s.len()]
    }

    /// Glorot-uniform weights (every tensor named `w*`), zero biases.
    pub fn glorot<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        for s in &self.shapes {
            if !s.name.starts_with('w') {
                continue;
            }
            let bound = (6.0 / (s.rows + s.cols) as f64).sqrt();
            for v in &mut self.data[s.offset..s.offset + s.len()] {
                *v = rng.gen_range(-bound..bound);
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + self.data.len() * 8);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(self.shapes.len() as u64).to_le_bytes());
        for s in &self.shapes {
            out.extend_from_slice(&(s.name.len() as u32).to_le_bytes());
            out.extend_from_slice(s.name.as_bytes());
            out.extend_from_slice(&(s.rows as u64).to_le_bytes());
            out.extend_from_slice(&(s.cols as u64).to_le_bytes());
        }
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, LearnError> {
        let mut r = bytes;
        let mut magic = [0u8; 8];
        read_exact(&mut r, &mut magic)?;
        if &magic != MAGIC {
            return Err(LearnError::Format("bad magic header".into()));
        }
        let count = read_u64(&mut r)? as usize;
        let mut table = Vec::with_capacity(count);
        for _ in 0..count {
            let mut len = [0u8; 4];
            read_exact(&mut r, &mut len)?;
            let mut name = vec![0u8; u32::from_le_bytes(len) as usize];
            read_exact(&mut r, &mut name)?;
            let name = String::from_utf8(name).map_err(|_| LearnError::Format("tensor name is not utf-8".into()))?;
            let rows = read_u64(&mut r)? as usize;
            let cols = read_u64(&mut r)? as usize;
            table.push((name, rows, cols));
        }
        let refs: Vec<(&str, usize, usize)> = table.iter().map(|(n, r, c)| (n.as_str(), *r, *c)).collect();
        let mut p = NetParams::zeros(&refs);
        if r.len() != p.data.len() * 8 {
            return Err(LearnError::Format(format!("expected {} data bytes, found {}", p.data.len() * 8, r.len())));
        }
        for (v, chunk) in p.data.iter_mut().zip(r.chunks_exact(8)) {
            *v = f64::from_le_bytes(chunk.try_into().unwrap());
        }
        Ok(p)
    }

    pub fn save(&self, path: &Path) -> Result<(), LearnError> {
        let mut f = std::fs::File::create(path).map_err(|e| LearnError::Io(e.to_string()))?;
        f.write_all(&self.to_bytes()).map_err(|e| LearnError::Io(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, LearnError> {
        let mut buf = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut buf))
            .map_err(|e| LearnError::Io(e.to_string()))?;
        Self::from_bytes(&buf)
    }
}

/// Mutable 2-D view of one tensor inside a flat gradient buffer.
pub fn grad_view<'a>(p: &NetParams, grad: &'a mut [f64], idx: usize) -> ArrayViewMut2<'a, f64> {
    let s = &p.shapes[idx];
    ArrayViewMut2::from_shape((s.rows, s.cols), &mut grad[s.offset..s.offset + s.len()]).unwrap()
}

fn read_exact(r: &mut &[u8], buf: &mut [u8]) -> Result<(), LearnError> {
    r.read_exact(buf).map_err(|_| LearnError::Format("truncated parameter file".into()))
}

fn read_u64(r: &mut &[u8]) -> Result<u64, LearnError> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b)?;
    Ok(u64::from_le_bytes(b))
}
