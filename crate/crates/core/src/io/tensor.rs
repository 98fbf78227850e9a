//! Binary tensor container: magic `PTEN`, `u32` version, `u32` rank, `u64`
//! dims, a one-byte dtype (`0` = f32, `1` = u8) and a little-endian
//! row-major payload.

use crate::geometry::{DepthMap, FlowField};
use crate::{Error, Result};

const MAGIC: &[u8; 4] = b"PTEN";
const VERSION: u32 = 1;
/// Guards against absurd ranks in corrupt headers.
const MAX_RANK: u32 = 8;

#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    U8(Vec<u8>),
}

impl TensorData {
    fn len(&self) -> usize {
        match self {
            TensorData::F32(v) => v.len(),
            TensorData::U8(v) => v.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub dims: Vec<u64>,
    pub data: TensorData,
}

fn element_count(dims: &[u64]) -> Option<usize> {
    dims.iter().try_fold(1usize, |acc, &d| acc.checked_mul(usize::try_from(d).ok()?))
}

impl Tensor {
    pub fn f32(dims: Vec<u64>, values: Vec<f32>) -> Result<Self> {
        Self::new(dims, TensorData::F32(values))
    }

    pub fn u8(dims: Vec<u64>, values: Vec<u8>) -> Result<Self> {
        Self::new(dims, TensorData::U8(values))
    }

    pub fn new(dims: Vec<u64>, data: TensorData) -> Result<Self> {
        match element_count(&dims) {
            Some(n) if n == data.len() => Ok(Self { dims, data }),
            _ => Err(Error::DimensionMismatch(format!("tensor dims {dims:?} do not match {} elements", data.len()))),
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let (dtype, size) = match &self.data {
            TensorData::F32(v) => (0u8, v.len() * 4),
            TensorData::U8(v) => (1u8, v.len()),
        };
        let mut out = Vec::with_capacity(13 + 8 * self.dims.len() + size);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.dims.len() as u32).to_le_bytes());
        for d in &self.dims {
            out.extend_from_slice(&d.to_le_bytes());
        }
        out.push(dtype);
        match &self.data {
            TensorData::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            TensorData::U8(v) => out.extend_from_slice(v),
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let bad = |msg: String| Error::format("tensor", msg);
        let mut r = Reader { bytes, at: 0 };
        if r.take(4).map_err(bad)? != MAGIC {
            return Err(bad("missing PTEN magic".into()));
        }
        let version = r.u32().map_err(bad)?;
        if version != VERSION {
            return Err(bad(format!("unsupported version {version}")));
        }
        let rank = r.u32().map_err(bad)?;
        if rank > MAX_RANK {
            return Err(bad(format!("rank {rank} exceeds {MAX_RANK}")));
        }
        let dims = (0..rank).map(|_| r.u64()).collect::<std::result::Result<Vec<_>, _>>().map_err(bad)?;
        let dtype = r.take(1).map_err(bad)?[0];
        let n = element_count(&dims).ok_or_else(|| bad(format!("dims {dims:?} overflow")))?;
        let width = match dtype {
            0 => 4,
            1 => 1,
            d => return Err(bad(format!("unknown dtype {d}"))),
        };
        let expected = n.checked_mul(width).ok_or_else(|| bad(format!("dims {dims:?} overflow")))?;
        let payload = &bytes[r.at..];
        if payload.len() != expected {
            return Err(bad(format!("payload has {} bytes, dims {dims:?} need {expected}", payload.len())));
        }
        let data = match dtype {
            0 => TensorData::F32(payload.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("chunk of 4"))).collect()),
            _ => TensorData::U8(payload.to_vec()),
        };
        Ok(Self { dims, data })
    }

    pub fn dims_usize(&self) -> Vec<usize> {
        self.dims.iter().map(|&d| d as usize).collect()
    }

    pub fn as_f32(&self) -> Result<&[f32]> {
        match &self.data {
            TensorData::F32(v) => Ok(v),
            TensorData::U8(_) => Err(Error::format("tensor", "expected f32 data, found u8")),
        }
    }

    pub fn as_u8(&self) -> Result<&[u8]> {
        match &self.data {
            TensorData::U8(v) => Ok(v),
            TensorData::F32(_) => Err(Error::format("tensor", "expected u8 data, found f32")),
        }
    }

    /// Checks the rank and returns the dims, failing with a message naming
    /// `what`.
    pub fn expect_rank(&self, what: &str, rank: usize) -> Result<Vec<usize>> {
        if self.dims.len() != rank {
            return Err(Error::format("tensor", format!("{what} must have rank {rank}, found dims {:?}", self.dims)));
        }
        Ok(self.dims_usize())
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        let end = self.at.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| format!("truncated header at byte {}", self.at))?;
        let s = &self.bytes[self.at..end];
        self.at = end;
        Ok(s)
    }

    fn u32(&mut self) -> std::result::Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> std::result::Result<u64, String> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

/// Depth maps as an f32 `[frames, height, width]` tensor, invalid pixels as
/// NaN.
pub fn depth_to_tensor(maps: &[DepthMap]) -> Result<Tensor> {
    let (w, h) = maps.first().map_or((0, 0), DepthMap::dims);
    let mut values = Vec::with_capacity(maps.len() * w * h);
    for m in maps {
        crate::geometry::check_dims("depth stack", m.dims(), (w, h))?;
        values.extend(m.values.iter().zip(&m.valid).map(|(&v, &ok)| if ok { v as f32 } else { f32::NAN }));
    }
    Tensor::f32(vec![maps.len() as u64, h as u64, w as u64], values)
}

/// Inverse of [`depth_to_tensor`]: finite positive values are valid.
pub fn depth_from_tensor(t: &Tensor) -> Result<Vec<DepthMap>> {
    let d = t.expect_rank("depth", 3)?;
    let (frames, h, w) = (d[0], d[1], d[2]);
    let v = t.as_f32()?;
    Ok((0..frames)
        .map(|f| {
            let slice = &v[f * w * h..(f + 1) * w * h];
            let mut m = DepthMap::new(w, h);
            for (i, &x) in slice.iter().enumerate() {
                let x = x as f64;
                if x.is_finite() && x > 0.0 {
                    m.values[i] = x;
                    m.valid[i] = true;
                }
            }
            m
        })
        .collect())
}

/// A flow field as an f32 `[height, width, 2]` tensor, invalid pixels as NaN.
pub fn flow_to_tensor(f: &FlowField) -> Result<Tensor> {
    let values = f.values.iter().zip(&f.valid).flat_map(|(v, &ok)| if ok { [v.x as f32, v.y as f32] } else { [f32::NAN; 2] }).collect();
    Tensor::f32(vec![f.height as u64, f.width as u64, 2], values)
}

pub fn flow_from_tensor(t: &Tensor) -> Result<FlowField> {
    let d = t.expect_rank("flow", 3)?;
    if d[2] != 2 {
        return Err(Error::format("tensor", format!("flow needs 2 channels, found {}", d[2])));
    }
    let v = t.as_f32()?;
    let mut f = FlowField::new(d[1], d[0]);
    for i in 0..d[0] * d[1] {
        let (x, y) = (v[2 * i] as f64, v[2 * i + 1] as f64);
        if x.is_finite() && y.is_finite() {
            f.values[i] = nalgebra::Vector2::new(x, y);
            f.valid[i] = true;
        }
    }
    Ok(f)
}
