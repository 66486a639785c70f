//! `VDT1` tensor container and the checkpoint bundle built on it.
//!
//! Layout: magic `VDT1`, u8 dtype tag (1 = float32), u8 ndim, `ndim` u32
//! dims, then the row-major payload. All integers and floats little-endian.

use std::fs;
use std::path::Path;

use ndarray::{Array2, ArrayD, IxDyn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::neural::{DiffusionNet, Mat, ModelConfig, Stage};
use crate::roll_codec::{FrameGrid, RollSet, N_PITCHES};

pub const MAGIC: &[u8; 4] = b"VDT1";
pub const DTYPE_F32: u8 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct TensorFile {
    pub dims: Vec<usize>,
    pub data: Vec<f32>,
}

impl TensorFile {
    pub fn new(dims: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let n: usize = dims.iter().product();
        if n != data.len() {
            return Err(Error::Dimension(format!("dims {dims:?} need {n} values, got {}", data.len())));
        }
        if dims.len() > u8::MAX as usize || dims.iter().any(|&d| d > u32::MAX as usize) {
            return Err(Error::Capacity(format!("dims {dims:?} do not fit the header")));
        }
        Ok(TensorFile { dims, data })
    }

    pub fn from_mat(m: &Mat) -> Self {
        TensorFile {
            dims: vec![m.nrows(), m.ncols()],
            data: m.iter().map(|&v| v as f32).collect(),
        }
    }

    pub fn from_array(a: &ArrayD<f64>) -> Self {
        TensorFile {
            dims: a.shape().to_vec(),
            data: a.iter().map(|&v| v as f32).collect(),
        }
    }

    pub fn to_array(&self) -> ArrayD<f64> {
        ArrayD::from_shape_vec(IxDyn(&self.dims), self.data.iter().map(|&v| v as f64).collect())
            .expect("length checked on construction")
    }

    pub fn to_mat(&self) -> Result<Mat> {
        match self.dims.as_slice() {
            &[r, c] => Ok(Array2::from_shape_vec((r, c), self.data.iter().map(|&v| v as f64).collect())
                .expect("length checked on construction")),
            d => Err(Error::Dimension(format!("expected a 2-d tensor, found dims {d:?}"))),
        }
    }

    pub fn encoded_len(&self) -> usize {
        6 + 4 * self.dims.len() + 4 * self.data.len()
    }

    pub fn write_to(&self, out: &mut Vec<u8>) {
        out.reserve(self.encoded_len());
        out.extend_from_slice(MAGIC);
        out.push(DTYPE_F32);
        out.push(self.dims.len() as u8);
        for &d in &self.dims {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write_to(&mut out);
        out
    }

    /// Parses one tensor from the front of `bytes`, returning it and the
    /// number of bytes consumed.
    pub fn read_from(bytes: &[u8]) -> Result<(Self, usize)> {
        let need = |n: usize| {
            if bytes.len() < n {
                Err(Error::parse(bytes.len(), format!("truncated tensor: need {n} bytes")))
            } else {
                Ok(())
            }
        };
        need(6)?;
        if &bytes[..4] != MAGIC {
            return Err(Error::UnsupportedFormat(format!("bad tensor magic {:?}", &bytes[..4])));
        }
        if bytes[4] != DTYPE_F32 {
            return Err(Error::UnsupportedFormat(format!("unknown dtype tag {}", bytes[4])));
        }
        let ndim = bytes[5] as usize;
        need(6 + 4 * ndim)?;
        let dims: Vec<usize> = (0..ndim)
            .map(|i| u32::from_le_bytes(bytes[6 + 4 * i..10 + 4 * i].try_into().expect("4 bytes")) as usize)
            .collect();
        let n = dims
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or_else(|| Error::Capacity(format!("tensor dims {dims:?} overflow")))?;
        let head = 6 + 4 * ndim;
        let end = n
            .checked_mul(4)
            .and_then(|b| b.checked_add(head))
            .ok_or_else(|| Error::Capacity(format!("tensor dims {dims:?} overflow")))?;
        need(end)?;
        let data = bytes[head..end]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        Ok((TensorFile { dims, data }, end))
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (t, used) = Self::read_from(bytes)?;
        if used != bytes.len() {
            return Err(Error::parse(used, "trailing bytes after tensor payload"));
        }
        Ok(t)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        Ok(fs::write(path, self.to_bytes())?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

/// Roll set as one `4 × P × T` tensor in frame, onset, offset, bend order.
pub fn rolls_to_tensor(r: &RollSet) -> TensorFile {
    let t = r.n_frames();
    let mut data = Vec::with_capacity(4 * N_PITCHES * t);
    for m in [&r.frame, &r.onset, &r.offset, &r.bend] {
        data.extend(m.iter().map(|&v| v as f32));
    }
    TensorFile {
        dims: vec![4, N_PITCHES, t],
        data,
    }
}

pub fn rolls_from_tensor(t: &TensorFile, sample_rate: u32, hop: usize) -> Result<RollSet> {
    let &[4, p, n] = t.dims.as_slice() else {
        return Err(Error::Dimension(format!("expected 4 x {N_PITCHES} x T rolls, found {:?}", t.dims)));
    };
    if p != N_PITCHES {
        return Err(Error::Dimension(format!("expected {N_PITCHES} pitch rows, found {p}")));
    }
    let mut r = RollSet::zeros(FrameGrid::new(sample_rate, hop, n));
    let plane = p * n;
    for (k, m) in [&mut r.frame, &mut r.onset, &mut r.offset, &mut r.bend].into_iter().enumerate() {
        for (dst, &src) in m.iter_mut().zip(&t.data[k * plane..(k + 1) * plane]) {
            *dst = src as f64;
        }
    }
    Ok(r)
}

const BUNDLE_MAGIC: &[u8; 4] = b"VDCK";

/// Everything a sampler needs besides the weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointMeta {
    pub stage: Stage,
    pub model: ModelConfig,
    /// Performer ids in embedding-row order.
    pub performers: Vec<String>,
    /// Log-mel normalization range (synthesis stage only).
    pub mel_norm: Option<crate::dsp::MelNorm>,
    pub step: usize,
    /// Parameter names in payload order.
    pub tensors: Vec<String>,
}

/// Checkpoint: magic `VDCK`, u32 LE length of a JSON [`CheckpointMeta`], the
/// JSON, then one `VDT1` record per named parameter.
pub fn save_checkpoint(path: &Path, net: &DiffusionNet, mut meta: CheckpointMeta) -> Result<()> {
    meta.stage = net.stage;
    meta.model = net.cfg.clone();
    meta.tensors = net.params.iter().map(|(_, n, _)| n.to_string()).collect();
    let json = serde_json::to_vec(&meta)?;
    let mut out = Vec::new();
    out.extend_from_slice(BUNDLE_MAGIC);
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for (_, _, m) in net.params.iter() {
        TensorFile::from_mat(m).write_to(&mut out);
    }
    Ok(fs::write(path, out)?)
}

pub fn load_checkpoint(path: &Path) -> Result<(DiffusionNet, CheckpointMeta)> {
    let bytes = fs::read(path)?;
    if bytes.len() < 8 || &bytes[..4] != BUNDLE_MAGIC {
        return Err(Error::UnsupportedFormat(format!("{} is not a checkpoint", path.display())));
    }
    let len = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes")) as usize;
    let json = bytes
        .get(8..8 + len)
        .ok_or_else(|| Error::parse(bytes.len(), "truncated checkpoint header"))?;
    let meta: CheckpointMeta = serde_json::from_slice(json)?;
    let mut net = DiffusionNet::new(&meta.model, meta.stage)?;
    let mut pos = 8 + len;
    let mut values = Vec::with_capacity(meta.tensors.len());
    for name in &meta.tensors {
        let (t, used) = TensorFile::read_from(&bytes[pos..])?;
        values.push((name.clone(), t.to_mat()?));
        pos += used;
    }
    if pos != bytes.len() {
        return Err(Error::parse(pos, "trailing bytes after checkpoint tensors"));
    }
    net.params.load_from(&values).map_err(Error::InvalidInput)?;
    Ok((net, meta))
}
