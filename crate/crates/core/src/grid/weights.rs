//! Named weight tensors for every forward-only layer, plus the flat binary
//! container they are stored in.
//!
//! File layout (all integers little-endian):
//!
//! ```text
//! magic  "CPWS"            4 bytes
//! version u32 (= 1)
//! slots   u32
//! per slot: name_len u16, name (utf-8), ndims u8, dims u32 x ndims
//! payloads: f32 x prod(dims) per slot, in declaration order
//! ```

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{DecodeError, Error, ShapeError};

const MAGIC: &[u8; 4] = b"CPWS";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub dims: Vec<usize>,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn zeros(dims: &[usize]) -> Self {
        Tensor {
            dims: dims.to_vec(),
            data: vec![0.0; dims.iter().product()],
        }
    }
}

/// Channel counts that determine every slot's dimensions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelDims {
    /// LiDAR voxel / BEV channels.
    pub lidar_channels: usize,
    /// Camera voxel channels.
    pub camera_channels: usize,
    /// Common fused BEV channels.
    pub bev_channels: usize,
    /// Linear layers in the cross-modal attention MLP.
    pub mlp_layers: usize,
}

impl Default for ModelDims {
    fn default() -> Self {
        ModelDims {
            lidar_channels: 16,
            camera_channels: 16,
            bev_channels: 16,
            mlp_layers: 1,
        }
    }
}

impl ModelDims {
    pub fn heatmap_hidden(&self) -> usize {
        (self.bev_channels / 2).max(1)
    }

    /// Every slot with its expected dimensions, in declaration order.
    pub fn slots(&self) -> Vec<(String, Vec<usize>)> {
        let (cl, ci, c) = (self.lidar_channels, self.camera_channels, self.bev_channels);
        let mut s: Vec<(String, Vec<usize>)> = Vec::new();
        let mut lin = |name: &str, out: usize, inp: usize| {
            s.push((format!("{name}.w"), vec![out, inp]));
            s.push((format!("{name}.b"), vec![out]));
        };
        lin("lidar.collapse", cl, cl);
        lin("camera.collapse", ci, ci);
        for p in ["q", "k", "v"] {
            lin(&format!("mix.{p}"), cl, cl);
        }
        lin("occ", 1, cl);
        lin("gate", ci, cl);
        lin("hmf.expand_lidar", c, cl);
        lin("hmf.expand_camera", c, ci);
        lin("hmf.cat", c, 2 * c);
        for i in 0..self.mlp_layers {
            lin(&format!("hmf.mlp.{i}"), c, c);
        }
        for p in ["q", "k", "v"] {
            lin(&format!("ic.{p}"), c, c);
        }
        for stage in ["self", "cross"] {
            for p in ["q", "k", "v"] {
                lin(&format!("ir.{stage}.{p}"), c, c);
            }
        }
        let hid = self.heatmap_hidden();
        s.push(("hm.conv1.w".into(), vec![hid, c, 3, 3]));
        s.push(("hm.conv1.b".into(), vec![hid]));
        s.push(("hm.conv2.w".into(), vec![1, hid, 3, 3]));
        s.push(("hm.conv2.b".into(), vec![1]));
        s
    }
}

/// Per-cell affine map `y = W x + b`, `W` row-major `out x in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weight: Vec<f32>,
    pub bias: Vec<f32>,
}

impl Linear {
    pub fn new(out_dim: usize, in_dim: usize, weight: Vec<f32>, bias: Vec<f32>) -> Result<Self, ShapeError> {
        if weight.len() != out_dim * in_dim {
            return Err(ShapeError::mismatch("linear weight", out_dim * in_dim, weight.len()));
        }
        if bias.len() != out_dim {
            return Err(ShapeError::mismatch("linear bias", out_dim, bias.len()));
        }
        Ok(Linear {
            in_dim,
            out_dim,
            weight,
            bias,
        })
    }

    /// Identity on the leading `min(out, in)` channels, zero bias.
    pub fn identity(out_dim: usize, in_dim: usize) -> Self {
        let mut weight = vec![0.0; out_dim * in_dim];
        for i in 0..out_dim.min(in_dim) {
            weight[i * in_dim + i] = 1.0;
        }
        Linear {
            in_dim,
            out_dim,
            weight,
            bias: vec![0.0; out_dim],
        }
    }

    pub fn is_identity(&self) -> bool {
        self.out_dim == self.in_dim && *self == Linear::identity(self.out_dim, self.in_dim)
    }

    #[inline]
    pub fn apply_into(&self, x: &[f32], out: &mut [f32]) {
        debug_assert_eq!(x.len(), self.in_dim);
        debug_assert_eq!(out.len(), self.out_dim);
        for (o, (row, b)) in out
            .iter_mut()
            .zip(self.weight.chunks_exact(self.in_dim).zip(&self.bias))
        {
            let mut acc = *b;
            for (w, v) in row.iter().zip(x) {
                acc += w * v;
            }
            *o = acc;
        }
    }

    pub fn apply(&self, x: &[f32]) -> Vec<f32> {
        let mut out = vec![0.0; self.out_dim];
        self.apply_into(x, &mut out);
        out
    }

    /// Apply to every `in_dim`-row of a flat buffer.
    pub fn apply_rows(&self, rows: &[f32]) -> Vec<f32> {
        let n = rows.len() / self.in_dim.max(1);
        let mut out = vec![0.0; n * self.out_dim];
        for (x, o) in rows
            .chunks_exact(self.in_dim)
            .zip(out.chunks_exact_mut(self.out_dim))
        {
            self.apply_into(x, o);
        }
        out
    }
}

/// Query/key/value projections of one attention block.
#[derive(Debug, Clone, PartialEq)]
pub struct QkvWeights {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
}

impl QkvWeights {
    pub fn identity(c: usize) -> Self {
        QkvWeights {
            q: Linear::identity(c, c),
            k: Linear::identity(c, c),
            v: Linear::identity(c, c),
        }
    }

    /// Load `<prefix>.{q,k,v}` as `c x c` layers.
    pub fn from_weights(ws: &WeightSet, prefix: &str, c: usize) -> Result<Self, ShapeError> {
        Ok(QkvWeights {
            q: ws.linear(&format!("{prefix}.q"), c, c)?,
            k: ws.linear(&format!("{prefix}.k"), c, c)?,
            v: ws.linear(&format!("{prefix}.v"), c, c)?,
        })
    }

    pub(crate) fn check(&self, what: &'static str, c: usize) -> Result<(), ShapeError> {
        for l in [&self.q, &self.k, &self.v] {
            if l.in_dim != c || l.out_dim != c {
                return Err(ShapeError::mismatch(what, format!("{c}x{c}"), format!("{}x{}", l.out_dim, l.in_dim)));
            }
        }
        Ok(())
    }
}

/// 3x3 same-padding convolution, weights `[out, in, 3, 3]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv3x3 {
    pub in_ch: usize,
    pub out_ch: usize,
    pub weight: Vec<f32>,
    pub bias: Vec<f32>,
}

impl Conv3x3 {
    /// Zero-padded "same" convolution over an `h x w x in_ch` plane.
    pub fn apply(&self, input: &[f32], h: usize, w: usize) -> Vec<f32> {
        debug_assert_eq!(input.len(), h * w * self.in_ch);
        let (ci, co) = (self.in_ch, self.out_ch);
        let mut out = vec![0.0f32; h * w * co];
        for y in 0..h {
            for x in 0..w {
                let o = &mut out[(y * w + x) * co..(y * w + x + 1) * co];
                o.copy_from_slice(&self.bias);
                for ky in 0..3 {
                    let sy = y as i64 + ky as i64 - 1;
                    if sy < 0 || sy >= h as i64 {
                        continue;
                    }
                    for kx in 0..3 {
                        let sx = x as i64 + kx as i64 - 1;
                        if sx < 0 || sx >= w as i64 {
                            continue;
                        }
                        let px = &input[(sy as usize * w + sx as usize) * ci..][..ci];
                        for (oc, acc) in o.iter_mut().enumerate() {
                            for (ic, &v) in px.iter().enumerate() {
                                *acc += self.weight[((oc * ci + ic) * 3 + ky) * 3 + kx] * v;
                            }
                        }
                    }
                }
            }
        }
        out
    }
}

const PROXY_HEAD_GAIN: f32 = 0.5;
const PROXY_HEAD_BIAS: f32 = -3.0;

#[derive(Debug, Clone, PartialEq)]
pub struct WeightSet {
    order: Vec<String>,
    tensors: HashMap<String, Tensor>,
}

impl WeightSet {
    pub fn empty() -> Self {
        WeightSet {
            order: Vec::new(),
            tensors: HashMap::new(),
        }
    }

    /// Default initialization: identity on leading channels, zero bias.
    /// Convolutions get an identity center tap.
    pub fn identity(dims: &ModelDims) -> Self {
        let mut ws = WeightSet::empty();
        for (name, d) in dims.slots() {
            let mut t = Tensor::zeros(&d);
            if name.ends_with(".w") {
                match d.len() {
                    2 => {
                        for i in 0..d[0].min(d[1]) {
                            t.data[i * d[1] + i] = 1.0;
                        }
                    }
                    4 => {
                        for i in 0..d[0].min(d[1]) {
                            t.data[((i * d[1] + i) * 3 + 1) * 3 + 1] = 1.0;
                        }
                    }
                    _ => {}
                }
            }
            ws.insert(name, t);
        }
        ws
    }

    /// Hand-set detector weights used when no trained set is supplied.
    ///
    /// Identity everywhere except: the refinement cross-attention never
    /// writes channel 0 (the center channel the head decodes), so its
    /// uniform response on empty cells cannot flood the heatmap; and the
    /// head computes `sigmoid(0.5 * c0 - 3)`, which keeps empty cells near
    /// 0.05 and stops box peaks from saturating into ties.
    pub fn proxy(dims: &ModelDims) -> Self {
        let mut ws = WeightSet::identity(dims);
        let c = dims.bev_channels;
        if let Some(t) = ws.tensors.get_mut("ir.cross.v.w") {
            t.data[..c].iter_mut().for_each(|x| *x = 0.0);
        }
        if let Some(t) = ws.tensors.get_mut("hm.conv1.w") {
            t.data.iter_mut().for_each(|x| *x *= PROXY_HEAD_GAIN);
        }
        if let Some(t) = ws.tensors.get_mut("hm.conv2.b") {
            t.data.iter_mut().for_each(|x| *x = PROXY_HEAD_BIAS);
        }
        ws
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) {
        let name = name.into();
        if self.tensors.insert(name.clone(), t).is_none() {
            self.order.push(name);
        }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub fn names(&self) -> &[String] {
        &self.order
    }

    fn slot(&self, name: &str, dims: &[usize]) -> Result<&Tensor, ShapeError> {
        let t = self
            .tensors
            .get(name)
            .ok_or_else(|| ShapeError::MissingSlot(name.to_string()))?;
        if t.dims != dims {
            return Err(ShapeError::SlotDims {
                name: name.to_string(),
                expected: dims.to_vec(),
                got: t.dims.clone(),
            });
        }
        Ok(t)
    }

    /// Fetch `<name>.w` / `<name>.b` as a linear layer of the given size.
    pub fn linear(&self, name: &str, out_dim: usize, in_dim: usize) -> Result<Linear, ShapeError> {
        let w = self.slot(&format!("{name}.w"), &[out_dim, in_dim])?;
        let b = self.slot(&format!("{name}.b"), &[out_dim])?;
        Linear::new(out_dim, in_dim, w.data.clone(), b.data.clone())
    }

    pub fn conv3x3(&self, name: &str, out_ch: usize, in_ch: usize) -> Result<Conv3x3, ShapeError> {
        let w = self.slot(&format!("{name}.w"), &[out_ch, in_ch, 3, 3])?;
        let b = self.slot(&format!("{name}.b"), &[out_ch])?;
        Ok(Conv3x3 {
            in_ch,
            out_ch,
            weight: w.data.clone(),
            bias: b.data.clone(),
        })
    }

    /// Check that every slot required by `dims` is present with the right
    /// shape and holds finite values.
    pub fn validate(&self, dims: &ModelDims) -> Result<(), ShapeError> {
        for (name, d) in dims.slots() {
            let t = self.slot(&name, &d)?;
            if let Some(i) = t.data.iter().position(|v| !v.is_finite()) {
                return Err(ShapeError::NonFinite(i));
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.order.len() as u32).to_le_bytes());
        for name in &self.order {
            let t = &self.tensors[name];
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(t.dims.len() as u8);
            for d in &t.dims {
                out.extend_from_slice(&(*d as u32).to_le_bytes());
            }
        }
        for name in &self.order {
            for v in &self.tensors[name].data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self, DecodeError> {
        let mut r = Reader { buf, pos: 0 };
        let magic = r.take(4)?;
        if magic != MAGIC {
            return Err(DecodeError::BadMagic {
                found: u32::from_le_bytes(magic.try_into().unwrap()),
            });
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(DecodeError::BadVersion {
                offset: 4,
                found: version as u16,
            });
        }
        let n = r.u32()? as usize;
        let mut header = Vec::with_capacity(n.min(4096));
        for _ in 0..n {
            let len = r.u16()? as usize;
            let at = r.pos;
            let name = std::str::from_utf8(r.take(len)?)
                .map_err(|e| DecodeError::Inconsistent {
                    offset: at,
                    reason: format!("slot name is not utf-8: {e}"),
                })?
                .to_string();
            let nd = r.take(1)?[0] as usize;
            let mut dims = Vec::with_capacity(nd);
            for _ in 0..nd {
                dims.push(r.u32()? as usize);
            }
            header.push((name, dims));
        }
        let mut ws = WeightSet::empty();
        for (name, dims) in header {
            let count: usize = dims.iter().product();
            let at = r.pos;
            let bytes = r.take(count.checked_mul(4).ok_or(DecodeError::Inconsistent {
                offset: at,
                reason: "slot size overflows".into(),
            })?)?;
            let data = bytes
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
                .collect();
            ws.insert(name, Tensor { dims, data });
        }
        if r.pos != buf.len() {
            return Err(DecodeError::Trailing {
                offset: r.pos,
                extra: buf.len() - r.pos,
            });
        }
        Ok(ws)
    }

    pub fn load(path: &Path) -> Result<Self, Error> {
        let bytes = std::fs::read(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Ok(Self::from_bytes(&bytes)?)
    }

    pub fn save(&self, path: &Path) -> Result<(), Error> {
        std::fs::write(path, self.to_bytes()).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], DecodeError> {
        let rest = self.buf.len() - self.pos;
        if n > rest {
            return Err(DecodeError::Truncated {
                offset: self.pos,
                needed: n - rest,
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16, DecodeError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, DecodeError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_set_validates() {
        let dims = ModelDims::default();
        let ws = WeightSet::identity(&dims);
        ws.validate(&dims).unwrap();
        assert!(ws.linear("mix.q", 16, 16).unwrap().is_identity());
        let cat = ws.linear("hmf.cat", 16, 32).unwrap();
        assert_eq!(cat.apply(&(0..32).map(|i| i as f32).collect::<Vec<_>>())[15], 15.0);
    }

    #[test]
    fn wrong_dims_are_reported() {
        let dims = ModelDims::default();
        let ws = WeightSet::identity(&dims);
        let err = ws.linear("mix.q", 8, 16).unwrap_err();
        assert!(matches!(err, ShapeError::SlotDims { .. }));
        assert!(matches!(
            ws.linear("nope", 1, 1),
            Err(ShapeError::MissingSlot(_))
        ));
        let other = ModelDims {
            bev_channels: 8,
            ..dims
        };
        assert!(ws.validate(&other).is_err());
    }

    #[test]
    fn file_round_trip_and_truncation() {
        let dims = ModelDims {
            lidar_channels: 4,
            camera_channels: 3,
            bev_channels: 6,
            mlp_layers: 2,
        };
        let mut ws = WeightSet::identity(&dims);
        ws.insert("occ.b", Tensor { dims: vec![1], data: vec![-0.25] });
        let bytes = ws.to_bytes();
        let back = WeightSet::from_bytes(&bytes).unwrap();
        assert_eq!(back, ws);
        assert_eq!(back.names(), ws.names());
        for cut in [0, 3, 11, 40, bytes.len() - 1] {
            assert!(WeightSet::from_bytes(&bytes[..cut]).is_err());
        }
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(WeightSet::from_bytes(&bad), Err(DecodeError::BadMagic { .. })));
    }
}
