//! Message types and the little-endian wire format.
//!
//! ```text
//! header (36 bytes)
//!   magic u32 "CPMS" | version u16 | kind u8 | scale u8
//!   sender u32 | receiver u32 | dims u32 x 4 | payload_len u32
//! payload
//!   VoxelPrior         frame u32, cell_size f32, z_size f32, f32 x h*w*l*c   dims = (h, w, l, c)
//!   HeatmapShare       owner u32, cell_size f32, z_size f32, f32 x h*w        dims = (h, w, 1, 1)
//!   InstanceQuery      (h i32, w i32) x n                                     dims = (rows, cols, n, 0)
//!   InstanceReply      (h i32, w i32, f32 x c, heat f32) x n                  dims = (rows, cols, n, c)
//!   InstanceBroadcast  same as InstanceReply
//! ```

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::collab::{Heatmap, InstanceVector};
use crate::error::{DecodeError, ProtocolError};
use crate::grid::{AgentId, GridShape, VoxelFeature};

pub const MAGIC: u32 = u32::from_le_bytes(*b"CPMS");
pub const VERSION: u16 = 1;
pub const HEADER_LEN: usize = 36;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum MessageKind {
    VoxelPrior,
    HeatmapShare,
    InstanceQuery,
    InstanceReply,
    InstanceBroadcast,
}

impl MessageKind {
    pub const ALL: [MessageKind; 5] = [
        MessageKind::VoxelPrior,
        MessageKind::HeatmapShare,
        MessageKind::InstanceQuery,
        MessageKind::InstanceReply,
        MessageKind::InstanceBroadcast,
    ];

    pub fn code(self) -> u8 {
        self as u8 + 1
    }

    pub fn from_code(c: u8) -> Option<Self> {
        Self::ALL.get((c as usize).wrapping_sub(1)).copied()
    }

    /// Exchange round the kind is sent in.
    pub fn round(self) -> u8 {
        match self {
            MessageKind::VoxelPrior => 1,
            MessageKind::HeatmapShare => 2,
            MessageKind::InstanceQuery | MessageKind::InstanceReply => 3,
            MessageKind::InstanceBroadcast => 4,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            MessageKind::VoxelPrior => "voxel_prior",
            MessageKind::HeatmapShare => "heatmap_share",
            MessageKind::InstanceQuery => "instance_query",
            MessageKind::InstanceReply => "instance_reply",
            MessageKind::InstanceBroadcast => "instance_broadcast",
        }
    }
}

impl fmt::Display for MessageKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    /// Compressed LiDAR voxel, already in the receiver frame.
    VoxelPrior(VoxelFeature),
    HeatmapShare(Heatmap),
    /// Completion positions on a `rows x cols` plane.
    InstanceQuery { rows: usize, cols: usize, positions: Vec<(usize, usize)> },
    InstanceReply { rows: usize, cols: usize, channels: usize, instances: Vec<InstanceVector> },
    InstanceBroadcast { rows: usize, cols: usize, channels: usize, instances: Vec<InstanceVector> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Message {
    pub sender: AgentId,
    pub receiver: AgentId,
    pub scale: u8,
    pub payload: Payload,
}

/// Header plus payload size of an instance message with `n` entries of `c`
/// channels.
pub fn instance_message_len(n: usize, c: usize) -> usize {
    HEADER_LEN + n * instance_entry_len(c)
}

pub fn instance_entry_len(c: usize) -> usize {
    8 + 4 * c + 4
}

pub fn query_message_len(n: usize) -> usize {
    HEADER_LEN + 8 * n
}

pub fn voxel_message_len(s: &GridShape) -> usize {
    HEADER_LEN + 12 + 4 * s.voxel_len()
}

pub fn heatmap_message_len(h: usize, w: usize) -> usize {
    HEADER_LEN + 12 + 4 * h * w
}

impl Message {
    pub fn kind(&self) -> MessageKind {
        match self.payload {
            Payload::VoxelPrior(_) => MessageKind::VoxelPrior,
            Payload::HeatmapShare(_) => MessageKind::HeatmapShare,
            Payload::InstanceQuery { .. } => MessageKind::InstanceQuery,
            Payload::InstanceReply { .. } => MessageKind::InstanceReply,
            Payload::InstanceBroadcast { .. } => MessageKind::InstanceBroadcast,
        }
    }

    fn dims(&self) -> [usize; 4] {
        match &self.payload {
            Payload::VoxelPrior(v) => {
                let s = v.shape();
                [s.h_cells, s.w_cells, s.l_bins, s.channels]
            }
            Payload::HeatmapShare(h) => [h.rows(), h.cols(), 1, 1],
            Payload::InstanceQuery { rows, cols, positions } => [*rows, *cols, positions.len(), 0],
            Payload::InstanceReply { rows, cols, channels, instances }
            | Payload::InstanceBroadcast { rows, cols, channels, instances } => [*rows, *cols, instances.len(), *channels],
        }
    }

    pub fn payload_len(&self) -> usize {
        let [h, w, l, c] = self.dims();
        match self.kind() {
            MessageKind::VoxelPrior => 12 + 4 * h * w * l * c,
            MessageKind::HeatmapShare => 12 + 4 * h * w,
            MessageKind::InstanceQuery => 8 * l,
            MessageKind::InstanceReply | MessageKind::InstanceBroadcast => l * instance_entry_len(c),
        }
    }

    /// Length of the encoded message, header included.
    pub fn byte_len(&self) -> usize {
        HEADER_LEN + self.payload_len()
    }

    fn validate(&self) -> Result<(), ProtocolError> {
        let bad = |m: String| Err(ProtocolError::InvalidPayload(m));
        let dims = self.dims();
        if dims.iter().any(|&d| d > u32::MAX as usize) {
            return bad("dimension exceeds u32".into());
        }
        match &self.payload {
            Payload::VoxelPrior(_) => {}
            Payload::HeatmapShare(h) => {
                if h.scale() != self.scale as usize {
                    return bad(format!("heatmap scale {} sent as scale {}", h.scale(), self.scale));
                }
            }
            Payload::InstanceQuery { rows, cols, positions } => {
                if let Some(p) = positions.iter().find(|p| p.0 >= *rows || p.1 >= *cols) {
                    return bad(format!("query position {p:?} outside {rows}x{cols}"));
                }
            }
            Payload::InstanceReply { rows, cols, channels, instances }
            | Payload::InstanceBroadcast { rows, cols, channels, instances } => {
                for i in instances {
                    if i.h >= *rows || i.w >= *cols {
                        return bad(format!("instance ({}, {}) outside {rows}x{cols}", i.h, i.w));
                    }
                    if i.feature.len() != *channels {
                        return bad(format!("instance has {} channels, expected {channels}", i.feature.len()));
                    }
                    if i.owner != self.sender || i.scale != self.scale as usize {
                        return bad(format!(
                            "instance owner/scale {}/{} differs from header {}/{}",
                            i.owner, i.scale, self.sender, self.scale
                        ));
                    }
                    if !(0.0..=1.0).contains(&i.heat) || i.feature.iter().any(|x| !x.is_finite()) {
                        return bad("instance heat or feature out of range".into());
                    }
                }
            }
        }
        Ok(())
    }

    pub fn encode(&self) -> Result<Vec<u8>, ProtocolError> {
        self.validate()?;
        let mut out = Vec::with_capacity(self.byte_len());
        out.extend_from_slice(&MAGIC.to_le_bytes());
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.push(self.kind().code());
        out.push(self.scale);
        out.extend_from_slice(&self.sender.to_le_bytes());
        out.extend_from_slice(&self.receiver.to_le_bytes());
        for d in self.dims() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        out.extend_from_slice(&(self.payload_len() as u32).to_le_bytes());
        let f32s = |out: &mut Vec<u8>, xs: &[f32]| {
            for x in xs {
                out.extend_from_slice(&x.to_le_bytes());
            }
        };
        match &self.payload {
            Payload::VoxelPrior(v) => {
                out.extend_from_slice(&v.frame().to_le_bytes());
                out.extend_from_slice(&v.shape().cell_size_m.to_le_bytes());
                out.extend_from_slice(&v.shape().z_size_m.to_le_bytes());
                f32s(&mut out, v.data());
            }
            Payload::HeatmapShare(h) => {
                out.extend_from_slice(&h.owner().to_le_bytes());
                out.extend_from_slice(&h.shape().cell_size_m.to_le_bytes());
                out.extend_from_slice(&h.shape().z_size_m.to_le_bytes());
                f32s(&mut out, h.data());
            }
            Payload::InstanceQuery { positions, .. } => {
                for &(h, w) in positions {
                    out.extend_from_slice(&(h as i32).to_le_bytes());
                    out.extend_from_slice(&(w as i32).to_le_bytes());
                }
            }
            Payload::InstanceReply { instances, .. } | Payload::InstanceBroadcast { instances, .. } => {
                for i in instances {
                    out.extend_from_slice(&(i.h as i32).to_le_bytes());
                    out.extend_from_slice(&(i.w as i32).to_le_bytes());
                    f32s(&mut out, &i.feature);
                    out.extend_from_slice(&i.heat.to_le_bytes());
                }
            }
        }
        debug_assert_eq!(out.len(), self.byte_len());
        Ok(out)
    }

    pub fn decode(buf: &[u8]) -> Result<Message, DecodeError> {
        let mut r = Reader { buf, pos: 0 };
        let magic = r.u32()?;
        if magic != MAGIC {
            return Err(DecodeError::BadMagic { found: magic });
        }
        let version = r.u16()?;
        if version != VERSION {
            return Err(DecodeError::BadVersion { offset: 4, found: version });
        }
        let code = r.u8()?;
        let kind = MessageKind::from_code(code).ok_or(DecodeError::BadKind { offset: 6, found: code })?;
        let scale = r.u8()?;
        let sender = r.u32()?;
        let receiver = r.u32()?;
        let mut dims = [0usize; 4];
        for d in &mut dims {
            *d = r.u32()? as usize;
        }
        let len_at = r.pos;
        let payload_len = r.u32()? as usize;
        let [h, w, l, c] = dims;
        let inconsistent = |offset: usize, reason: String| DecodeError::Inconsistent { offset, reason };
        let expected = match kind {
            MessageKind::VoxelPrior => h
                .checked_mul(w)
                .and_then(|x| x.checked_mul(l))
                .and_then(|x| x.checked_mul(c))
                .and_then(|x| x.checked_mul(4))
                .and_then(|x| x.checked_add(12)),
            MessageKind::HeatmapShare => {
                if (l, c) != (1, 1) {
                    return Err(inconsistent(HEADER_LEN - 12, format!("heatmap dims ({l}, {c}) must be (1, 1)")));
                }
                h.checked_mul(w).and_then(|x| x.checked_mul(4)).and_then(|x| x.checked_add(12))
            }
            MessageKind::InstanceQuery => {
                if c != 0 {
                    return Err(inconsistent(HEADER_LEN - 8, format!("query channel dim must be 0, got {c}")));
                }
                l.checked_mul(8)
            }
            MessageKind::InstanceReply | MessageKind::InstanceBroadcast => {
                c.checked_mul(4).and_then(|x| x.checked_add(12)).and_then(|x| x.checked_mul(l))
            }
        };
        if expected != Some(payload_len) {
            return Err(inconsistent(
                len_at,
                format!("payload_len {payload_len} does not match dims {dims:?} for {kind}"),
            ));
        }
        let remaining = buf.len() - r.pos;
        if remaining < payload_len {
            return Err(DecodeError::Truncated { offset: buf.len(), needed: payload_len - remaining });
        }
        if remaining > payload_len {
            return Err(DecodeError::Trailing { offset: r.pos + payload_len, extra: remaining - payload_len });
        }
        let payload = match kind {
            MessageKind::VoxelPrior | MessageKind::HeatmapShare => {
                let start = r.pos;
                let tag = r.u32()?;
                let cs = r.f32()?;
                let zs = r.f32()?;
                let n = (payload_len - 12) / 4;
                let data = r.f32s(n)?;
                let shape = GridShape::new(h, w, l, c, cs, zs).map_err(|e| inconsistent(start + 4, e.to_string()))?;
                if kind == MessageKind::VoxelPrior {
                    Payload::VoxelPrior(VoxelFeature::new(shape, data, tag).map_err(|e| inconsistent(start + 12, e.to_string()))?)
                } else {
                    Payload::HeatmapShare(
                        Heatmap::new(shape, data, tag, scale as usize).map_err(|e| inconsistent(start + 12, e.to_string()))?,
                    )
                }
            }
            MessageKind::InstanceQuery => {
                let mut positions = Vec::with_capacity(l);
                for _ in 0..l {
                    positions.push(r.position(h, w)?);
                }
                Payload::InstanceQuery { rows: h, cols: w, positions }
            }
            MessageKind::InstanceReply | MessageKind::InstanceBroadcast => {
                let mut instances = Vec::with_capacity(l);
                for _ in 0..l {
                    let (ph, pw) = r.position(h, w)?;
                    let feature = r.f32s(c)?;
                    let at = r.pos;
                    let heat = r.f32()?;
                    if !(0.0..=1.0).contains(&heat) {
                        return Err(inconsistent(at, format!("heat {heat} outside [0, 1]")));
                    }
                    instances.push(InstanceVector { h: ph, w: pw, feature, heat, scale: scale as usize, owner: sender });
                }
                if kind == MessageKind::InstanceReply {
                    Payload::InstanceReply { rows: h, cols: w, channels: c, instances }
                } else {
                    Payload::InstanceBroadcast { rows: h, cols: w, channels: c, instances }
                }
            }
        };
        Ok(Message { sender, receiver, scale, payload })
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take<const N: usize>(&mut self) -> Result<[u8; N], DecodeError> {
        let end = self.pos + N;
        if end > self.buf.len() {
            return Err(DecodeError::Truncated { offset: self.pos, needed: end - self.buf.len() });
        }
        let mut a = [0u8; N];
        a.copy_from_slice(&self.buf[self.pos..end]);
        self.pos = end;
        Ok(a)
    }

    fn u8(&mut self) -> Result<u8, DecodeError> {
        Ok(self.take::<1>()?[0])
    }

    fn u16(&mut self) -> Result<u16, DecodeError> {
        Ok(u16::from_le_bytes(self.take()?))
    }

    fn u32(&mut self) -> Result<u32, DecodeError> {
        Ok(u32::from_le_bytes(self.take()?))
    }

    fn f32(&mut self) -> Result<f32, DecodeError> {
        let at = self.pos;
        let x = f32::from_le_bytes(self.take()?);
        if !x.is_finite() {
            return Err(DecodeError::Inconsistent { offset: at, reason: "non-finite float".into() });
        }
        Ok(x)
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>, DecodeError> {
        (0..n).map(|_| self.f32()).collect()
    }

    fn position(&mut self, rows: usize, cols: usize) -> Result<(usize, usize), DecodeError> {
        let at = self.pos;
        let h = i32::from_le_bytes(self.take()?);
        let w = i32::from_le_bytes(self.take()?);
        if h < 0 || w < 0 || h as usize >= rows || w as usize >= cols {
            return Err(DecodeError::Inconsistent { offset: at, reason: format!("position ({h}, {w}) outside {rows}x{cols}") });
        }
        Ok((h as usize, w as usize))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn reply(k: usize, c: usize) -> Message {
        let instances = (0..k)
            .map(|i| InstanceVector {
                h: i % 8,
                w: i / 8,
                feature: (0..c).map(|j| (i * c + j) as f32 * 0.5 - 3.0).collect(),
                heat: (i as f32 / k as f32).min(1.0),
                scale: 1,
                owner: 7,
            })
            .collect();
        Message {
            sender: 7,
            receiver: 2,
            scale: 1,
            payload: Payload::InstanceReply { rows: 8, cols: 8, channels: c, instances },
        }
    }

    #[test]
    fn reply_payload_size() {
        let m = reply(20, 64);
        assert_eq!(m.payload_len(), 20 * (2 * 4 + 64 * 4 + 4));
        assert_eq!(m.payload_len(), 5360);
        assert_eq!(m.encode().unwrap().len(), HEADER_LEN + 5360);
    }

    #[test]
    fn round_trips() {
        let g = GridShape::new(4, 3, 2, 5, 0.5, 0.25).unwrap();
        let v = VoxelFeature::from_fn(g, 3, |h, w, l, c| (h * 30 + w * 10 + l * 5 + c) as f32 * -0.1).unwrap();
        let hm = Heatmap::from_fn(g, 4, 2, |h, w| (h * 3 + w) as f32 / 12.0).unwrap();
        let msgs = vec![
            Message { sender: 3, receiver: 0, scale: 0, payload: Payload::VoxelPrior(v) },
            Message { sender: 4, receiver: 1, scale: 2, payload: Payload::HeatmapShare(hm) },
            Message {
                sender: 0,
                receiver: 4,
                scale: 0,
                payload: Payload::InstanceQuery { rows: 4, cols: 3, positions: vec![(3, 2), (0, 0)] },
            },
            reply(5, 3),
            Message {
                sender: 7,
                receiver: 2,
                scale: 1,
                payload: Payload::InstanceBroadcast { rows: 8, cols: 8, channels: 0, instances: vec![] },
            },
        ];
        for m in msgs {
            let bytes = m.encode().unwrap();
            assert_eq!(bytes.len(), m.byte_len());
            assert_eq!(Message::decode(&bytes).unwrap(), m);
        }
    }

    #[test]
    fn truncation_and_corruption_are_errors() {
        let bytes = reply(3, 2).encode().unwrap();
        for cut in 0..bytes.len() {
            assert!(Message::decode(&bytes[..cut]).is_err());
        }
        let mut bad = bytes.clone();
        bad[0] ^= 0xff;
        assert!(matches!(Message::decode(&bad), Err(DecodeError::BadMagic { .. })));
        let mut bad = bytes.clone();
        bad[4] = 9;
        assert!(matches!(Message::decode(&bad), Err(DecodeError::BadVersion { offset: 4, .. })));
        let mut bad = bytes.clone();
        bad[6] = 0;
        assert!(matches!(Message::decode(&bad), Err(DecodeError::BadKind { offset: 6, .. })));
        let mut extra = bytes;
        extra.push(0);
        assert!(matches!(Message::decode(&extra), Err(DecodeError::Trailing { .. })));
    }

    #[test]
    fn invalid_payload_is_rejected_before_encoding() {
        let mut m = reply(2, 2);
        if let Payload::InstanceReply { instances, .. } = &mut m.payload {
            instances[0].owner = 99;
        }
        assert!(m.encode().is_err());
    }

    #[test]
    fn kind_codes_round_trip() {
        for k in MessageKind::ALL {
            assert_eq!(MessageKind::from_code(k.code()), Some(k));
        }
        assert_eq!(MessageKind::from_code(0), None);
        assert_eq!(MessageKind::from_code(6), None);
    }
}
