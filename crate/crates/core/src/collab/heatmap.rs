use crate::error::ShapeError;
use crate::fusion::sigmoid;
use crate::grid::{AgentId, BevFeature, Conv3x3, GridShape, ModelDims, WeightSet};
use crate::par;

/// Per-cell object-center confidence.
///
/// Heatmaps produced by a head are in `[0, 1]`; a discrepancy map is in
/// `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    shape: GridShape,
    data: Vec<f32>,
    owner: AgentId,
    scale: usize,
}

impl Heatmap {
    pub fn new(shape: GridShape, data: Vec<f32>, owner: AgentId, scale: usize) -> Result<Self, ShapeError> {
        Self::checked(shape, data, owner, scale, 0.0)
    }

    /// A signed (discrepancy) map with values in `[-1, 1]`.
    pub fn new_signed(shape: GridShape, data: Vec<f32>, owner: AgentId, scale: usize) -> Result<Self, ShapeError> {
        Self::checked(shape, data, owner, scale, -1.0)
    }

    fn checked(shape: GridShape, data: Vec<f32>, owner: AgentId, scale: usize, lo: f32) -> Result<Self, ShapeError> {
        let shape = GridShape { l_bins: 1, ..shape.with_channels(1) };
        if data.len() != shape.cells() {
            return Err(ShapeError::mismatch("heatmap length", shape.cells(), data.len()));
        }
        if let Some(i) = data.iter().position(|v| !(lo..=1.0).contains(v)) {
            return Err(ShapeError::InvalidShape(format!(
                "heat {} at cell {i} outside [{lo}, 1]",
                data[i]
            )));
        }
        Ok(Heatmap { shape, data, owner, scale })
    }

    pub fn from_fn(shape: GridShape, owner: AgentId, scale: usize, f: impl Fn(usize, usize) -> f32) -> Result<Self, ShapeError> {
        let data = (0..shape.h_cells)
            .flat_map(|h| (0..shape.w_cells).map(move |w| (h, w)))
            .map(|(h, w)| f(h, w))
            .collect();
        Self::new(shape, data, owner, scale)
    }

    pub fn shape(&self) -> &GridShape {
        &self.shape
    }

    pub fn rows(&self) -> usize {
        self.shape.h_cells
    }

    pub fn cols(&self) -> usize {
        self.shape.w_cells
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn owner(&self) -> AgentId {
        self.owner
    }

    pub fn scale(&self) -> usize {
        self.scale
    }

    pub fn get(&self, h: usize, w: usize) -> f32 {
        self.data[h * self.shape.w_cells + w]
    }

    pub fn as_bev(&self) -> BevFeature {
        BevFeature::new(self.shape, self.data.clone(), self.owner).expect("heatmap values are finite")
    }

    /// Reinterpret a one-channel plane (e.g. a warped heatmap), clamping
    /// interpolation round-off into `[0, 1]`.
    pub fn from_bev(b: &BevFeature, owner: AgentId, scale: usize) -> Result<Self, ShapeError> {
        if b.channels() != 1 {
            return Err(ShapeError::mismatch("heatmap channels", 1, b.channels()));
        }
        let data = b.data().iter().map(|v| v.clamp(0.0, 1.0)).collect();
        Self::new(*b.shape(), data, owner, scale)
    }
}

/// How [`heatmap_head`] turns features into heat.
#[derive(Debug, Clone, PartialEq)]
pub enum HeatmapHead {
    /// Two 3x3 convolutions `C -> C/2 -> 1`, ReLU between, sigmoid after.
    Conv { conv1: Conv3x3, conv2: Conv3x3 },
    /// Sigmoid of the per-cell channel maximum.
    Proxy,
}

impl HeatmapHead {
    pub fn from_weights(ws: &WeightSet, dims: &ModelDims) -> Result<Self, ShapeError> {
        let hid = dims.heatmap_hidden();
        Ok(HeatmapHead::Conv {
            conv1: ws.conv3x3("hm.conv1", hid, dims.bev_channels)?,
            conv2: ws.conv3x3("hm.conv2", 1, hid)?,
        })
    }
}

pub fn heatmap_head(b: &BevFeature, head: &HeatmapHead, scale: usize) -> Result<Heatmap, ShapeError> {
    let s = *b.shape();
    let (h, w) = (s.h_cells, s.w_cells);
    let data = match head {
        HeatmapHead::Proxy => par::map_range(s.cells(), |i| {
            let cell = &b.data()[i * s.channels..(i + 1) * s.channels];
            sigmoid(cell.iter().copied().fold(f32::NEG_INFINITY, f32::max))
        }),
        HeatmapHead::Conv { conv1, conv2 } => {
            if conv1.in_ch != s.channels || conv2.in_ch != conv1.out_ch || conv2.out_ch != 1 {
                return Err(ShapeError::mismatch(
                    "heatmap head",
                    format!("{} -> hidden -> 1", s.channels),
                    format!("{} -> {} / {} -> {}", conv1.in_ch, conv1.out_ch, conv2.in_ch, conv2.out_ch),
                ));
            }
            let mut hidden = conv1.apply(b.data(), h, w);
            for x in &mut hidden {
                *x = x.max(0.0);
            }
            conv2.apply(&hidden, h, w).into_iter().map(sigmoid).collect()
        }
    };
    Heatmap::new(s, data, b.frame(), scale)
}

/// `h_rc - h_sd`, a signed map in `[-1, 1]` owned by the receiver.
pub fn discrepancy(h_rc: &Heatmap, h_sd: &Heatmap) -> Result<Heatmap, ShapeError> {
    if (h_rc.rows(), h_rc.cols()) != (h_sd.rows(), h_sd.cols()) || h_rc.scale != h_sd.scale {
        return Err(ShapeError::mismatch(
            "discrepancy operands",
            format!("{}x{} @ scale {}", h_rc.rows(), h_rc.cols(), h_rc.scale),
            format!("{}x{} @ scale {}", h_sd.rows(), h_sd.cols(), h_sd.scale),
        ));
    }
    let data = h_rc.data.iter().zip(&h_sd.data).map(|(a, b)| a - b).collect();
    Heatmap::checked(h_rc.shape, data, h_rc.owner, h_rc.scale, -1.0)
}
