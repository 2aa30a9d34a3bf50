use crate::error::ShapeError;
use crate::grid::{GridShape, Linear, VoxelFeature};
use crate::par;

#[inline]
pub fn sigmoid(x: f32) -> f32 {
    (1.0 / (1.0 + (-(x as f64)).exp())) as f32
}

/// Per-voxel occupancy probability, one value per cell.
#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyGrid {
    shape: GridShape,
    data: Vec<f32>,
}

impl OccupancyGrid {
    pub fn new(shape: GridShape, data: Vec<f32>) -> Result<Self, ShapeError> {
        let shape = shape.with_channels(1);
        if data.len() != shape.voxel_len() {
            return Err(ShapeError::mismatch("occupancy length", shape.voxel_len(), data.len()));
        }
        if data.iter().any(|x| !(0.0..=1.0).contains(x)) {
            return Err(ShapeError::InvalidShape("occupancy outside [0, 1]".into()));
        }
        Ok(OccupancyGrid { shape, data })
    }

    pub fn shape(&self) -> &GridShape {
        &self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn get(&self, h: usize, w: usize, l: usize) -> f32 {
        self.data[(h * self.shape.w_cells + w) * self.shape.l_bins + l]
    }
}

/// `sigmoid(W v + b)` per voxel; `head` maps `C -> 1`.
pub fn occupancy_head(v: &VoxelFeature, head: &Linear) -> Result<OccupancyGrid, ShapeError> {
    let s = *v.shape();
    if head.in_dim != s.channels || head.out_dim != 1 {
        return Err(ShapeError::mismatch(
            "occupancy head",
            format!("1x{}", s.channels),
            format!("{}x{}", head.out_dim, head.in_dim),
        ));
    }
    let mut data = vec![0.0f32; s.cells() * s.l_bins];
    let c = s.channels;
    par::for_each_chunk(&mut data, s.w_cells * s.l_bins, |h, chunk| {
        let mut o = [0.0f32];
        for (i, x) in chunk.iter_mut().enumerate() {
            let base = (h * s.w_cells * s.l_bins + i) * c;
            head.apply_into(&v.data()[base..base + c], &mut o);
            *x = sigmoid(o[0]);
        }
    });
    Ok(OccupancyGrid { shape: s.with_channels(1), data })
}

/// `v_img * occ + P(v_mix)`; `proj` maps the mixed LiDAR channels onto the
/// image channels.
pub fn occ_gate(v_img: &VoxelFeature, occ: &OccupancyGrid, v_mix: &VoxelFeature, proj: &Linear) -> Result<VoxelFeature, ShapeError> {
    let si = *v_img.shape();
    let sm = *v_mix.shape();
    let so = occ.shape;
    let dims = |g: &GridShape| (g.h_cells, g.w_cells, g.l_bins);
    if dims(&si) != dims(&sm) || dims(&si) != dims(&so) {
        return Err(ShapeError::mismatch(
            "occ gate grids",
            format!("{:?}", dims(&si)),
            format!("mix {:?}, occ {:?}", dims(&sm), dims(&so)),
        ));
    }
    if proj.in_dim != sm.channels || proj.out_dim != si.channels {
        return Err(ShapeError::mismatch(
            "gate projection",
            format!("{}x{}", si.channels, sm.channels),
            format!("{}x{}", proj.out_dim, proj.in_dim),
        ));
    }
    let (ci, cm) = (si.channels, sm.channels);
    let mut out = VoxelFeature::zeros(si, v_img.frame());
    par::for_each_chunk(out.data_mut(), si.w_cells * si.l_bins * ci, |h, chunk| {
        for (i, o) in chunk.chunks_exact_mut(ci).enumerate() {
            let cell = h * si.w_cells * si.l_bins + i;
            proj.apply_into(&v_mix.data()[cell * cm..(cell + 1) * cm], o);
            let g = occ.data[cell];
            for (x, img) in o.iter_mut().zip(&v_img.data()[cell * ci..(cell + 1) * ci]) {
                *x += img * g;
            }
        }
    });
    Ok(out)
}
