use serde::{Deserialize, Serialize};

use crate::error::ShapeError;

/// Agent identifier; also names the coordinate frame a grid lives in.
pub type AgentId = u32;

/// Dimensions and metric resolution of a dense grid.
///
/// Cell `(h, w, l)` has its center at
/// `x = (h + 0.5 - H/2) * cell_size_m`, `y = (w + 0.5 - W/2) * cell_size_m`,
/// `z = (l + 0.5) * z_size_m` in the owning agent's frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridShape {
    pub h_cells: usize,
    pub w_cells: usize,
    pub l_bins: usize,
    pub channels: usize,
    pub cell_size_m: f32,
    pub z_size_m: f32,
}

impl GridShape {
    pub fn new(
        h_cells: usize,
        w_cells: usize,
        l_bins: usize,
        channels: usize,
        cell_size_m: f32,
        z_size_m: f32,
    ) -> Result<Self, ShapeError> {
        let s = GridShape {
            h_cells,
            w_cells,
            l_bins,
            channels,
            cell_size_m,
            z_size_m,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), ShapeError> {
        if self.h_cells == 0 || self.w_cells == 0 || self.l_bins == 0 || self.channels == 0 {
            return Err(ShapeError::InvalidShape(format!(
                "all counts must be >= 1, got {}x{}x{}x{}",
                self.h_cells, self.w_cells, self.l_bins, self.channels
            )));
        }
        if !(self.cell_size_m > 0.0 && self.cell_size_m.is_finite())
            || !(self.z_size_m > 0.0 && self.z_size_m.is_finite())
        {
            return Err(ShapeError::InvalidShape(format!(
                "cell sizes must be positive, got {} / {}",
                self.cell_size_m, self.z_size_m
            )));
        }
        Ok(())
    }

    pub fn with_channels(mut self, channels: usize) -> Self {
        self.channels = channels;
        self
    }

    pub fn cells(&self) -> usize {
        self.h_cells * self.w_cells
    }

    pub fn voxel_len(&self) -> usize {
        self.h_cells * self.w_cells * self.l_bins * self.channels
    }

    pub fn bev_len(&self) -> usize {
        self.h_cells * self.w_cells * self.channels
    }

    /// Metric BEV center of cell `(h, w)`.
    pub fn cell_center(&self, h: usize, w: usize) -> (f64, f64) {
        let cs = self.cell_size_m as f64;
        (
            (h as f64 + 0.5 - self.h_cells as f64 / 2.0) * cs,
            (w as f64 + 0.5 - self.w_cells as f64 / 2.0) * cs,
        )
    }

    pub fn bin_center_z(&self, l: usize) -> f64 {
        (l as f64 + 0.5) * self.z_size_m as f64
    }

    /// Continuous (h, w) index of a metric BEV point; integral at cell centers.
    pub fn continuous_index(&self, x: f64, y: f64) -> (f64, f64) {
        let cs = self.cell_size_m as f64;
        (
            x / cs + self.h_cells as f64 / 2.0 - 0.5,
            y / cs + self.w_cells as f64 / 2.0 - 0.5,
        )
    }

    /// The cell containing metric point `(x, y)`, if inside the grid.
    pub fn cell_of(&self, x: f64, y: f64) -> Option<(usize, usize)> {
        let (fh, fw) = self.continuous_index(x, y);
        let h = (fh + 0.5).floor();
        let w = (fw + 0.5).floor();
        if h < 0.0 || w < 0.0 || h >= self.h_cells as f64 || w >= self.w_cells as f64 {
            return None;
        }
        Some((h as usize, w as usize))
    }

    /// Metric half extents of the BEV plane.
    pub fn half_extent(&self) -> (f64, f64) {
        let cs = self.cell_size_m as f64;
        (
            self.h_cells as f64 * cs / 2.0,
            self.w_cells as f64 * cs / 2.0,
        )
    }
}

fn check_finite(data: &[f32]) -> Result<(), ShapeError> {
    match data.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(ShapeError::NonFinite(i)),
        None => Ok(()),
    }
}

/// Dense `H x W x L x C` voxel grid, row-major in `(h, w, l, c)`.
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelFeature {
    shape: GridShape,
    data: Vec<f32>,
    frame: AgentId,
}

impl VoxelFeature {
    pub fn new(shape: GridShape, data: Vec<f32>, frame: AgentId) -> Result<Self, ShapeError> {
        shape.validate()?;
        if data.len() != shape.voxel_len() {
            return Err(ShapeError::mismatch(
                "voxel data length",
                shape.voxel_len(),
                data.len(),
            ));
        }
        check_finite(&data)?;
        Ok(VoxelFeature { shape, data, frame })
    }

    pub fn zeros(shape: GridShape, frame: AgentId) -> Self {
        VoxelFeature {
            shape,
            data: vec![0.0; shape.voxel_len()],
            frame,
        }
    }

    /// Build from a closure over `(h, w, l, c)`.
    pub fn from_fn(
        shape: GridShape,
        frame: AgentId,
        mut f: impl FnMut(usize, usize, usize, usize) -> f32,
    ) -> Result<Self, ShapeError> {
        let mut data = Vec::with_capacity(shape.voxel_len());
        for h in 0..shape.h_cells {
            for w in 0..shape.w_cells {
                for l in 0..shape.l_bins {
                    for c in 0..shape.channels {
                        data.push(f(h, w, l, c));
                    }
                }
            }
        }
        Self::new(shape, data, frame)
    }

    pub fn shape(&self) -> &GridShape {
        &self.shape
    }

    pub fn frame(&self) -> AgentId {
        self.frame
    }

    pub fn set_frame(&mut self, frame: AgentId) {
        self.frame = frame;
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub(crate) fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn index(&self, h: usize, w: usize, l: usize, c: usize) -> usize {
        let s = &self.shape;
        ((h * s.w_cells + w) * s.l_bins + l) * s.channels + c
    }

    #[inline]
    pub fn get(&self, h: usize, w: usize, l: usize, c: usize) -> f32 {
        self.data[self.index(h, w, l, c)]
    }

    /// Feature vector of one voxel.
    #[inline]
    pub fn cell(&self, h: usize, w: usize, l: usize) -> &[f32] {
        let i = self.index(h, w, l, 0);
        &self.data[i..i + self.shape.channels]
    }

    #[inline]
    pub fn cell_mut(&mut self, h: usize, w: usize, l: usize) -> &mut [f32] {
        let i = self.index(h, w, l, 0);
        let c = self.shape.channels;
        &mut self.data[i..i + c]
    }

    pub fn byte_len(&self) -> usize {
        self.data.len() * 4
    }
}

/// Dense `H x W x C` bird's-eye-view plane, row-major in `(h, w, c)`.
#[derive(Debug, Clone, PartialEq)]
pub struct BevFeature {
    shape: GridShape,
    data: Vec<f32>,
    frame: AgentId,
}

impl BevFeature {
    pub fn new(shape: GridShape, data: Vec<f32>, frame: AgentId) -> Result<Self, ShapeError> {
        shape.validate()?;
        if data.len() != shape.bev_len() {
            return Err(ShapeError::mismatch(
                "bev data length",
                shape.bev_len(),
                data.len(),
            ));
        }
        check_finite(&data)?;
        Ok(BevFeature { shape, data, frame })
    }

    pub fn zeros(shape: GridShape, frame: AgentId) -> Self {
        BevFeature {
            shape,
            data: vec![0.0; shape.bev_len()],
            frame,
        }
    }

    pub fn from_fn(
        shape: GridShape,
        frame: AgentId,
        mut f: impl FnMut(usize, usize, usize) -> f32,
    ) -> Result<Self, ShapeError> {
        let mut data = Vec::with_capacity(shape.bev_len());
        for h in 0..shape.h_cells {
            for w in 0..shape.w_cells {
                for c in 0..shape.channels {
                    data.push(f(h, w, c));
                }
            }
        }
        Self::new(shape, data, frame)
    }

    pub fn shape(&self) -> &GridShape {
        &self.shape
    }

    pub fn frame(&self) -> AgentId {
        self.frame
    }

    pub fn set_frame(&mut self, frame: AgentId) {
        self.frame = frame;
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub(crate) fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn channels(&self) -> usize {
        self.shape.channels
    }

    #[inline]
    pub fn index(&self, h: usize, w: usize, c: usize) -> usize {
        (h * self.shape.w_cells + w) * self.shape.channels + c
    }

    #[inline]
    pub fn get(&self, h: usize, w: usize, c: usize) -> f32 {
        self.data[self.index(h, w, c)]
    }

    #[inline]
    pub fn cell(&self, h: usize, w: usize) -> &[f32] {
        let i = self.index(h, w, 0);
        &self.data[i..i + self.shape.channels]
    }

    #[inline]
    pub fn cell_mut(&mut self, h: usize, w: usize) -> &mut [f32] {
        let i = self.index(h, w, 0);
        let c = self.shape.channels;
        &mut self.data[i..i + c]
    }

    pub fn byte_len(&self) -> usize {
        self.data.len() * 4
    }
}

/// Plain row-major matrix used by the attention kernel.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f32>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f32>) -> Result<Self, ShapeError> {
        if data.len() != rows * cols {
            return Err(ShapeError::mismatch(
                "matrix data length",
                rows * cols,
                data.len(),
            ));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_rows(rows: &[Vec<f32>]) -> Result<Self, ShapeError> {
        let cols = rows.first().map_or(0, |r| r.len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(ShapeError::mismatch("matrix row length", cols, r.len()));
            }
            data.extend_from_slice(r);
        }
        Ok(Matrix {
            rows: rows.len(),
            cols,
            data,
        })
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f32] {
        let c = self.cols;
        &mut self.data[i * c..(i + 1) * c]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_validation() {
        assert!(GridShape::new(0, 1, 1, 1, 1.0, 1.0).is_err());
        assert!(GridShape::new(1, 1, 1, 1, 0.0, 1.0).is_err());
        assert!(GridShape::new(1, 1, 1, 1, 1.0, -1.0).is_err());
        assert!(GridShape::new(2, 3, 4, 5, 0.5, 0.25).is_ok());
    }

    #[test]
    fn rejects_nan_and_wrong_length() {
        let s = GridShape::new(1, 1, 1, 2, 1.0, 1.0).unwrap();
        assert!(VoxelFeature::new(s, vec![0.0], 0).is_err());
        assert_eq!(
            VoxelFeature::new(s, vec![0.0, f32::NAN], 0),
            Err(ShapeError::NonFinite(1))
        );
        assert!(BevFeature::new(s, vec![1.0, f32::INFINITY], 0).is_err());
    }

    #[test]
    fn layout_is_hwlc_row_major() {
        let s = GridShape::new(2, 3, 4, 5, 1.0, 1.0).unwrap();
        let v = VoxelFeature::from_fn(s, 0, |h, w, l, c| (h * 1000 + w * 100 + l * 10 + c) as f32)
            .unwrap();
        assert_eq!(v.data()[v.index(1, 2, 3, 4)], 1234.0);
        assert_eq!(v.index(1, 2, 3, 4), ((3 + 2) * 4 + 3) * 5 + 4);
        assert_eq!(v.cell(1, 0, 2), &[1020.0, 1021.0, 1022.0, 1023.0, 1024.0]);
    }

    #[test]
    fn cell_center_round_trips() {
        let s = GridShape::new(64, 32, 1, 1, 0.5, 1.0).unwrap();
        for &(h, w) in &[(0, 0), (10, 31), (63, 5)] {
            let (x, y) = s.cell_center(h, w);
            assert_eq!(s.cell_of(x, y), Some((h, w)));
            let (fh, fw) = s.continuous_index(x, y);
            assert_eq!((fh, fw), (h as f64, w as f64));
        }
        assert_eq!(s.cell_of(100.0, 0.0), None);
    }
}
