//! Rigid re-gridding of voxel and BEV features between agent frames.

use crate::grid::{AgentId, BevFeature, GridShape, Pose, VoxelFeature};
use crate::par;

#[inline]
fn lerp(a: f32, b: f32, t: f32) -> f32 {
    a + t * (b - a)
}

/// Resample `v` onto `target` (channels taken from `v`). Each target cell
/// center is mapped back into the source frame through `relative_pose`
/// (the source frame's pose inside the target frame) and trilinearly
/// sampled; samples outside the source grid read as zero.
pub fn warp_to_frame(
    v: &VoxelFeature,
    relative_pose: &Pose,
    target: GridShape,
    target_frame: AgentId,
) -> VoxelFeature {
    let src = *v.shape();
    let c = src.channels;
    let target = target.with_channels(c);
    let mut out = VoxelFeature::zeros(target, target_frame);
    let row = target.w_cells * target.l_bins * c;
    let sample = |h: i64, w: i64, l: i64, ch: usize| -> f32 {
        if h < 0
            || w < 0
            || l < 0
            || h >= src.h_cells as i64
            || w >= src.w_cells as i64
            || l >= src.l_bins as i64
        {
            0.0
        } else {
            v.get(h as usize, w as usize, l as usize, ch)
        }
    };
    par::for_each_chunk(out.data_mut(), row, |h, chunk| {
        for w in 0..target.w_cells {
            let (x, y) = target.cell_center(h, w);
            for l in 0..target.l_bins {
                let z = target.bin_center_z(l);
                let p = relative_pose.inverse_transform_point([x, y, z]);
                let (fh, fw) = src.continuous_index(p[0], p[1]);
                let fl = p[2] / src.z_size_m as f64 - 0.5;
                let (h0, w0, l0) = (fh.floor(), fw.floor(), fl.floor());
                let (th, tw, tl) = ((fh - h0) as f32, (fw - w0) as f32, (fl - l0) as f32);
                let (h0, w0, l0) = (h0 as i64, w0 as i64, l0 as i64);
                let base = (w * target.l_bins + l) * c;
                for ch in 0..c {
                    let s = |dh, dw, dl| sample(h0 + dh, w0 + dw, l0 + dl, ch);
                    let a = lerp(s(0, 0, 0), s(0, 0, 1), tl);
                    let b = lerp(s(0, 1, 0), s(0, 1, 1), tl);
                    let cc = lerp(s(1, 0, 0), s(1, 0, 1), tl);
                    let d = lerp(s(1, 1, 0), s(1, 1, 1), tl);
                    chunk[base + ch] = lerp(lerp(a, b, tw), lerp(cc, d, tw), th);
                }
            }
        }
    });
    out
}

/// Planar counterpart of [`warp_to_frame`] with bilinear sampling.
pub fn warp_bev_to_frame(
    b: &BevFeature,
    relative_pose: &Pose,
    target: GridShape,
    target_frame: AgentId,
) -> BevFeature {
    let src = *b.shape();
    let c = src.channels;
    let target = target.with_channels(c);
    let mut out = BevFeature::zeros(target, target_frame);
    let sample = |h: i64, w: i64, ch: usize| -> f32 {
        if h < 0 || w < 0 || h >= src.h_cells as i64 || w >= src.w_cells as i64 {
            0.0
        } else {
            b.get(h as usize, w as usize, ch)
        }
    };
    par::for_each_chunk(out.data_mut(), target.w_cells * c, |h, chunk| {
        for w in 0..target.w_cells {
            let (x, y) = target.cell_center(h, w);
            let p = relative_pose.inverse_transform_point([x, y, 0.0]);
            let (fh, fw) = src.continuous_index(p[0], p[1]);
            let (h0, w0) = (fh.floor(), fw.floor());
            let (th, tw) = ((fh - h0) as f32, (fw - w0) as f32);
            let (h0, w0) = (h0 as i64, w0 as i64);
            for ch in 0..c {
                let top = lerp(sample(h0, w0, ch), sample(h0, w0 + 1, ch), tw);
                let bot = lerp(sample(h0 + 1, w0, ch), sample(h0 + 1, w0 + 1, ch), tw);
                chunk[w * c + ch] = lerp(top, bot, th);
            }
        }
    });
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(shape: GridShape) -> VoxelFeature {
        VoxelFeature::from_fn(shape, 1, |h, w, l, c| {
            1.0 + h as f32 * 0.5 + w as f32 * 0.25 + l as f32 * 3.0 - c as f32
        })
        .unwrap()
    }

    #[test]
    fn identity_is_exact() {
        let s = GridShape::new(6, 5, 3, 2, 0.4, 0.5).unwrap();
        let v = ramp(s);
        let out = warp_to_frame(&v, &Pose::identity(), s, 1);
        assert_eq!(out.data(), v.data());
    }

    #[test]
    fn one_cell_translation_shifts() {
        let s = GridShape::new(5, 4, 2, 1, 2.0, 1.0).unwrap();
        let v = ramp(s);
        let out = warp_to_frame(&v, &Pose::planar(2.0, 0.0, 0.0), s, 0);
        for w in 0..4 {
            for l in 0..2 {
                assert_eq!(out.get(0, w, l, 0), 0.0);
                for h in 1..5 {
                    assert_eq!(out.get(h, w, l, 0), v.get(h - 1, w, l, 0));
                }
            }
        }
    }

    #[test]
    fn quarter_turn_matches_index_permutation() {
        let n = 6;
        let s = GridShape::new(n, n, 2, 2, 1.0, 1.0).unwrap();
        let v = ramp(s);
        let out = warp_to_frame(&v, &Pose::planar(0.0, 0.0, 90.0), s, 0);
        // a source point (x, y) lands at (-y, x): target (h, w) reads source (w, n-1-h)
        for h in 0..n {
            for w in 0..n {
                for l in 0..2 {
                    for c in 0..2 {
                        let expect = v.get(w, n - 1 - h, l, c);
                        assert!((out.get(h, w, l, c) - expect).abs() < 1e-5);
                    }
                }
            }
        }
    }

    #[test]
    fn bev_warp_matches_voxel_warp_on_single_bin() {
        let s = GridShape::new(7, 7, 1, 3, 1.0, 1.0).unwrap();
        let v = ramp(s);
        let b = BevFeature::new(s, v.data().to_vec(), 1).unwrap();
        let pose = Pose::planar(0.7, -1.3, 17.0);
        let wv = warp_to_frame(&v, &pose, s, 0);
        let wb = warp_bev_to_frame(&b, &pose, s, 0);
        // voxel warp samples z at the bin center, which maps to the same bin
        for (a, b) in wv.data().iter().zip(wb.data()) {
            assert!((a - b).abs() < 1e-5);
        }
    }
}
