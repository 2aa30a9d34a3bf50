use crate::error::ShapeError;
use crate::grid::{BevFeature, GridShape, Linear, VoxelFeature};
use crate::par;

/// Exact mean for power-of-two sized groups of equal values: pairwise
/// summation then a single division.
pub(crate) fn pairwise_sum(xs: &mut [f32]) -> f32 {
    let mut n = xs.len();
    if n == 0 {
        return 0.0;
    }
    while n > 1 {
        let half = n / 2;
        for i in 0..half {
            xs[i] = xs[2 * i] + xs[2 * i + 1];
        }
        if n % 2 == 1 {
            xs[half] = xs[n - 1];
            n = half + 1;
        } else {
            n = half;
        }
    }
    xs[0]
}

#[inline]
pub(crate) fn lerp(a: f32, b: f32, t: f32) -> f32 {
    a + t * (b - a)
}

/// Sum over the vertical bins, then a per-cell linear projection.
pub fn collapse_to_bev(v: &VoxelFeature, proj: &Linear) -> Result<BevFeature, ShapeError> {
    let s = *v.shape();
    if proj.in_dim != s.channels {
        return Err(ShapeError::mismatch(
            "collapse projection input",
            s.channels,
            proj.in_dim,
        ));
    }
    let out_shape = s.with_channels(proj.out_dim);
    let mut out = BevFeature::zeros(out_shape, v.frame());
    let c = s.channels;
    par::for_each_chunk(out.data_mut(), s.w_cells * proj.out_dim, |h, chunk| {
        let mut acc = vec![0.0f32; c];
        for w in 0..s.w_cells {
            acc.iter_mut().for_each(|a| *a = 0.0);
            for l in 0..s.l_bins {
                for (a, x) in acc.iter_mut().zip(v.cell(h, w, l)) {
                    *a += x;
                }
            }
            proj.apply_into(&acc, &mut chunk[w * proj.out_dim..(w + 1) * proj.out_dim]);
        }
    });
    Ok(out)
}

/// Allowed BEV resampling factors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Resample {
    Down2,
    Down4,
    Up2,
    Up4,
}

impl Resample {
    /// Parse a rational factor `num/den`.
    pub fn from_ratio(num: u32, den: u32) -> Option<Self> {
        match (num, den) {
            (1, 2) => Some(Resample::Down2),
            (1, 4) => Some(Resample::Down4),
            (2, 1) => Some(Resample::Up2),
            (4, 1) => Some(Resample::Up4),
            _ => None,
        }
    }

    /// Downsample by `2^s` (s in 0..=2); `None` for identity.
    pub fn down_pow2(s: usize) -> Option<Self> {
        match s {
            1 => Some(Resample::Down2),
            2 => Some(Resample::Down4),
            _ => None,
        }
    }

    pub fn up_pow2(s: usize) -> Option<Self> {
        match s {
            1 => Some(Resample::Up2),
            2 => Some(Resample::Up4),
            _ => None,
        }
    }
}

fn pool2(b: &BevFeature) -> BevFeature {
    let s = *b.shape();
    let (oh, ow) = (s.h_cells.div_ceil(2), s.w_cells.div_ceil(2));
    let mut shape = s;
    shape.h_cells = oh;
    shape.w_cells = ow;
    shape.cell_size_m = s.cell_size_m * 2.0;
    let c = s.channels;
    let mut out = BevFeature::zeros(shape, b.frame());
    par::for_each_chunk(out.data_mut(), ow * c, |h, chunk| {
        let mut buf = [0.0f32; 4];
        for w in 0..ow {
            for ch in 0..c {
                let mut n = 0;
                for dh in 0..2 {
                    for dw in 0..2 {
                        let (sh, sw) = (2 * h + dh, 2 * w + dw);
                        if sh < s.h_cells && sw < s.w_cells {
                            buf[n] = b.get(sh, sw, ch);
                            n += 1;
                        }
                    }
                }
                chunk[w * c + ch] = pairwise_sum(&mut buf[..n]) / n as f32;
            }
        }
    });
    out
}

/// Source coordinate for output index `i` under upsampling by `f`
/// (half-pixel centers, clamped to the edge).
fn up_coord(i: usize, f: usize, n: usize) -> (usize, usize, f32) {
    let src = ((i as f64 + 0.5) / f as f64 - 0.5).clamp(0.0, (n - 1) as f64);
    let i0 = src.floor() as usize;
    let i1 = (i0 + 1).min(n - 1);
    (i0, i1, (src - i0 as f64) as f32)
}

fn upsample(b: &BevFeature, f: usize) -> BevFeature {
    let s = *b.shape();
    let mut shape = s;
    shape.h_cells = s.h_cells * f;
    shape.w_cells = s.w_cells * f;
    shape.cell_size_m = s.cell_size_m / f as f32;
    let c = s.channels;
    let mut out = BevFeature::zeros(shape, b.frame());
    par::for_each_chunk(out.data_mut(), shape.w_cells * c, |h, chunk| {
        let (h0, h1, th) = up_coord(h, f, s.h_cells);
        for w in 0..shape.w_cells {
            let (w0, w1, tw) = up_coord(w, f, s.w_cells);
            for ch in 0..c {
                let top = lerp(b.get(h0, w0, ch), b.get(h0, w1, ch), tw);
                let bot = lerp(b.get(h1, w0, ch), b.get(h1, w1, ch), tw);
                chunk[w * c + ch] = lerp(top, bot, th);
            }
        }
    });
    out
}

/// Downsample with 2x2 mean pooling (partial windows at odd edges average
/// the cells present) or upsample bilinearly.
pub fn resample_bev(b: &BevFeature, factor: Resample) -> Result<BevFeature, ShapeError> {
    let out = match factor {
        Resample::Down2 => pool2(b),
        Resample::Down4 => pool2(&pool2(b)),
        Resample::Up2 => upsample(b, 2),
        Resample::Up4 => upsample(b, 4),
    };
    if out.shape().h_cells == 0 || out.shape().w_cells == 0 {
        return Err(ShapeError::InvalidShape("resampled grid is empty".into()));
    }
    Ok(out)
}

/// Crop (or zero-pad) a BEV plane to `h x w` keeping the top-left origin.
pub fn fit_bev(b: &BevFeature, target: GridShape) -> BevFeature {
    let s = *b.shape();
    let target = target.with_channels(s.channels);
    if s.h_cells == target.h_cells && s.w_cells == target.w_cells {
        // keep metric resolution of the target
        return BevFeature::new(target, b.data().to_vec(), b.frame()).expect("same length");
    }
    let mut out = BevFeature::zeros(target, b.frame());
    for h in 0..target.h_cells.min(s.h_cells) {
        for w in 0..target.w_cells.min(s.w_cells) {
            out.cell_mut(h, w).copy_from_slice(b.cell(h, w));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn shape(h: usize, w: usize, l: usize, c: usize) -> GridShape {
        GridShape::new(h, w, l, c, 1.0, 1.0).unwrap()
    }

    #[test]
    fn collapse_single_bin_identity() {
        let s = shape(3, 2, 1, 4);
        let v = VoxelFeature::from_fn(s, 0, |h, w, _, c| (h * 10 + w) as f32 - c as f32).unwrap();
        let b = collapse_to_bev(&v, &Linear::identity(4, 4)).unwrap();
        assert_eq!(b.data(), v.data());
    }

    #[test]
    fn collapse_zero_voxel_gives_bias() {
        let s = shape(2, 2, 3, 2);
        let v = VoxelFeature::zeros(s, 0);
        let mut p = Linear::identity(3, 2);
        p.bias = vec![0.5, -1.0, 2.0];
        let b = collapse_to_bev(&v, &p).unwrap();
        for h in 0..2 {
            for w in 0..2 {
                assert_eq!(b.cell(h, w), &[0.5, -1.0, 2.0]);
            }
        }
    }

    #[test]
    fn collapse_hand_summed_fixture() {
        // 2x2 cells, L=2, C=2; values chosen by hand
        let s = shape(2, 2, 2, 2);
        let data = vec![
            1.0, 2.0, 3.0, 4.0, // (0,0): l0, l1
            -1.0, 0.5, 1.0, 0.5, // (0,1)
            10.0, 0.0, 0.0, 10.0, // (1,0)
            0.25, 0.25, 0.75, -0.25, // (1,1)
        ];
        let v = VoxelFeature::new(s, data, 0).unwrap();
        let b = collapse_to_bev(&v, &Linear::identity(2, 2)).unwrap();
        assert_eq!(b.data(), &[4.0, 6.0, 0.0, 1.0, 10.0, 10.0, 1.0, 0.0]);
    }

    #[test]
    fn collapse_rejects_bad_projection() {
        let v = VoxelFeature::zeros(shape(1, 1, 1, 3), 0);
        assert!(collapse_to_bev(&v, &Linear::identity(3, 2)).is_err());
    }

    #[test]
    fn pool_known_values() {
        let b = BevFeature::new(shape(2, 2, 1, 1), vec![1.0, 3.0, 5.0, 7.0], 0).unwrap();
        let d = resample_bev(&b, Resample::Down2).unwrap();
        assert_eq!(d.shape().h_cells, 1);
        assert_eq!(d.data(), &[4.0]);
        assert_eq!(d.shape().cell_size_m, 2.0);
    }

    #[test]
    fn constants_survive_every_factor() {
        for &val in &[0.1f32, -3.7, 1e-3, 12345.678] {
            let b = BevFeature::from_fn(shape(8, 6, 1, 3), 0, |_, _, _| val).unwrap();
            for f in [Resample::Down2, Resample::Down4, Resample::Up2, Resample::Up4] {
                let r = resample_bev(&b, f).unwrap();
                assert!(r.data().iter().all(|&x| x == val), "{f:?}");
            }
            let c = BevFeature::from_fn(shape(4, 4, 1, 1), 0, |_, _, _| val).unwrap();
            let rt = resample_bev(&resample_bev(&c, Resample::Down2).unwrap(), Resample::Up2).unwrap();
            assert_eq!(rt.data(), c.data());
        }
    }

    #[test]
    fn odd_dims_use_ceiling() {
        let b = BevFeature::from_fn(shape(5, 3, 1, 1), 0, |h, w, _| (h * 3 + w) as f32).unwrap();
        let d = resample_bev(&b, Resample::Down2).unwrap();
        assert_eq!((d.shape().h_cells, d.shape().w_cells), (3, 2));
        // bottom-right window holds the single cell (4, 2)
        assert_eq!(d.get(2, 1, 0), 14.0);
        let d4 = resample_bev(&b, Resample::Down4).unwrap();
        assert_eq!((d4.shape().h_cells, d4.shape().w_cells), (2, 1));
    }

    #[test]
    fn upsample_interpolates_between_centers() {
        let b = BevFeature::new(shape(1, 2, 1, 1), vec![0.0, 4.0], 0).unwrap();
        let u = resample_bev(&b, Resample::Up2).unwrap();
        assert_eq!(u.data(), &[0.0, 1.0, 3.0, 4.0, 0.0, 1.0, 3.0, 4.0]);
    }
}
