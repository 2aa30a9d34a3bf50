use crate::error::ShapeError;
use crate::grid::{attend_row, BevFeature, Linear};
use crate::par;

/// Weights of the LiDAR/camera BEV fusion block.
#[derive(Debug, Clone, PartialEq)]
pub struct HmfWeights {
    /// `C x C_L` expansion of the LiDAR plane.
    pub expand_lidar: Linear,
    /// `C x C_I` expansion of the camera plane.
    pub expand_camera: Linear,
    /// `C x 2C` projection of the concatenated planes.
    pub cat: Linear,
    /// `C x C` layers applied to the attention output, ReLU between layers.
    pub mlp: Vec<Linear>,
    /// Side of the square key window around each cell (odd, 1 = per-cell).
    pub window: usize,
}

impl HmfWeights {
    pub fn identity(c: usize, c_lidar: usize, c_cam: usize, mlp_layers: usize) -> Self {
        HmfWeights {
            expand_lidar: Linear::identity(c, c_lidar),
            expand_camera: Linear::identity(c, c_cam),
            cat: Linear::identity(c, 2 * c),
            mlp: (0..mlp_layers).map(|_| Linear::identity(c, c)).collect(),
            window: 1,
        }
    }

    pub fn channels(&self) -> usize {
        self.cat.out_dim
    }

    fn validate(&self, c_lidar: usize, c_cam: usize) -> Result<(), ShapeError> {
        let c = self.channels();
        let check = |name: &'static str, l: &Linear, o: usize, i: usize| {
            if l.out_dim != o || l.in_dim != i {
                Err(ShapeError::mismatch(name, format!("{o}x{i}"), format!("{}x{}", l.out_dim, l.in_dim)))
            } else {
                Ok(())
            }
        };
        check("hmf lidar expansion", &self.expand_lidar, c, c_lidar)?;
        check("hmf camera expansion", &self.expand_camera, c, c_cam)?;
        check("hmf concat projection", &self.cat, c, 2 * c)?;
        for m in &self.mlp {
            check("hmf mlp layer", m, c, c)?;
        }
        if self.window.is_multiple_of(2) {
            return Err(ShapeError::InvalidShape(format!("hmf window must be odd, got {}", self.window)));
        }
        Ok(())
    }
}

/// Fuse LiDAR and camera BEV planes: concat branch plus a LiDAR-queried
/// cross-modal attention branch with residual.
pub fn hmf(b_lidar: &BevFeature, b_img: &BevFeature, w: &HmfWeights) -> Result<BevFeature, ShapeError> {
    let sl = *b_lidar.shape();
    let si = *b_img.shape();
    if (sl.h_cells, sl.w_cells) != (si.h_cells, si.w_cells) {
        return Err(ShapeError::mismatch(
            "hmf plane dims",
            format!("{}x{}", sl.h_cells, sl.w_cells),
            format!("{}x{}", si.h_cells, si.w_cells),
        ));
    }
    w.validate(sl.channels, si.channels)?;
    let c = w.channels();
    let el = w.expand_lidar.apply_rows(b_lidar.data());
    let ei = w.expand_camera.apply_rows(b_img.data());
    let (hn, wn) = (sl.h_cells, sl.w_cells);
    let r = (w.window / 2) as i64;
    let mut out = BevFeature::zeros(sl.with_channels(c), b_lidar.frame());
    par::for_each_chunk(out.data_mut(), wn * c, |h, chunk| {
        let mut cat_in = vec![0.0f32; 2 * c];
        let mut keys = Vec::new();
        let mut scratch = Vec::new();
        let mut att = vec![0.0f32; c];
        let mut tmp = vec![0.0f32; c];
        for wi in 0..wn {
            let i = h * wn + wi;
            let q = &el[i * c..(i + 1) * c];
            cat_in[..c].copy_from_slice(q);
            cat_in[c..].copy_from_slice(&ei[i * c..(i + 1) * c]);
            let o = &mut chunk[wi * c..(wi + 1) * c];
            w.cat.apply_into(&cat_in, o);

            keys.clear();
            for dh in -r..=r {
                for dw in -r..=r {
                    let (nh, nw) = (h as i64 + dh, wi as i64 + dw);
                    if nh < 0 || nw < 0 || nh >= hn as i64 || nw >= wn as i64 {
                        continue;
                    }
                    let j = nh as usize * wn + nw as usize;
                    keys.extend_from_slice(&ei[j * c..(j + 1) * c]);
                }
            }
            attend_row(q, &keys, &keys, c, &mut scratch, &mut att);
            for (k, layer) in w.mlp.iter().enumerate() {
                if k > 0 {
                    for x in att.iter_mut() {
                        *x = x.max(0.0);
                    }
                }
                layer.apply_into(&att, &mut tmp);
                std::mem::swap(&mut att, &mut tmp);
            }
            for ((x, a), l) in o.iter_mut().zip(&att).zip(q) {
                *x += a + l;
            }
        }
    });
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridShape;

    fn plane(h: usize, w: usize, c: usize, f: impl Fn(usize, usize, usize) -> f32) -> BevFeature {
        BevFeature::from_fn(GridShape::new(h, w, 1, c, 1.0, 1.0).unwrap(), 0, f).unwrap()
    }

    #[test]
    fn zero_camera_gives_cat_plus_lidar() {
        let bl = plane(3, 2, 4, |h, w, c| (h * 2 + w) as f32 - c as f32 * 0.5);
        let bi = plane(3, 2, 4, |_, _, _| 0.0);
        let wts = HmfWeights::identity(4, 4, 4, 1);
        let out = hmf(&bl, &bi, &wts).unwrap();
        // identity concat projection keeps the LiDAR half
        for (o, l) in out.data().iter().zip(bl.data()) {
            assert_eq!(*o, 2.0 * l);
        }
    }

    #[test]
    fn zero_inputs_give_zero() {
        let z = plane(2, 2, 3, |_, _, _| 0.0);
        let out = hmf(&z, &z, &HmfWeights::identity(3, 3, 3, 2)).unwrap();
        assert!(out.data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn expands_to_common_channels() {
        let bl = plane(2, 3, 2, |_, _, c| c as f32);
        let bi = plane(2, 3, 5, |_, _, _| 1.0);
        let out = hmf(&bl, &bi, &HmfWeights::identity(8, 2, 5, 1)).unwrap();
        let s = out.shape();
        assert_eq!((s.h_cells, s.w_cells, s.channels), (2, 3, 8));
    }

    #[test]
    fn two_by_two_matches_brute_force() {
        let c = 3;
        let bl = plane(2, 2, c, |h, w, k| ((h * 7 + w * 3 + k) as f32 * 0.37).sin());
        let bi = plane(2, 2, c, |h, w, k| ((h * 5 + w * 11 + k) as f32 * 0.21).cos());
        let mut wts = HmfWeights::identity(c, c, c, 1);
        // non-trivial concat: sum of both halves
        let mut wc = vec![0.0; c * 2 * c];
        for i in 0..c {
            wc[i * 2 * c + i] = 1.0;
            wc[i * 2 * c + c + i] = 1.0;
        }
        wts.cat = Linear::new(c, 2 * c, wc, vec![0.0; c]).unwrap();
        wts.window = 3;
        let out = hmf(&bl, &bi, &wts).unwrap();
        for h in 0..2 {
            for w in 0..2 {
                let q = bl.cell(h, w);
                // every cell is in the 3x3 window of every other on a 2x2 plane
                let keys: Vec<&[f32]> = (0..4).map(|j| bi.cell(j / 2, j % 2)).collect();
                let logits: Vec<f64> = keys
                    .iter()
                    .map(|k| q.iter().zip(*k).map(|(a, b)| *a as f64 * *b as f64).sum::<f64>() / (c as f64).sqrt())
                    .collect();
                let m = logits.iter().cloned().fold(f64::MIN, f64::max);
                let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
                let z: f64 = e.iter().sum();
                for k in 0..c {
                    let att: f64 = e.iter().zip(&keys).map(|(wt, kv)| wt / z * kv[k] as f64).sum();
                    let want = (q[k] + bi.get(h, w, k)) as f64 + att + q[k] as f64;
                    assert!((out.get(h, w, k) as f64 - want).abs() < 1e-5);
                }
            }
        }
    }

    #[test]
    fn plane_mismatch_rejected() {
        let a = plane(2, 2, 2, |_, _, _| 0.0);
        let b = plane(2, 3, 2, |_, _, _| 0.0);
        assert!(hmf(&a, &b, &HmfWeights::identity(2, 2, 2, 1)).is_err());
    }
}
