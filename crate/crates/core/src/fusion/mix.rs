use crate::error::ShapeError;
use crate::grid::{attend_row, QkvWeights, VoxelFeature};
use crate::par;

/// Projections of the voxel local-graph attention.
pub type MixWeights = QkvWeights;

const NEIGHBORS: [(i64, i64, i64); 6] = [(-1, 0, 0), (1, 0, 0), (0, -1, 0), (0, 1, 0), (0, 0, -1), (0, 0, 1)];

/// Cross-agent voxel mixing over a local graph.
///
/// For every cell the node set is the ego feature, each sender's co-located
/// feature (senders ordered by frame id), and the ego features of the
/// in-bounds 6-connected neighbors. One self-attention round runs over the
/// nodes; the ego node's output plus the ego input is the result.
pub fn mix_voxel(ego: &VoxelFeature, senders: &[VoxelFeature], w: &MixWeights) -> Result<VoxelFeature, ShapeError> {
    let s = *ego.shape();
    let c = s.channels;
    w.check("mix projections", c)?;
    for sd in senders {
        let t = sd.shape();
        if (t.h_cells, t.w_cells, t.l_bins, t.channels) != (s.h_cells, s.w_cells, s.l_bins, c) {
            return Err(ShapeError::mismatch(
                "sender voxel dims",
                format!("{}x{}x{}x{}", s.h_cells, s.w_cells, s.l_bins, c),
                format!("{}x{}x{}x{}", t.h_cells, t.w_cells, t.l_bins, t.channels),
            ));
        }
    }
    let mut order: Vec<&VoxelFeature> = senders.iter().collect();
    order.sort_by_key(|v| v.frame());

    let q_ego = w.q.apply_rows(ego.data());
    let k_ego = w.k.apply_rows(ego.data());
    let v_ego = w.v.apply_rows(ego.data());
    let k_sd: Vec<Vec<f32>> = order.iter().map(|v| w.k.apply_rows(v.data())).collect();
    let v_sd: Vec<Vec<f32>> = order.iter().map(|v| w.v.apply_rows(v.data())).collect();

    let mut out = VoxelFeature::zeros(s, ego.frame());
    let row = s.w_cells * s.l_bins * c;
    par::for_each_chunk(out.data_mut(), row, |h, chunk| {
        let max_nodes = 1 + order.len() + NEIGHBORS.len();
        let mut keys = Vec::with_capacity(max_nodes * c);
        let mut vals = Vec::with_capacity(max_nodes * c);
        let mut scratch = Vec::with_capacity(max_nodes);
        for wi in 0..s.w_cells {
            for l in 0..s.l_bins {
                let idx = ego.index(h, wi, l, 0);
                keys.clear();
                vals.clear();
                keys.extend_from_slice(&k_ego[idx..idx + c]);
                vals.extend_from_slice(&v_ego[idx..idx + c]);
                for (ks, vs) in k_sd.iter().zip(&v_sd) {
                    keys.extend_from_slice(&ks[idx..idx + c]);
                    vals.extend_from_slice(&vs[idx..idx + c]);
                }
                for (dh, dw, dl) in NEIGHBORS {
                    let (nh, nw, nl) = (h as i64 + dh, wi as i64 + dw, l as i64 + dl);
                    if nh < 0 || nw < 0 || nl < 0 || nh >= s.h_cells as i64 || nw >= s.w_cells as i64 || nl >= s.l_bins as i64 {
                        continue;
                    }
                    let j = ego.index(nh as usize, nw as usize, nl as usize, 0);
                    keys.extend_from_slice(&k_ego[j..j + c]);
                    vals.extend_from_slice(&v_ego[j..j + c]);
                }
                let o = &mut chunk[(wi * s.l_bins + l) * c..(wi * s.l_bins + l + 1) * c];
                attend_row(&q_ego[idx..idx + c], &keys, &vals, c, &mut scratch, o);
                for (x, e) in o.iter_mut().zip(ego.cell(h, wi, l)) {
                    *x += e;
                }
            }
        }
    });
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridShape;

    #[test]
    fn single_node_doubles() {
        let s = GridShape::new(1, 1, 1, 3, 1.0, 1.0).unwrap();
        let ego = VoxelFeature::new(s, vec![0.5, -2.0, 3.0], 0).unwrap();
        let out = mix_voxel(&ego, &[], &MixWeights::identity(3)).unwrap();
        assert_eq!(out.data(), &[1.0, -4.0, 6.0]);
    }

    #[test]
    fn two_agents_match_hand_mixture() {
        let s = GridShape::new(1, 1, 1, 2, 1.0, 1.0).unwrap();
        let e = [1.0f32, 0.0];
        let u = [0.0f32, 2.0];
        let ego = VoxelFeature::new(s, e.to_vec(), 0).unwrap();
        let sd = VoxelFeature::new(s, u.to_vec(), 1).unwrap();
        let out = mix_voxel(&ego, &[sd], &MixWeights::identity(2)).unwrap();
        // logits: e.e/sqrt2 = 1/sqrt2, e.u/sqrt2 = 0
        let a = (1.0f64 / 2f64.sqrt()).exp();
        let (we, wu) = (a / (a + 1.0), 1.0 / (a + 1.0));
        let expect = [we * 1.0 + 1.0, wu * 2.0];
        for (g, x) in out.data().iter().zip(expect) {
            assert!((*g as f64 - x).abs() < 1e-6);
        }
    }

    #[test]
    fn sender_order_is_irrelevant() {
        let s = GridShape::new(3, 3, 2, 4, 1.0, 1.0).unwrap();
        let mk = |f: u32, k: f32| {
            VoxelFeature::from_fn(s, f, |h, w, l, c| ((h * 5 + w * 3 + l + c) as f32 * k).sin()).unwrap()
        };
        let ego = mk(0, 0.3);
        let a = mk(1, 0.7);
        let b = mk(2, 1.1);
        let c = mk(5, -0.4);
        let w = MixWeights::identity(4);
        let x = mix_voxel(&ego, &[a.clone(), b.clone(), c.clone()], &w).unwrap();
        let y = mix_voxel(&ego, &[c, a, b], &w).unwrap();
        assert_eq!(x.data(), y.data());
    }

    #[test]
    fn shape_mismatch_rejected() {
        let s = GridShape::new(2, 2, 1, 2, 1.0, 1.0).unwrap();
        let t = GridShape::new(2, 3, 1, 2, 1.0, 1.0).unwrap();
        let ego = VoxelFeature::zeros(s, 0);
        let sd = VoxelFeature::zeros(t, 1);
        assert!(mix_voxel(&ego, &[sd], &MixWeights::identity(2)).is_err());
    }
}
