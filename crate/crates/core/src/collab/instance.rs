use crate::error::{Error, ProtocolError, ShapeError};
use crate::grid::{attend_row, attention, AgentId, BevFeature, Matrix, QkvWeights};
use crate::par;

/// One BEV cell shared as a sparse message unit.
#[derive(Debug, Clone, PartialEq)]
pub struct InstanceVector {
    pub h: usize,
    pub w: usize,
    pub feature: Vec<f32>,
    pub heat: f32,
    pub scale: usize,
    pub owner: AgentId,
}

/// A sender's answer to a completion query: the requested positions and the
/// sender's features there.
#[derive(Debug, Clone, PartialEq)]
pub struct SenderPatch {
    pub sender: AgentId,
    pub positions: Vec<(usize, usize)>,
    pub instances: Vec<InstanceVector>,
}

/// Overwrite the queried cells of `b_rc` with attention-projected sender
/// features. Where several senders hit one cell their candidates are summed
/// in ascending sender-id order; every other cell is left untouched.
pub fn instance_complete(b_rc: &BevFeature, patches: &[SenderPatch], w: &QkvWeights) -> Result<BevFeature, Error> {
    let s = *b_rc.shape();
    let c = s.channels;
    w.check("completion projections", c)?;
    let mut order: Vec<&SenderPatch> = patches.iter().collect();
    order.sort_by_key(|p| p.sender);
    if let Some(p) = order.windows(2).find(|p| p[0].sender == p[1].sender) {
        return Err(ProtocolError::DuplicateAgent(p[0].sender).into());
    }
    let mut acc: std::collections::BTreeMap<usize, Vec<f32>> = Default::default();
    let mut scratch = Vec::new();
    let mut cand = vec![0.0f32; c];
    for p in order {
        if p.instances.len() != p.positions.len() {
            return Err(ProtocolError::CountMismatch {
                sender: p.sender,
                expected: p.positions.len(),
                got: p.instances.len(),
            }
            .into());
        }
        for (&(h, wi), inst) in p.positions.iter().zip(&p.instances) {
            if h >= s.h_cells || wi >= s.w_cells {
                return Err(ProtocolError::PositionOutOfGrid {
                    sender: p.sender,
                    h: h as i64,
                    w: wi as i64,
                    rows: s.h_cells,
                    cols: s.w_cells,
                }
                .into());
            }
            if (inst.h, inst.w) != (h, wi) {
                return Err(ProtocolError::InvalidPayload(format!(
                    "sender {} answered ({}, {}) for requested ({h}, {wi})",
                    p.sender, inst.h, inst.w
                ))
                .into());
            }
            if inst.feature.len() != c {
                return Err(ShapeError::mismatch("instance feature length", c, inst.feature.len()).into());
            }
            let q = w.q.apply(b_rc.cell(h, wi));
            let k = w.k.apply(&inst.feature);
            let v = w.v.apply(&inst.feature);
            attend_row(&q, &k, &v, c, &mut scratch, &mut cand);
            match acc.entry(h * s.w_cells + wi) {
                std::collections::btree_map::Entry::Vacant(e) => {
                    e.insert(cand.clone());
                }
                std::collections::btree_map::Entry::Occupied(mut e) => {
                    for (a, x) in e.get_mut().iter_mut().zip(&cand) {
                        *a += x;
                    }
                }
            }
        }
    }
    let mut out = b_rc.clone();
    for (i, v) in acc {
        out.cell_mut(i / s.w_cells, i % s.w_cells).copy_from_slice(&v);
    }
    Ok(out)
}

/// 2D sinusoidal encoding: the first `c/2` channels encode `h`, the next
/// `c/2` encode `w`, each as interleaved sin/cos pairs. An odd trailing
/// channel stays zero.
pub fn positional_encoding(h: usize, w: usize, c: usize) -> Vec<f32> {
    let half = c / 2;
    let mut pe = vec![0.0f32; c];
    for (axis, pos) in [h, w].into_iter().enumerate() {
        for j in 0..half {
            let i = (j / 2) as f64;
            let freq = 1.0 / 10000f64.powf(2.0 * i / half as f64);
            let a = pos as f64 * freq;
            pe[axis * half + j] = if j % 2 == 0 { a.sin() } else { a.cos() } as f32;
        }
    }
    pe
}

/// Refinement weights: instance self-attention, then scene-to-instance
/// cross-attention.
#[derive(Debug, Clone, PartialEq)]
pub struct IrWeights {
    pub self_attn: QkvWeights,
    pub cross_attn: QkvWeights,
    /// Add the positional encoding to instance features.
    pub positional: bool,
}

impl IrWeights {
    pub fn identity(c: usize) -> Self {
        IrWeights {
            self_attn: QkvWeights::identity(c),
            cross_attn: QkvWeights::identity(c),
            positional: true,
        }
    }
}

/// Self-attention over all instances, then every cell of `b_rc` attends to
/// the refined instances; residual add. Empty instance set is the identity.
pub fn instance_refine(b_rc: &BevFeature, instances: &[InstanceVector], w: &IrWeights) -> Result<BevFeature, ShapeError> {
    if instances.is_empty() {
        return Ok(b_rc.clone());
    }
    let s = *b_rc.shape();
    let c = s.channels;
    w.self_attn.check("refinement self-attention", c)?;
    w.cross_attn.check("refinement cross-attention", c)?;
    let n = instances.len();
    let mut f_all = Vec::with_capacity(n * c);
    for inst in instances {
        if inst.feature.len() != c {
            return Err(ShapeError::mismatch("instance feature length", c, inst.feature.len()));
        }
        if w.positional {
            let pe = positional_encoding(inst.h, inst.w, c);
            f_all.extend(inst.feature.iter().zip(pe).map(|(f, p)| f + p));
        } else {
            f_all.extend_from_slice(&inst.feature);
        }
    }
    let proj = |l: &crate::grid::Linear| Matrix::new(n, c, l.apply_rows(&f_all)).expect("n x c rows");
    let refined = attention(&proj(&w.self_attn.q), &proj(&w.self_attn.k), &proj(&w.self_attn.v))?;
    let keys = w.cross_attn.k.apply_rows(&refined.data);
    let vals = w.cross_attn.v.apply_rows(&refined.data);
    let mut out = BevFeature::zeros(s, b_rc.frame());
    par::for_each_chunk(out.data_mut(), s.w_cells * c, |h, chunk| {
        let mut scratch = Vec::with_capacity(n);
        let mut q = vec![0.0f32; c];
        for (wi, o) in chunk.chunks_exact_mut(c).enumerate() {
            let cell = b_rc.cell(h, wi);
            w.cross_attn.q.apply_into(cell, &mut q);
            attend_row(&q, &keys, &vals, c, &mut scratch, o);
            for (x, r) in o.iter_mut().zip(cell) {
                *x += r;
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

    fn inst(h: usize, w: usize, feature: Vec<f32>, owner: AgentId) -> InstanceVector {
        InstanceVector { h, w, feature, heat: 1.0, scale: 0, owner }
    }

    fn patch(sender: AgentId, items: Vec<((usize, usize), Vec<f32>)>) -> SenderPatch {
        SenderPatch {
            sender,
            positions: items.iter().map(|x| x.0).collect(),
            instances: items.into_iter().map(|((h, w), f)| inst(h, w, f, sender)).collect(),
        }
    }

    #[test]
    fn single_sender_copies_features() {
        let b = plane(3, 3, 2, |h, w, c| (h * 3 + w + c) as f32);
        let p = patch(1, vec![((0, 2), vec![9.5, -1.25]), ((2, 0), vec![0.0, 4.0])]);
        let out = instance_complete(&b, &[p], &QkvWeights::identity(2)).unwrap();
        assert_eq!(out.cell(0, 2), &[9.5, -1.25]);
        assert_eq!(out.cell(2, 0), &[0.0, 4.0]);
        for h in 0..3 {
            for w in 0..3 {
                if (h, w) != (0, 2) && (h, w) != (2, 0) {
                    assert_eq!(out.cell(h, w), b.cell(h, w));
                }
            }
        }
    }

    #[test]
    fn overlapping_senders_sum() {
        let b = plane(2, 2, 2, |_, _, _| 7.0);
        let u = patch(3, vec![((1, 1), vec![1.0, 2.0])]);
        let v = patch(2, vec![((1, 1), vec![0.5, -4.0])]);
        let out = instance_complete(&b, &[u.clone(), v.clone()], &QkvWeights::identity(2)).unwrap();
        assert_eq!(out.cell(1, 1), &[1.5, -2.0]);
        let swapped = instance_complete(&b, &[v, u], &QkvWeights::identity(2)).unwrap();
        assert_eq!(out, swapped);
    }

    #[test]
    fn no_positions_is_identity() {
        let b = plane(2, 3, 2, |h, w, c| (h as f32 - w as f32) * 0.3 + c as f32);
        let out = instance_complete(&b, &[patch(1, vec![])], &QkvWeights::identity(2)).unwrap();
        assert_eq!(out, b);
    }

    #[test]
    fn out_of_grid_names_sender() {
        let b = plane(2, 2, 1, |_, _, _| 0.0);
        let err = instance_complete(&b, &[patch(4, vec![((2, 0), vec![1.0])])], &QkvWeights::identity(1)).unwrap_err();
        assert!(matches!(err, Error::Protocol(ProtocolError::PositionOutOfGrid { sender: 4, .. })));
        assert!(err.to_string().contains("sender 4"));
    }

    #[test]
    fn refine_empty_is_identity() {
        let b = plane(3, 2, 4, |h, w, c| (h + w * c) as f32);
        assert_eq!(instance_refine(&b, &[], &IrWeights::identity(4)).unwrap(), b);
    }

    #[test]
    fn refine_single_instance_adds_it_everywhere() {
        let b = plane(3, 3, 2, |h, w, c| (h * 3 + w) as f32 * 0.1 + c as f32);
        let mut w = IrWeights::identity(2);
        w.positional = false;
        let f = vec![2.0, -1.0];
        let out = instance_refine(&b, &[inst(1, 1, f.clone(), 1)], &w).unwrap();
        for h in 0..3 {
            for wi in 0..3 {
                for c in 0..2 {
                    assert_eq!(out.get(h, wi, c), b.get(h, wi, c) + f[c]);
                }
            }
        }
    }

    fn brute_attention(q: &[Vec<f64>], k: &[Vec<f64>], v: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let c = q[0].len() as f64;
        q.iter()
            .map(|qi| {
                let logits: Vec<f64> = k.iter().map(|kj| qi.iter().zip(kj).map(|(a, b)| a * b).sum::<f64>() / c.sqrt()).collect();
                let m = logits.iter().cloned().fold(f64::MIN, f64::max);
                let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
                let z: f64 = e.iter().sum();
                (0..v[0].len()).map(|d| e.iter().zip(v).map(|(wj, vj)| wj / z * vj[d]).sum()).collect()
            })
            .collect()
    }

    #[test]
    fn refine_matches_two_stage_oracle() {
        let c = 4;
        let b = plane(4, 4, c, |h, w, k| ((h * 4 + w) as f32 * 0.31 + k as f32 * 0.7).sin());
        let insts: Vec<InstanceVector> = [(0, 1), (2, 3), (3, 0), (1, 1)]
            .iter()
            .enumerate()
            .map(|(i, &(h, w))| inst(h, w, (0..c).map(|k| ((i * 5 + k) as f32 * 0.43).cos()).collect(), i as u32))
            .collect();
        let out = instance_refine(&b, &insts, &IrWeights::identity(c)).unwrap();
        let f: Vec<Vec<f64>> = insts
            .iter()
            .map(|i| {
                let pe = positional_encoding(i.h, i.w, c);
                i.feature.iter().zip(&pe).map(|(a, p)| (a + p) as f64).collect()
            })
            .collect();
        let refined = brute_attention(&f, &f, &f);
        for h in 0..4 {
            for w in 0..4 {
                let q: Vec<f64> = b.cell(h, w).iter().map(|&x| x as f64).collect();
                let a = brute_attention(std::slice::from_ref(&q), &refined, &refined);
                for k in 0..c {
                    assert!((out.get(h, w, k) as f64 - (a[0][k] + q[k])).abs() < 1e-5);
                }
            }
        }
    }

    #[test]
    fn positional_encoding_layout() {
        let pe = positional_encoding(0, 0, 8);
        assert_eq!(pe, vec![0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0]);
        let pe = positional_encoding(2, 5, 4);
        assert!((pe[0] - 2f32.sin()).abs() < 1e-7);
        assert!((pe[1] - 2f32.cos()).abs() < 1e-7);
        assert!((pe[2] - 5f32.sin()).abs() < 1e-7);
        assert_eq!(positional_encoding(1, 1, 5)[4], 0.0);
    }
}
