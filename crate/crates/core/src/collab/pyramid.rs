use serde::{Deserialize, Serialize};

use crate::collab::{
    discrepancy, instance_complete, instance_refine, select_k_max, select_k_min, Heatmap, InstanceVector, IrWeights,
    SenderPatch,
};
use crate::error::{ConfigError, Error, ShapeError};
use crate::grid::{fit_bev, resample_bev, AgentId, BevFeature, ModelDims, QkvWeights, Resample, WeightSet};

/// Top-K schedule of the collaboration stage.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CollabConfig {
    /// Completion positions requested per sender at every scale.
    pub k_ic: usize,
    /// Refinement instances per agent, one entry per scale.
    pub k_ir: Vec<usize>,
    pub scales: usize,
}

impl Default for CollabConfig {
    fn default() -> Self {
        CollabConfig {
            k_ic: 20,
            k_ir: vec![100, 50, 25],
            scales: 3,
        }
    }
}

impl CollabConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(1..=3).contains(&self.scales) {
            return Err(ConfigError::field("collab.scales", format!("must be 1, 2 or 3, got {}", self.scales)));
        }
        if self.k_ir.len() != self.scales {
            return Err(ConfigError::field(
                "collab.k_ir",
                format!("needs one entry per scale ({}), got {}", self.scales, self.k_ir.len()),
            ));
        }
        Ok(())
    }

    /// Check the schedule fits a scale-0 plane of `h x w` cells.
    pub fn validate_for(&self, h: usize, w: usize) -> Result<(), ConfigError> {
        self.validate()?;
        for s in 0..self.scales {
            let cells = h.div_ceil(1 << s) * w.div_ceil(1 << s);
            if self.k_ic > cells {
                return Err(ConfigError::field("collab.k_ic", format!("{} exceeds the {cells} cells of scale {s}", self.k_ic)));
            }
            if self.k_ir[s] > cells {
                return Err(ConfigError::field(
                    "collab.k_ir",
                    format!("{} exceeds the {cells} cells of scale {s}", self.k_ir[s]),
                ));
            }
        }
        Ok(())
    }

    pub fn k_ir_label(&self) -> String {
        self.k_ir.iter().map(|k| k.to_string()).collect::<Vec<_>>().join("/")
    }
}

/// Completion and refinement weights.
#[derive(Debug, Clone, PartialEq)]
pub struct CollabWeights {
    pub ic: QkvWeights,
    pub ir: IrWeights,
}

impl CollabWeights {
    pub fn identity(c: usize) -> Self {
        CollabWeights {
            ic: QkvWeights::identity(c),
            ir: IrWeights::identity(c),
        }
    }

    pub fn from_weights(ws: &WeightSet, dims: &ModelDims) -> Result<Self, ShapeError> {
        let c = dims.bev_channels;
        Ok(CollabWeights {
            ic: QkvWeights::from_weights(ws, "ic", c)?,
            ir: IrWeights {
                self_attn: QkvWeights::from_weights(ws, "ir.self", c)?,
                cross_attn: QkvWeights::from_weights(ws, "ir.cross", c)?,
                positional: true,
            },
        })
    }
}

/// A BEV plane at factors 1, 1/2, 1/4, each dimension the ceiling of the
/// scale-0 one.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalePyramid {
    pub levels: Vec<BevFeature>,
    pub k_ir: Vec<usize>,
}

impl ScalePyramid {
    pub fn build(b0: &BevFeature, cfg: &CollabConfig) -> Result<Self, ShapeError> {
        let mut levels = vec![b0.clone()];
        for _ in 1..cfg.scales {
            let next = resample_bev(levels.last().expect("non-empty"), Resample::Down2)?;
            levels.push(next);
        }
        Ok(ScalePyramid { levels, k_ir: cfg.k_ir.clone() })
    }

    pub fn scales(&self) -> usize {
        self.levels.len()
    }
}

/// One agent's pyramid and per-scale heatmaps, already in the receiver frame.
#[derive(Debug, Clone)]
pub struct AgentView {
    pub id: AgentId,
    pub pyramid: ScalePyramid,
    pub heatmaps: Vec<Heatmap>,
}

/// Positions a receiver asks one sender for: the most negative cells of the
/// discrepancy map.
pub fn completion_positions(h_rc: &Heatmap, h_sd: &Heatmap, k: usize) -> Result<Vec<(usize, usize)>, Error> {
    let tg = discrepancy(h_rc, h_sd)?;
    Ok(select_k_min(&tg, k)?)
}

/// The sender side of a completion query.
pub fn answer_query(b_sd: &BevFeature, h_sd: &Heatmap, positions: &[(usize, usize)]) -> Vec<InstanceVector> {
    positions
        .iter()
        .map(|&(h, w)| InstanceVector {
            h,
            w,
            feature: b_sd.cell(h, w).to_vec(),
            heat: h_sd.get(h, w),
            scale: h_sd.scale(),
            owner: h_sd.owner(),
        })
        .collect()
}

/// Completion then refinement at one scale. `remote` holds the other agents'
/// broadcast instances; the receiver's own top-K comes from `h_rc` over the
/// completed plane.
pub fn collaborate_scale(
    b_rc: &BevFeature,
    h_rc: &Heatmap,
    patches: &[SenderPatch],
    remote: &[InstanceVector],
    k_ir: usize,
    w: &CollabWeights,
) -> Result<BevFeature, Error> {
    let completed = instance_complete(b_rc, patches, &w.ic)?;
    let mut all = select_k_max(h_rc, &completed, k_ir)?;
    all.extend_from_slice(remote);
    // concatenation order is fixed by owner so the result does not depend on
    // arrival order
    all.sort_by_key(|i| i.owner);
    Ok(instance_refine(&completed, &all, &w.ir)?)
}

/// Upsample every scale back to the scale-0 plane and sum in scale order.
pub fn merge_scales(levels: &[BevFeature]) -> Result<BevFeature, ShapeError> {
    let target = *levels[0].shape();
    let mut out = levels[0].clone();
    for (s, b) in levels.iter().enumerate().skip(1) {
        let up = resample_bev(b, Resample::up_pow2(s).expect("at most three scales"))?;
        let up = fit_bev(&up, target.with_channels(up.channels()));
        for (o, x) in out.data_mut().iter_mut().zip(up.data()) {
            *o += x;
        }
    }
    Ok(out)
}

/// In-memory multi-scale collaboration for `ego` (no wire, no budget).
pub fn collaborate_multiscale(ego: &AgentView, senders: &[AgentView], cfg: &CollabConfig, w: &CollabWeights) -> Result<BevFeature, Error> {
    cfg.validate().map_err(Error::from)?;
    let base = ego.pyramid.levels[0].shape();
    for s in senders {
        let t = s.pyramid.levels[0].shape();
        if (t.h_cells, t.w_cells, t.channels) != (base.h_cells, base.w_cells, base.channels) {
            return Err(ShapeError::mismatch(
                "agent scale-0 planes",
                format!("{}x{}x{}", base.h_cells, base.w_cells, base.channels),
                format!("{}x{}x{} (agent {})", t.h_cells, t.w_cells, t.channels, s.id),
            )
            .into());
        }
    }
    let mut sorted: Vec<&AgentView> = senders.iter().collect();
    sorted.sort_by_key(|a| a.id);
    let mut levels = Vec::with_capacity(cfg.scales);
    for s in 0..cfg.scales {
        let b_rc = &ego.pyramid.levels[s];
        let h_rc = &ego.heatmaps[s];
        let mut patches = Vec::new();
        let mut remote = Vec::new();
        for sd in &sorted {
            let h_sd = &sd.heatmaps[s];
            let b_sd = &sd.pyramid.levels[s];
            let positions = completion_positions(h_rc, h_sd, cfg.k_ic)?;
            let instances = answer_query(b_sd, h_sd, &positions);
            patches.push(SenderPatch { sender: sd.id, positions, instances });
            remote.extend(select_k_max(h_sd, b_sd, cfg.k_ir[s])?);
        }
        levels.push(collaborate_scale(b_rc, h_rc, &patches, &remote, cfg.k_ir[s], w)?);
    }
    Ok(merge_scales(&levels)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridShape;

    fn view(id: AgentId, b: BevFeature, heat: impl Fn(usize, usize, usize) -> f32, cfg: &CollabConfig) -> AgentView {
        let pyramid = ScalePyramid::build(&b, cfg).unwrap();
        let heatmaps = pyramid
            .levels
            .iter()
            .enumerate()
            .map(|(s, l)| Heatmap::from_fn(*l.shape(), id, s, |h, w| heat(s, h, w)).unwrap())
            .collect();
        AgentView { id, pyramid, heatmaps }
    }

    #[test]
    fn pyramid_dims_use_ceiling() {
        let b = BevFeature::zeros(GridShape::new(9, 6, 1, 2, 1.0, 1.0).unwrap(), 0);
        let p = ScalePyramid::build(&b, &CollabConfig::default()).unwrap();
        let dims: Vec<_> = p.levels.iter().map(|l| (l.shape().h_cells, l.shape().w_cells)).collect();
        assert_eq!(dims, vec![(9, 6), (5, 3), (3, 2)]);
    }

    #[test]
    fn single_agent_without_instances_triples_constant_input() {
        let cfg = CollabConfig { k_ic: 4, k_ir: vec![0, 0, 0], scales: 3 };
        let b = BevFeature::from_fn(GridShape::new(8, 8, 1, 3, 1.0, 1.0).unwrap(), 0, |_, _, c| c as f32 + 0.5).unwrap();
        let ego = view(0, b.clone(), |_, _, _| 0.5, &cfg);
        let out = collaborate_multiscale(&ego, &[], &cfg, &CollabWeights::identity(3)).unwrap();
        for (o, x) in out.data().iter().zip(b.data()) {
            assert_eq!(*o, 3.0 * x);
        }
    }

    #[test]
    fn sender_only_object_raises_ego_cell() {
        let cfg = CollabConfig { k_ic: 3, k_ir: vec![4, 2, 1], scales: 3 };
        let g = GridShape::new(8, 8, 1, 4, 1.0, 1.0).unwrap();
        let ego_b = BevFeature::zeros(g, 0);
        let sd_b = BevFeature::from_fn(g, 1, |h, w, c| if (h, w) == (5, 2) && c == 0 { 5.0 } else { 0.0 }).unwrap();
        let hot = |s: usize, h: usize, w: usize| if s == 0 && (h, w) == (5, 2) { 1.0 } else { 0.0 };
        let ego = view(0, ego_b, |_, _, _| 0.0, &cfg);
        let sd = view(1, sd_b, hot, &cfg);
        let w = CollabWeights::identity(4);
        let solo = collaborate_multiscale(&ego, &[], &cfg, &w).unwrap();
        let collab = collaborate_multiscale(&ego, &[sd], &cfg, &w).unwrap();
        assert!(collab.get(5, 2, 0) > solo.get(5, 2, 0));
    }

    #[test]
    fn sender_enumeration_order_is_irrelevant() {
        let cfg = CollabConfig::default();
        let g = GridShape::new(32, 32, 1, 4, 1.0, 1.0).unwrap();
        let mk = |id: AgentId, k: f32| {
            let b = BevFeature::from_fn(g, id, |h, w, c| ((h * 32 + w) as f32 * k + c as f32).sin()).unwrap();
            view(id, b, move |s, h, w| ((((h * 7 + w * 3 + s) as f32 * k).cos() + 1.0) / 2.0).min(1.0), &cfg)
        };
        let ego = mk(0, 0.13);
        let (a, b, c) = (mk(1, 0.29), mk(2, 0.41), mk(3, 0.07));
        let w = CollabWeights::identity(4);
        let x = collaborate_multiscale(&ego, &[a.clone(), b.clone(), c.clone()], &cfg, &w).unwrap();
        let y = collaborate_multiscale(&ego, &[c, a, b], &cfg, &w).unwrap();
        assert_eq!(x, y);
    }

    #[test]
    fn schedule_validation() {
        let cfg = CollabConfig { k_ic: 20, k_ir: vec![100, 50], scales: 3 };
        assert!(cfg.validate().is_err());
        assert!(CollabConfig::default().validate_for(8, 8).is_err());
        assert!(CollabConfig::default().validate_for(64, 64).is_ok());
    }
}
