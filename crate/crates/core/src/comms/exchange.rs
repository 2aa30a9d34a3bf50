//! The round-based exchange that ties both fusion stages together.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::collab::{
    answer_query, collaborate_scale, completion_positions, heatmap_head, merge_scales, select_k_max, CollabConfig,
    CollabWeights, Heatmap, HeatmapHead, InstanceVector, ScalePyramid, SenderPatch,
};
use crate::comms::budget::{BudgetInput, Link};
use crate::comms::{heatmap_message_len, voxel_message_len, CommGraph, CommLedger, LedgerEntry, Message, Payload};
use crate::error::{Error, ProtocolError, ShapeError};
use crate::fusion::{
    compress_voxel, decompress_voxel, hmf, mix_voxel, occ_gate, occupancy_head, HmfWeights, MixVoxelMode,
};
use crate::grid::{
    collapse_to_bev, warp_bev_to_frame, warp_to_frame, AgentId, BevFeature, GridShape, Linear, ModelDims, Pose,
    QkvWeights, VoxelFeature, WeightSet,
};
use crate::par;
use crate::scene::{
    box_center_visible, camera_proxy_encode, lidar_proxy_encode, perturb_pose, EncoderConfig, NoiseSpec, Scene,
};

/// Where the per-scale heatmaps that drive completion and instance selection
/// come from. Final decoding always uses the learned head.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeatSource {
    /// The heatmap head applied to each pyramid level.
    Learned,
    /// Gaussian bumps (std in meters) at the centers of boxes the agent sees.
    Oracle { sigma_m: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub encoder: EncoderConfig,
    pub dims: ModelDims,
    pub mix: MixVoxelMode,
    pub collab: CollabConfig,
    pub heat_source: HeatSource,
    pub hmf_window: usize,
}

impl PipelineConfig {
    /// Defaults around `grid` (whose channel count is the LiDAR width).
    pub fn new(grid: GridShape) -> Self {
        let dims = ModelDims {
            lidar_channels: grid.channels,
            camera_channels: grid.channels,
            bev_channels: grid.channels,
            mlp_layers: 1,
        };
        PipelineConfig {
            encoder: EncoderConfig::new(grid, dims.camera_channels),
            dims,
            mix: MixVoxelMode::On(crate::fusion::CompressionStrategy::M1),
            collab: CollabConfig::default(),
            heat_source: HeatSource::Learned,
            hmf_window: 1,
        }
    }

    pub fn grid(&self) -> GridShape {
        self.encoder.grid
    }

    /// `(rows, cols)` of every pyramid level.
    pub fn level_dims(&self) -> Vec<(usize, usize)> {
        let g = self.grid();
        (0..self.collab.scales).map(|s| (g.h_cells.div_ceil(1 << s), g.w_cells.div_ceil(1 << s))).collect()
    }

    /// Closed-form message sizes of a full exchange over `links`; broadcast
    /// heats are placeholders (zero).
    pub fn budget_input(&self, links: &[Link]) -> Result<BudgetInput, ShapeError> {
        let voxel = match self.mix {
            MixVoxelMode::On(s) => {
                let len = voxel_message_len(&s.compressed_shape(&self.grid())?) as u64;
                links.iter().map(|&l| (l, len)).collect()
            }
            MixVoxelMode::Off => Vec::new(),
        };
        let dims = self.level_dims();
        let heat = links
            .iter()
            .flat_map(|&l| dims.iter().enumerate().map(move |(s, &(h, w))| (l, s as u8, heatmap_message_len(h, w) as u64)))
            .collect();
        let k_ir = &self.collab.k_ir;
        let broadcast = links
            .iter()
            .flat_map(|&l| (0..k_ir.len()).map(move |s| (l, s as u8, vec![0.0f32; k_ir[s]])))
            .collect();
        Ok(BudgetInput { channels: self.dims.bev_channels, k_ic: self.collab.k_ic, voxel, heat, broadcast })
    }

    pub fn validate(&self) -> Result<(), Error> {
        let g = self.grid();
        g.validate()?;
        if g.channels != self.dims.lidar_channels || self.encoder.camera_channels != self.dims.camera_channels {
            return Err(ShapeError::mismatch(
                "encoder channels vs model dims",
                format!("{}/{}", self.dims.lidar_channels, self.dims.camera_channels),
                format!("{}/{}", g.channels, self.encoder.camera_channels),
            )
            .into());
        }
        if let MixVoxelMode::On(s) = self.mix {
            s.compressed_shape(&g)?;
        }
        self.collab.validate_for(g.h_cells, g.w_cells)?;
        Ok(())
    }
}

/// Every learned layer of the pipeline.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelWeights {
    pub lidar_collapse: Linear,
    pub camera_collapse: Linear,
    pub mix: QkvWeights,
    pub occ: Linear,
    pub gate: Linear,
    pub hmf: HmfWeights,
    pub collab: CollabWeights,
    pub head: HeatmapHead,
}

impl ModelWeights {
    pub fn from_weights(ws: &WeightSet, dims: &ModelDims, hmf_window: usize) -> Result<Self, ShapeError> {
        ws.validate(dims)?;
        let (cl, ci, c) = (dims.lidar_channels, dims.camera_channels, dims.bev_channels);
        Ok(ModelWeights {
            lidar_collapse: ws.linear("lidar.collapse", cl, cl)?,
            camera_collapse: ws.linear("camera.collapse", ci, ci)?,
            mix: QkvWeights::from_weights(ws, "mix", cl)?,
            occ: ws.linear("occ", 1, cl)?,
            gate: ws.linear("gate", ci, cl)?,
            hmf: HmfWeights {
                expand_lidar: ws.linear("hmf.expand_lidar", c, cl)?,
                expand_camera: ws.linear("hmf.expand_camera", c, ci)?,
                cat: ws.linear("hmf.cat", c, 2 * c)?,
                mlp: (0..dims.mlp_layers)
                    .map(|i| ws.linear(&format!("hmf.mlp.{i}"), c, c))
                    .collect::<Result<_, _>>()?,
                window: hmf_window,
            },
            collab: CollabWeights::from_weights(ws, dims)?,
            head: HeatmapHead::from_weights(ws, dims)?,
        })
    }

    pub fn identity(dims: &ModelDims, hmf_window: usize) -> Self {
        Self::from_weights(&WeightSet::identity(dims), dims, hmf_window).expect("identity weights match their dims")
    }

    pub fn proxy(dims: &ModelDims, hmf_window: usize) -> Self {
        Self::from_weights(&WeightSet::proxy(dims), dims, hmf_window).expect("proxy weights match their dims")
    }
}

/// Per-agent result of an exchange.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentOutput {
    pub bev: BevFeature,
    pub heatmap: Heatmap,
}

#[derive(Debug, Clone)]
pub struct ExchangeOutput {
    pub outputs: BTreeMap<AgentId, AgentOutput>,
    pub ledger: CommLedger,
}

/// Forward-only pipeline: encoders, stage-one fusion, exchange, stage-two
/// collaboration and the final heatmap.
#[derive(Debug, Clone)]
pub struct Pipeline {
    pub cfg: PipelineConfig,
    pub weights: ModelWeights,
}

struct Local {
    voxel: VoxelFeature,
    bev_lidar: BevFeature,
    camera: VoxelFeature,
}

/// Seed of agent `id`'s localization noise.
fn agent_seed(seed: u64, id: AgentId) -> u64 {
    let mut z = seed ^ (id as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Oracle heatmap of `agent` on `shape`: a Gaussian bump at the center of
/// every box whose center the agent sees.
pub fn oracle_heatmap(scene: &Scene, agent: AgentId, base: &GridShape, shape: &GridShape, scale: usize, sigma_m: f64) -> Result<Heatmap, Error> {
    let a = scene.agent(agent)?;
    let centers: Vec<(f64, f64)> = (0..scene.boxes.len())
        .filter(|&bi| box_center_visible(scene, a, base, bi))
        .map(|bi| {
            let b = &scene.boxes[bi];
            let p = a.pose.inverse_transform_point([b.x, b.y, 0.0]);
            (p[0], p[1])
        })
        .collect();
    let inv = 1.0 / (2.0 * sigma_m * sigma_m);
    Ok(Heatmap::from_fn(*shape, agent, scale, |h, w| {
        let (x, y) = shape.cell_center(h, w);
        centers
            .iter()
            .map(|&(cx, cy)| (-((x - cx).powi(2) + (y - cy).powi(2)) * inv).exp())
            .fold(0.0f64, f64::max) as f32
    })?)
}

fn transmit(msg: Message, graph: &CommGraph, ledger: &mut CommLedger) -> Result<Message, Error> {
    graph.check(msg.sender, msg.receiver)?;
    let bytes = msg.encode()?;
    let kind = msg.kind();
    ledger.record(LedgerEntry {
        round: kind.round(),
        sender: msg.sender,
        receiver: msg.receiver,
        kind,
        scale: msg.scale,
        bytes: bytes.len() as u64,
    });
    Ok(Message::decode(&bytes)?)
}

fn payload_mismatch(what: &str) -> Error {
    ProtocolError::InvalidPayload(format!("unexpected payload, wanted {what}")).into()
}

impl Pipeline {
    /// `weights` defaults to [`WeightSet::proxy`].
    pub fn new(cfg: PipelineConfig, weights: Option<&WeightSet>) -> Result<Self, Error> {
        cfg.validate()?;
        let weights = match weights {
            Some(ws) => ModelWeights::from_weights(ws, &cfg.dims, cfg.hmf_window)?,
            None => ModelWeights::proxy(&cfg.dims, cfg.hmf_window),
        };
        Ok(Pipeline { cfg, weights })
    }

    fn encode_agent(&self, scene: &Scene, id: AgentId) -> Result<Local, Error> {
        let (voxel, _) = lidar_proxy_encode(scene, id, &self.cfg.encoder)?;
        let bev_lidar = collapse_to_bev(&voxel, &self.weights.lidar_collapse)?;
        let camera = camera_proxy_encode(scene, id, &self.cfg.encoder)?;
        Ok(Local { voxel, bev_lidar, camera })
    }

    /// Stage one for one agent given the decompressed priors it received.
    fn stage_one(&self, local: &Local, priors: &[VoxelFeature]) -> Result<BevFeature, Error> {
        let w = &self.weights;
        let v_mix = match self.cfg.mix {
            MixVoxelMode::Off => local.voxel.clone(),
            MixVoxelMode::On(_) => mix_voxel(&local.voxel, priors, &w.mix)?,
        };
        let occ = occupancy_head(&v_mix, &w.occ)?;
        let gated = occ_gate(&local.camera, &occ, &v_mix, &w.gate)?;
        let b_img = collapse_to_bev(&gated, &w.camera_collapse)?;
        Ok(hmf(&local.bev_lidar, &b_img, &w.hmf)?)
    }

    fn heatmaps(&self, scene: &Scene, id: AgentId, pyr: &ScalePyramid) -> Result<Vec<Heatmap>, Error> {
        pyr.levels
            .iter()
            .enumerate()
            .map(|(s, level)| match self.cfg.heat_source {
                HeatSource::Learned => Ok(heatmap_head(level, &self.weights.head, s)?),
                HeatSource::Oracle { sigma_m } => oracle_heatmap(scene, id, &self.cfg.grid(), level.shape(), s, sigma_m),
            })
            .collect()
    }

    /// Run the full exchange over `graph` under an optional byte budget.
    pub fn run(&self, scene: &Scene, graph: &CommGraph, budget: Option<u64>, noise: &NoiseSpec) -> Result<ExchangeOutput, Error> {
        scene.validate()?;
        noise.validate()?;
        let ids: Vec<AgentId> = {
            let mut v: Vec<_> = scene.agents.iter().map(|a| a.id).collect();
            v.sort_unstable();
            v
        };
        if graph.agents() != ids.as_slice() {
            return Err(ProtocolError::InvalidPayload(format!(
                "graph agents {:?} differ from scene agents {:?}",
                graph.agents(),
                ids
            ))
            .into());
        }
        let grid = self.cfg.grid();
        let c = self.cfg.dims.bev_channels;
        let believed: BTreeMap<AgentId, Pose> = scene
            .agents
            .iter()
            .map(|a| {
                let spec = NoiseSpec { seed: agent_seed(noise.seed, a.id), ..*noise };
                (a.id, perturb_pose(&a.pose, &spec))
            })
            .collect();
        let rel = |s: AgentId, r: AgentId| Pose::relative(&believed[&s], &believed[&r]);
        let links = graph.links();

        let locals: Vec<Local> = par::map_slice(&ids, |&id| self.encode_agent(scene, id)).into_iter().collect::<Result<_, _>>()?;
        let local = |id: AgentId| &locals[ids.binary_search(&id).expect("known agent")];

        let voxel_shape = match self.cfg.mix {
            MixVoxelMode::On(s) => Some((s, s.compressed_shape(&grid)?)),
            MixVoxelMode::Off => None,
        };
        let mut ledger = CommLedger::new(budget);

        // every message size is fixed before any payload exists; voxel
        // decisions depend on sizes only, so a plan with placeholder heats
        // settles round 1 and the real heats only reorder broadcast drops
        let scales = self.cfg.collab.scales;
        let level_dims = self.cfg.level_dims();
        let mut input = self.cfg.budget_input(&links)?;
        let (pre_plan, _) = input.plan(budget);

        // round 1: voxel priors
        let mut priors: BTreeMap<AgentId, Vec<VoxelFeature>> = BTreeMap::new();
        if let Some((strategy, _)) = voxel_shape {
            for (i, &(s, r)) in links.iter().enumerate() {
                if !pre_plan.voxel[i] {
                    continue;
                }
                let warped = warp_to_frame(&local(s).voxel, &rel(s, r), grid, r);
                let packed = compress_voxel(&warped, &strategy)?;
                let msg = transmit(Message { sender: s, receiver: r, scale: 0, payload: Payload::VoxelPrior(packed) }, graph, &mut ledger)?;
                let Payload::VoxelPrior(v) = msg.payload else { return Err(payload_mismatch("voxel prior")) };
                priors.entry(r).or_default().push(decompress_voxel(&v, &strategy, grid)?);
            }
        }

        let fused: Vec<BevFeature> = par::map_slice(&ids, |&id| {
            self.stage_one(local(id), priors.get(&id).map(Vec::as_slice).unwrap_or(&[]))
        })
        .into_iter()
        .collect::<Result<_, _>>()?;
        let pyramids: Vec<ScalePyramid> = fused
            .iter()
            .map(|b| ScalePyramid::build(b, &self.cfg.collab))
            .collect::<Result<_, _>>()?;
        let heats: Vec<Vec<Heatmap>> = ids
            .iter()
            .zip(&pyramids)
            .map(|(&id, p)| self.heatmaps(scene, id, p))
            .collect::<Result<_, _>>()?;
        let at = |id: AgentId| ids.binary_search(&id).expect("known agent");

        // sender-side views warped into every receiver frame
        struct LinkView {
            levels: Vec<BevFeature>,
            heats: Vec<Heatmap>,
            broadcast: Vec<Vec<InstanceVector>>,
        }
        let views: Vec<LinkView> = par::map_slice(&links, |&(s, r)| -> Result<LinkView, Error> {
            let p = rel(s, r);
            let mut levels = Vec::with_capacity(scales);
            let mut hs = Vec::with_capacity(scales);
            let mut bc = Vec::with_capacity(scales);
            for sc in 0..scales {
                let src = &pyramids[at(s)].levels[sc];
                let target = *pyramids[at(r)].levels[sc].shape();
                let lv = warp_bev_to_frame(src, &p, target, r);
                let hb = warp_bev_to_frame(&heats[at(s)][sc].as_bev(), &p, target, r);
                let hm = Heatmap::from_bev(&hb, s, sc)?;
                bc.push(select_k_max(&hm, &lv, self.cfg.collab.k_ir[sc])?);
                levels.push(lv);
                hs.push(hm);
            }
            Ok(LinkView { levels, heats: hs, broadcast: bc })
        })
        .into_iter()
        .collect::<Result<_, _>>()?;

        for (i, b) in input.broadcast.iter_mut().enumerate() {
            let (li, sc) = (i / scales, i % scales);
            b.2 = views[li].broadcast[sc].iter().map(|x| x.heat).collect();
        }
        let (plan, drops) = input.plan(budget);
        debug_assert_eq!(plan.voxel, pre_plan.voxel);
        for d in drops {
            ledger.record_drop(d);
        }
        let post = &input;

        // round 2: heatmaps
        let mut got_heat: BTreeMap<(AgentId, AgentId, usize), Heatmap> = BTreeMap::new();
        for (i, &((s, r), sc, _)) in post.heat.iter().enumerate() {
            if !plan.heat[i] || plan.k_ic == 0 {
                continue;
            }
            let li = links.binary_search(&(s, r)).expect("link");
            let hm = views[li].heats[sc as usize].clone();
            let msg = transmit(Message { sender: s, receiver: r, scale: sc, payload: Payload::HeatmapShare(hm) }, graph, &mut ledger)?;
            let Payload::HeatmapShare(h) = msg.payload else { return Err(payload_mismatch("heatmap")) };
            got_heat.insert((s, r, sc as usize), h);
        }

        // round 3: completion queries and replies
        let mut patches: BTreeMap<(AgentId, usize), Vec<SenderPatch>> = BTreeMap::new();
        for (&(s, r, sc), h_sd) in &got_heat {
            let (rows, cols) = level_dims[sc];
            let positions = completion_positions(&heats[at(r)][sc], h_sd, plan.k_ic)?;
            let q = transmit(
                Message { sender: r, receiver: s, scale: sc as u8, payload: Payload::InstanceQuery { rows, cols, positions } },
                graph,
                &mut ledger,
            )?;
            let Payload::InstanceQuery { positions, .. } = q.payload else { return Err(payload_mismatch("query")) };
            let li = links.binary_search(&(s, r)).expect("link");
            let instances = answer_query(&views[li].levels[sc], &views[li].heats[sc], &positions);
            let reply = transmit(
                Message {
                    sender: s,
                    receiver: r,
                    scale: sc as u8,
                    payload: Payload::InstanceReply { rows, cols, channels: c, instances },
                },
                graph,
                &mut ledger,
            )?;
            let Payload::InstanceReply { instances, .. } = reply.payload else { return Err(payload_mismatch("reply")) };
            patches.entry((r, sc)).or_default().push(SenderPatch { sender: s, positions, instances });
        }

        // round 4: instance broadcasts
        let mut remote: BTreeMap<(AgentId, usize), Vec<InstanceVector>> = BTreeMap::new();
        for (i, &((s, r), sc, _)) in post.broadcast.iter().enumerate() {
            let keep = plan.broadcast_keep[i];
            if keep == 0 {
                continue;
            }
            let li = links.binary_search(&(s, r)).expect("link");
            let (rows, cols) = level_dims[sc as usize];
            let instances = views[li].broadcast[sc as usize][..keep].to_vec();
            let msg = transmit(
                Message { sender: s, receiver: r, scale: sc, payload: Payload::InstanceBroadcast { rows, cols, channels: c, instances } },
                graph,
                &mut ledger,
            )?;
            let Payload::InstanceBroadcast { instances, .. } = msg.payload else { return Err(payload_mismatch("broadcast")) };
            remote.entry((r, sc as usize)).or_default().extend(instances);
        }
        ledger.sort();

        // stage two
        let outputs: Vec<AgentOutput> = par::map_slice(&ids, |&id| -> Result<AgentOutput, Error> {
            let i = at(id);
            let levels = (0..scales)
                .map(|sc| {
                    collaborate_scale(
                        &pyramids[i].levels[sc],
                        &heats[i][sc],
                        patches.get(&(id, sc)).map(Vec::as_slice).unwrap_or(&[]),
                        remote.get(&(id, sc)).map(Vec::as_slice).unwrap_or(&[]),
                        self.cfg.collab.k_ir[sc],
                        &self.weights.collab,
                    )
                })
                .collect::<Result<Vec<_>, _>>()?;
            let bev = merge_scales(&levels)?;
            let heatmap = heatmap_head(&bev, &self.weights.head, 0)?;
            Ok(AgentOutput { bev, heatmap })
        })
        .into_iter()
        .collect::<Result<_, _>>()?;
        Ok(ExchangeOutput { outputs: ids.into_iter().zip(outputs).collect(), ledger })
    }

    /// The no-collaboration baseline: `ego` alone in the scene.
    pub fn run_solo(&self, scene: &Scene, ego: AgentId) -> Result<AgentOutput, Error> {
        let mut solo = scene.clone();
        solo.agents.retain(|a| a.id == ego);
        if solo.agents.is_empty() {
            return Err(crate::error::SceneError::UnknownAgent(ego).into());
        }
        let graph = CommGraph::complete(&[ego])?;
        let mut out = self.run(&solo, &graph, None, &NoiseSpec::none())?;
        Ok(out.outputs.remove(&ego).expect("ego output"))
    }
}
