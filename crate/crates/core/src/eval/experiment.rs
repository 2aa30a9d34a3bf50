use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::collab::CollabConfig;
use crate::comms::{CommGraph, CommLedger, HeatSource, MessageKind, Pipeline, PipelineConfig};
use crate::error::{ConfigError, Error};
use crate::eval::{average_precision, decode_detections, recall, DecodeConfig, Detection};
use crate::fusion::MixVoxelMode;
use crate::grid::{GridShape, ModelDims, WeightSet};
use crate::par;
use crate::scene::{generate_scene, EncoderConfig, GenParams, NoiseSpec, Scene};

/// IoU thresholds of the report columns.
pub const IOU_THRESHOLDS: [f64; 3] = [0.3, 0.5, 0.7];

/// Serializable grid description.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSpec {
    pub h: usize,
    pub w: usize,
    pub l: usize,
    pub c: usize,
    pub cell_size_m: f32,
    pub z_size_m: f32,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec { h: 64, w: 64, l: 8, c: 16, cell_size_m: 1.0, z_size_m: 0.5 }
    }
}

impl GridSpec {
    pub fn shape(&self) -> Result<GridShape, ConfigError> {
        GridShape::new(self.h, self.w, self.l, self.c, self.cell_size_m, self.z_size_m)
            .map_err(|e| ConfigError::field("grid", e.to_string()))
    }
}

/// Localization noise level: translation std (m) and heading std (deg).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseLevel {
    pub sigma_p: f64,
    pub sigma_r: f64,
}

/// One simulated setting; every seed runs it on a freshly generated scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Scenario {
    pub grid: GridSpec,
    pub scene: GenParams,
    /// Agents taking part (the first `agents` of the generated scene).
    pub agents: usize,
    pub seeds: usize,
    pub base_seed: u64,
    pub mix_voxel: MixVoxelMode,
    pub collab: CollabConfig,
    pub budget_bytes: Option<u64>,
    pub noise: NoiseLevel,
    pub heat_source: HeatSource,
    pub decode: DecodeConfig,
    pub comm_range_m: Option<f64>,
    pub hmf_window: usize,
}

impl Default for Scenario {
    fn default() -> Self {
        Scenario {
            grid: GridSpec::default(),
            scene: GenParams::default(),
            agents: 2,
            seeds: 20,
            base_seed: 0,
            mix_voxel: "m1".parse().expect("known strategy"),
            collab: CollabConfig::default(),
            budget_bytes: None,
            noise: NoiseLevel::default(),
            heat_source: HeatSource::Learned,
            decode: DecodeConfig::default(),
            comm_range_m: None,
            hmf_window: 1,
        }
    }
}

impl Scenario {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let g = self.grid.shape()?;
        self.scene.validate().map_err(|e| ConfigError::field("scene", e.to_string()))?;
        if self.agents == 0 {
            return Err(ConfigError::field("agents", "must be >= 1"));
        }
        if self.seeds == 0 {
            return Err(ConfigError::field("seeds", "must be >= 1"));
        }
        if let MixVoxelMode::On(s) = self.mix_voxel {
            s.compressed_shape(&g).map_err(|e| ConfigError::field("mix_voxel", e.to_string()))?;
        }
        self.collab.validate_for(g.h_cells, g.w_cells)?;
        if !(self.noise.sigma_p >= 0.0 && self.noise.sigma_r >= 0.0) {
            return Err(ConfigError::field("noise", "sigmas must be >= 0"));
        }
        if !(0.0..=1.0).contains(&self.decode.threshold) {
            return Err(ConfigError::field("decode.threshold", "must lie in [0, 1]"));
        }
        if !(self.decode.length_m > 0.0 && self.decode.width_m > 0.0) {
            return Err(ConfigError::field("decode", "box size must be positive"));
        }
        if self.hmf_window.is_multiple_of(2) {
            return Err(ConfigError::field("hmf_window", "must be odd"));
        }
        if let HeatSource::Oracle { sigma_m } = self.heat_source {
            if !(sigma_m > 0.0) {
                return Err(ConfigError::field("heat_source.sigma_m", "must be positive"));
            }
        }
        if self.comm_range_m.is_some_and(|r| !(r > 0.0)) {
            return Err(ConfigError::field("comm_range_m", "must be positive"));
        }
        Ok(())
    }

    pub fn pipeline_config(&self) -> Result<PipelineConfig, ConfigError> {
        let grid = self.grid.shape()?;
        let dims = ModelDims { lidar_channels: grid.channels, camera_channels: grid.channels, bev_channels: grid.channels, mlp_layers: 1 };
        Ok(PipelineConfig {
            encoder: EncoderConfig::new(grid, dims.camera_channels),
            dims,
            mix: self.mix_voxel,
            collab: self.collab.clone(),
            heat_source: self.heat_source,
            hmf_window: self.hmf_window,
        })
    }

    pub fn seed_list(&self) -> Vec<u64> {
        (0..self.seeds as u64).map(|i| self.base_seed + i).collect()
    }
}

/// The single axis a sweep varies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum SweepAxis {
    Agents(Vec<usize>),
    /// Equal translation (m) and heading (deg) std per point.
    Noise(Vec<f64>),
    KIc(Vec<usize>),
    KIr(Vec<Vec<usize>>),
    Strategy(Vec<MixVoxelMode>),
    Budget(Vec<u64>),
}

impl SweepAxis {
    pub fn name(&self) -> &'static str {
        match self {
            SweepAxis::Agents(_) => "agents",
            SweepAxis::Noise(_) => "noise",
            SweepAxis::KIc(_) => "k_ic",
            SweepAxis::KIr(_) => "k_ir",
            SweepAxis::Strategy(_) => "strategy",
            SweepAxis::Budget(_) => "budget",
        }
    }

    pub fn len(&self) -> usize {
        match self {
            SweepAxis::Agents(v) | SweepAxis::KIc(v) => v.len(),
            SweepAxis::Noise(v) => v.len(),
            SweepAxis::KIr(v) => v.len(),
            SweepAxis::Strategy(v) => v.len(),
            SweepAxis::Budget(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// The scenario at point `i`.
    fn apply(&self, base: &Scenario, i: usize) -> Scenario {
        let mut s = base.clone();
        match self {
            SweepAxis::Agents(v) => s.agents = v[i],
            SweepAxis::Noise(v) => s.noise = NoiseLevel { sigma_p: v[i], sigma_r: v[i] },
            SweepAxis::KIc(v) => s.collab.k_ic = v[i],
            SweepAxis::KIr(v) => {
                s.collab.k_ir = v[i].clone();
                s.collab.scales = v[i].len();
            }
            SweepAxis::Strategy(v) => s.mix_voxel = v[i],
            SweepAxis::Budget(v) => s.budget_bytes = Some(v[i]),
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub base: Scenario,
    pub sweep: Option<SweepAxis>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig { name: "run".into(), base: Scenario::default(), sweep: None }
    }
}

impl ExperimentConfig {
    pub fn points(&self) -> Vec<Scenario> {
        match &self.sweep {
            None => vec![self.base.clone()],
            Some(ax) => (0..ax.len()).map(|i| ax.apply(&self.base, i)).collect(),
        }
    }

    /// Agents the shared scenes are generated with.
    fn scene_agents(&self) -> usize {
        self.points().iter().map(|p| p.agents).chain([self.base.scene.agents]).max().unwrap_or(1)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if let Some(ax) = &self.sweep {
            if ax.is_empty() {
                return Err(ConfigError::field(format!("sweep.{}", ax.name()), "needs at least one value"));
            }
            if let SweepAxis::Noise(v) = ax {
                if v.iter().any(|x| !(*x >= 0.0)) {
                    return Err(ConfigError::field("sweep.noise", "values must be >= 0"));
                }
            }
        }
        for p in self.points() {
            p.validate().map_err(|e| match (&self.sweep, e) {
                (Some(ax), ConfigError::Field { field, reason }) => {
                    ConfigError::field(format!("sweep.{} ({field})", ax.name()), reason)
                }
                (_, e) => e,
            })?;
        }
        Ok(())
    }
}

/// Per-seed outcome of one scenario.
#[derive(Debug, Clone)]
pub struct SeedResult {
    pub seed: u64,
    pub ap: [f64; 3],
    pub recall_30: f64,
    pub bytes: u64,
    pub bytes_by_kind: [u64; 5],
    pub detections: usize,
    pub ground_truth: usize,
    pub ledger: CommLedger,
}

/// Ground-truth boxes of `ego` in its own frame: every box whose center
/// falls inside its grid.
pub fn ground_truth(scene: &Scene, ego: u32, grid: &GridShape) -> Result<Vec<Detection>, Error> {
    let a = scene.agent(ego)?;
    Ok(scene
        .boxes
        .iter()
        .filter_map(|b| {
            let p = a.pose.inverse_transform_point([b.x, b.y, 0.0]);
            grid.cell_of(p[0], p[1])?;
            Some(Detection { x: p[0], y: p[1], length: b.length, width: b.width, yaw: b.yaw - a.pose.yaw, score: 1.0 })
        })
        .collect())
}

/// Scenes shared by every point of an experiment.
pub fn scenes_for(cfg: &ExperimentConfig) -> Result<Vec<Scene>, Error> {
    let grid = cfg.base.grid.shape()?;
    let params = GenParams { agents: cfg.scene_agents(), ..cfg.base.scene };
    cfg.base
        .seed_list()
        .iter()
        .map(|&s| Ok(generate_scene(s, &params, &grid)?))
        .collect()
}

/// Run one scenario on one scene.
pub fn run_seed(sc: &Scenario, pipeline: &Pipeline, scene: &Scene) -> Result<SeedResult, Error> {
    let grid = sc.grid.shape()?;
    let scene = scene.with_agent_count(sc.agents);
    let graph = CommGraph::from_scene(&scene, sc.comm_range_m)?;
    let noise = NoiseSpec { sigma_p: sc.noise.sigma_p, sigma_r: sc.noise.sigma_r, seed: scene.seed };
    let ego = scene.agents[0].id;
    let out = pipeline.run(&scene, &graph, sc.budget_bytes, &noise)?;
    let mine = &out.outputs[&ego];
    let dets = decode_detections(&mine.bev, &mine.heatmap, &sc.decode)?;
    let gts = ground_truth(&scene, ego, &grid)?;
    let ap = IOU_THRESHOLDS.map(|t| average_precision(&dets, &gts, t));
    let bytes_by_kind = MessageKind::ALL.map(|k| out.ledger.total_for(k));
    let bytes = out.ledger.total();
    Ok(SeedResult {
        seed: scene.seed,
        ap,
        recall_30: recall(&dets, &gts, 0.3),
        bytes,
        bytes_by_kind,
        detections: dets.len(),
        ground_truth: gts.len(),
        ledger: out.ledger,
    })
}

/// One report row: a sweep point averaged over seeds.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportRow {
    pub key: String,
    pub agents: usize,
    pub sigma_p: f64,
    pub sigma_r: f64,
    pub mix_voxel: String,
    pub k_ic: usize,
    pub k_ir: String,
    pub budget: Option<u64>,
    pub seeds: usize,
    pub ap: [f64; 3],
    pub recall_30: f64,
    pub mean_bytes: f64,
    pub mean_bytes_by_kind: [f64; 5],
}

impl ReportRow {
    /// log2 of the mean per-frame bytes; `None` when nothing was sent.
    pub fn comm_log2(&self) -> Option<f64> {
        (self.mean_bytes > 0.0).then(|| self.mean_bytes.log2())
    }
}

#[derive(Debug, Clone)]
pub struct EvalReport {
    pub name: String,
    pub axis: String,
    pub base_seed: u64,
    pub rows: Vec<ReportRow>,
    /// Per-seed results of every row, in seed order.
    pub seed_results: Vec<Vec<SeedResult>>,
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |x| format!("{x:.4}"))
}

impl EvalReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from(
            "key,agents,sigma_p,sigma_r,mix_voxel,k_ic,k_ir,budget,seeds,ap30,ap50,ap70,recall30,mean_bytes,comm_log2",
        );
        for k in MessageKind::ALL {
            let _ = write!(s, ",bytes_{}", k.name());
        }
        s.push('\n');
        for r in &self.rows {
            let _ = write!(
                s,
                "{},{},{},{},{},{},{},{},{},{:.6},{:.6},{:.6},{:.6},{:.1},{}",
                r.key,
                r.agents,
                r.sigma_p,
                r.sigma_r,
                r.mix_voxel,
                r.k_ic,
                r.k_ir,
                r.budget.map_or_else(|| "none".into(), |b| b.to_string()),
                r.seeds,
                r.ap[0],
                r.ap[1],
                r.ap[2],
                r.recall_30,
                r.mean_bytes,
                fmt_opt(r.comm_log2()),
            );
            for b in r.mean_bytes_by_kind {
                let _ = write!(s, ",{b:.1}");
            }
            s.push('\n');
        }
        s
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "experiment: {}", self.name);
        let _ = writeln!(s, "axis: {}", self.axis);
        let _ = writeln!(s, "base_seed: {}", self.base_seed);
        let _ = writeln!(s, "points: {}", self.rows.len());
        let _ = writeln!(
            s,
            "{:<14} {:>7} {:>7} {:>7} {:>9} {:>12} {:>9}",
            "key", "AP30", "AP50", "AP70", "recall30", "bytes", "log2"
        );
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{:<14} {:>7.4} {:>7.4} {:>7.4} {:>9.4} {:>12.1} {:>9}",
                r.key,
                r.ap[0],
                r.ap[1],
                r.ap[2],
                r.recall_30,
                r.mean_bytes,
                fmt_opt(r.comm_log2())
            );
        }
        s
    }
}

fn point_key(axis: Option<&SweepAxis>, p: &Scenario) -> String {
    match axis {
        None => "base".into(),
        Some(SweepAxis::Agents(_)) => format!("agents={}", p.agents),
        Some(SweepAxis::Noise(_)) => format!("sigma={}", p.noise.sigma_p),
        Some(SweepAxis::KIc(_)) => format!("k_ic={}", p.collab.k_ic),
        Some(SweepAxis::KIr(_)) => format!("k_ir={}", p.collab.k_ir_label()),
        Some(SweepAxis::Strategy(_)) => format!("mix={}", p.mix_voxel),
        Some(SweepAxis::Budget(_)) => format!("budget={}", p.budget_bytes.unwrap_or(0)),
    }
}

/// Every sweep point over every seed, averaged per point.
pub fn run_experiment(cfg: &ExperimentConfig, weights: Option<&WeightSet>) -> Result<EvalReport, Error> {
    cfg.validate()?;
    let scenes = scenes_for(cfg)?;
    run_experiment_on(cfg, &scenes, weights)
}

/// [`run_experiment`] on caller-supplied scenes (one per seed).
pub fn run_experiment_on(cfg: &ExperimentConfig, scenes: &[Scene], weights: Option<&WeightSet>) -> Result<EvalReport, Error> {
    cfg.validate()?;
    if scenes.is_empty() {
        return Err(ConfigError::field("seeds", "no scenes to run").into());
    }
    let points = cfg.points();
    let pipelines: Vec<Pipeline> = points
        .iter()
        .map(|p| Pipeline::new(p.pipeline_config()?, weights))
        .collect::<Result<_, _>>()?;
    let jobs: Vec<(usize, usize)> = (0..points.len()).flat_map(|p| (0..scenes.len()).map(move |s| (p, s))).collect();
    let mut results: Vec<SeedResult> = par::map_slice(&jobs, |&(p, s)| run_seed(&points[p], &pipelines[p], &scenes[s]))
        .into_iter()
        .collect::<Result<_, _>>()?;
    let n = scenes.len();
    let rows = points
        .iter()
        .enumerate()
        .map(|(pi, p)| {
            let rs = &results[pi * n..(pi + 1) * n];
            let mean = |f: &dyn Fn(&SeedResult) -> f64| rs.iter().map(f).sum::<f64>() / n as f64;
            ReportRow {
                key: point_key(cfg.sweep.as_ref(), p),
                agents: p.agents,
                sigma_p: p.noise.sigma_p,
                sigma_r: p.noise.sigma_r,
                mix_voxel: p.mix_voxel.to_string(),
                k_ic: p.collab.k_ic,
                k_ir: p.collab.k_ir_label(),
                budget: p.budget_bytes,
                seeds: n,
                ap: [0, 1, 2].map(|i| mean(&|r| r.ap[i])),
                recall_30: mean(&|r| r.recall_30),
                mean_bytes: mean(&|r| r.bytes as f64),
                mean_bytes_by_kind: [0, 1, 2, 3, 4].map(|i| mean(&|r| r.bytes_by_kind[i] as f64)),
            }
        })
        .collect();
    let mut seed_results = Vec::with_capacity(points.len());
    for _ in 0..points.len() {
        let rest = results.split_off(n);
        seed_results.push(std::mem::replace(&mut results, rest));
    }
    Ok(EvalReport {
        name: cfg.name.clone(),
        axis: cfg.sweep.as_ref().map_or("none", SweepAxis::name).into(),
        base_seed: cfg.base.base_seed,
        rows,
        seed_results,
    })
}
