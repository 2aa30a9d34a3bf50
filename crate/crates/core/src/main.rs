use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use collab_core::comms::{comm_volume, dense_volume, reduction_vs, CommGraph, HeatSource, MessageKind};
use collab_core::config::RunConfig;
use collab_core::error::{ConfigError, Error, ParamError};
use collab_core::eval::{run_experiment_on, EvalReport, SweepAxis};
use collab_core::fusion::MixVoxelMode;
use collab_core::{par, selftest};

#[derive(Parser)]
#[command(name = "collabsim", version, about = "Multi-agent collaborative BEV perception simulator")]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a single configuration over its seeds.
    Run(RunArgs),
    /// Run one report per swept axis.
    Sweep(SweepArgs),
    /// Byte accounting from the configuration alone; nothing is simulated.
    Bandwidth(BandwidthArgs),
    /// Run the built-in invariant checks.
    Selftest,
}

#[derive(Args, Default)]
struct Common {
    /// TOML configuration; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    name: Option<String>,
    #[arg(long)]
    agents: Option<usize>,
    #[arg(long)]
    seeds: Option<usize>,
    /// First seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Voxel-prior compression: m1, m2, m3, off or FHxFWxFL.
    #[arg(long)]
    mix: Option<MixVoxelMode>,
    #[arg(long)]
    k_ic: Option<usize>,
    /// Refinement instances per scale, e.g. 100/50/25.
    #[arg(long)]
    k_ir: Option<String>,
    /// Per-frame byte budget.
    #[arg(long)]
    budget: Option<u64>,
    /// Translation noise std (m).
    #[arg(long)]
    sigma_p: Option<f64>,
    /// Heading noise std (deg).
    #[arg(long)]
    sigma_r: Option<f64>,
    /// Use ideal heatmaps (Gaussian bump of this std in meters) for selection.
    #[arg(long)]
    oracle_heat: Option<f64>,
    #[arg(long)]
    weights: Option<PathBuf>,
    /// Output directory (default: $COLLABSIM_OUT or ./out).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long = "sweep-agents", value_delimiter = ',')]
    sweep_agents: Vec<usize>,
    /// Noise levels; each sets sigma_p (m) and sigma_r (deg) together.
    #[arg(long, value_delimiter = ',')]
    noise: Vec<f64>,
    #[arg(long = "sweep-k-ic", value_delimiter = ',')]
    sweep_k_ic: Vec<usize>,
    /// Schedules separated by ';', e.g. "100/50/25;50/25/10".
    #[arg(long = "sweep-k-ir")]
    sweep_k_ir: Option<String>,
    #[arg(long, value_delimiter = ',')]
    strategy: Vec<MixVoxelMode>,
    #[arg(long = "sweep-budget", value_delimiter = ',')]
    sweep_budget: Vec<u64>,
}

#[derive(Args)]
struct BandwidthArgs {
    /// Dense BEV map volume log2(H*W*C*32/8) instead of config accounting.
    #[arg(long)]
    dense: bool,
    #[arg(long)]
    h: Option<u64>,
    #[arg(long)]
    w: Option<u64>,
    #[arg(long)]
    c: Option<u64>,
    /// Reduction between two log2 volumes: BASE,OURS.
    #[arg(long, value_delimiter = ',')]
    reduction: Vec<f64>,
    #[command(flatten)]
    common: Common,
}

fn usage(field: &str, reason: impl Into<String>) -> Error {
    ConfigError::field(field, reason).into()
}

fn parse_schedule(field: &str, s: &str) -> Result<Vec<usize>, Error> {
    s.split('/')
        .map(|t| t.trim().parse::<usize>().map_err(|_| usage(field, format!("`{s}` is not like 100/50/25"))))
        .collect()
}

impl Common {
    fn resolve(&self) -> Result<RunConfig, Error> {
        let mut c = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(v) = &self.name {
            c.name = v.clone();
        }
        if let Some(v) = self.agents {
            c.sim.agents = v;
        }
        if let Some(v) = self.seeds {
            c.sim.seeds = v;
        }
        if let Some(v) = self.seed {
            c.sim.base_seed = v;
        }
        if let Some(v) = self.mix {
            c.sim.mix_voxel = v;
        }
        if let Some(v) = self.k_ic {
            c.sim.collab.k_ic = v;
        }
        if let Some(s) = &self.k_ir {
            c.sim.collab.k_ir = parse_schedule("k_ir", s)?;
            c.sim.collab.scales = c.sim.collab.k_ir.len();
        }
        if let Some(v) = self.budget {
            c.sim.budget_bytes = Some(v);
        }
        if let Some(v) = self.sigma_p {
            c.sim.noise.sigma_p = v;
        }
        if let Some(v) = self.sigma_r {
            c.sim.noise.sigma_r = v;
        }
        if let Some(v) = self.oracle_heat {
            c.sim.heat_source = HeatSource::Oracle { sigma_m: v };
        }
        if let Some(v) = &self.weights {
            c.weights = Some(v.clone());
        }
        if let Some(v) = &self.out {
            c.output_dir = Some(v.clone());
        }
        Ok(c)
    }
}

fn write_file(path: &Path, text: &str) -> Result<(), Error> {
    std::fs::write(path, text).map_err(|source| Error::Io { path: path.into(), source })
}

fn ledger_text(report: &EvalReport) -> String {
    let mut s = String::new();
    for (row, seeds) in report.rows.iter().zip(&report.seed_results) {
        for r in seeds {
            let _ = writeln!(s, "== {} seed {}", row.key, r.seed);
            s.push_str(&r.ledger.to_table());
            s.push('\n');
        }
    }
    s
}

/// Validate, run and write `<name>.csv`, `<name>.txt` and `<name>.ledger.txt`.
fn execute(cfg: &RunConfig) -> Result<(), Error> {
    cfg.validate()?;
    let dir = cfg.output_dir();
    let weights = cfg.load_weights()?;
    let scenes = cfg.scenes()?;
    std::fs::create_dir_all(&dir).map_err(|source| Error::Io { path: dir.clone(), source })?;
    let report = run_experiment_on(&cfg.experiment(), &scenes, weights.as_ref())?;
    write_file(&dir.join(format!("{}.csv", cfg.name)), &report.to_csv())?;
    write_file(&dir.join(format!("{}.txt", cfg.name)), &report.to_text())?;
    write_file(&dir.join(format!("{}.ledger.txt", cfg.name)), &ledger_text(&report))?;
    print!("{}", report.to_text());
    println!("wrote {}/{}.{{csv,txt,ledger.txt}}", dir.display(), cfg.name);
    Ok(())
}

fn sweep_axes(a: &SweepArgs) -> Result<Vec<SweepAxis>, Error> {
    let mut axes = Vec::new();
    if !a.sweep_agents.is_empty() {
        axes.push(SweepAxis::Agents(a.sweep_agents.clone()));
    }
    if !a.noise.is_empty() {
        axes.push(SweepAxis::Noise(a.noise.clone()));
    }
    if !a.sweep_k_ic.is_empty() {
        axes.push(SweepAxis::KIc(a.sweep_k_ic.clone()));
    }
    if let Some(s) = &a.sweep_k_ir {
        let v = s.split(';').map(|t| parse_schedule("sweep.k_ir", t)).collect::<Result<_, _>>()?;
        axes.push(SweepAxis::KIr(v));
    }
    if !a.strategy.is_empty() {
        axes.push(SweepAxis::Strategy(a.strategy.clone()));
    }
    if !a.sweep_budget.is_empty() {
        axes.push(SweepAxis::Budget(a.sweep_budget.clone()));
    }
    Ok(axes)
}

fn sweep(a: &SweepArgs) -> Result<(), Error> {
    let base = a.common.resolve()?;
    let mut axes = sweep_axes(a)?;
    if axes.is_empty() {
        axes.extend(base.sweep.clone());
    }
    if axes.is_empty() {
        return Err(usage("sweep", "no axis given (config [sweep] or an axis flag)"));
    }
    let single = axes.len() == 1 && base.sweep.as_ref() == axes.first();
    let cfgs: Vec<RunConfig> = axes
        .into_iter()
        .map(|ax| RunConfig {
            name: if single { base.name.clone() } else { format!("{}_{}", base.name, ax.name()) },
            sweep: Some(ax),
            ..base.clone()
        })
        .collect();
    // Fail fast: every configuration is checked before any runs.
    for c in &cfgs {
        c.validate()?;
    }
    cfgs.iter().try_for_each(execute)
}

fn bandwidth(a: &BandwidthArgs) -> Result<(), Error> {
    if !a.reduction.is_empty() {
        if a.reduction.len() != 2 {
            return Err(usage("reduction", "expects BASE,OURS"));
        }
        println!("{:.2}", reduction_vs(a.reduction[0], a.reduction[1]));
        return Ok(());
    }
    if a.dense {
        let (Some(h), Some(w), Some(c)) = (a.h, a.w, a.c) else {
            return Err(usage("bandwidth", "--dense needs --h, --w and --c"));
        };
        println!("{:.2}", dense_volume(h, w, c)?);
        return Ok(());
    }
    let mut cfg = a.common.resolve()?;
    if let Some(h) = a.h {
        cfg.sim.grid.h = h as usize;
    }
    if let Some(w) = a.w {
        cfg.sim.grid.w = w as usize;
    }
    if let Some(c) = a.c {
        cfg.sim.grid.c = c as usize;
    }
    cfg.sweep = None;
    cfg.scenario = None;
    cfg.validate()?;
    let pc = cfg.sim.pipeline_config()?;
    let ids: Vec<u32> = (0..cfg.sim.agents as u32).collect();
    let links = CommGraph::complete(&ids)?.links();
    let input = pc.budget_input(&links)?;
    let (plan, drops) = input.plan(cfg.sim.budget_bytes);
    let by_kind = input.cost_by_kind(&plan);
    let log2 = |b: u64| comm_volume(b).map(|v| format!("{v:.2}")).unwrap_or_else(|_| "-".into());
    println!("agents {} links {}", cfg.sim.agents, links.len());
    for (k, b) in MessageKind::ALL.iter().zip(by_kind) {
        println!("{:<18} {:>12} {:>6}", k.name(), b, log2(b));
    }
    let total = input.cost(&plan);
    println!("{:<18} {:>12} {:>6}", "total", total, log2(total));
    println!("{:<18} {:>12} {:>6}", "per link", total / links.len().max(1) as u64, log2(total / links.len().max(1) as u64));
    if !drops.is_empty() {
        println!("dropped {} items to fit the budget", drops.len());
        println!("(broadcast trimming depends on run-time heats; its bytes are an estimate)");
    }
    Ok(())
}

fn run_selftest() -> Result<bool, Error> {
    let checks = selftest::quick_suite()?;
    for c in &checks {
        println!("{}", c.line());
    }
    Ok(checks.iter().all(|c| c.passed()))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = par::with_jobs(cli.jobs, || match &cli.cmd {
        Cmd::Run(a) => a.common.resolve().and_then(|c| {
            if c.sweep.is_some() {
                return Err(usage("sweep", "`run` takes a single configuration; use `sweep`"));
            }
            execute(&c)
        }),
        Cmd::Sweep(a) => sweep(a),
        Cmd::Bandwidth(a) => bandwidth(a),
        Cmd::Selftest => match run_selftest() {
            Ok(true) => Ok(()),
            Ok(false) => Err(ParamError::Invalid("selftest failed".into()).into()),
            Err(e) => Err(e),
        },
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) => ExitCode::from(2),
                _ => ExitCode::from(1),
            }
        }
    }
}
