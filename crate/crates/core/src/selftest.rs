//! Invariant checks against brute-force oracles, shared by the `selftest`
//! subcommand and the acceptance suite.

use std::panic::{catch_unwind, AssertUnwindSafe};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::collab::{select_k_max, select_k_min, Heatmap, InstanceVector};
use crate::comms::{CommGraph, Message, Payload, Pipeline, HEADER_LEN};
use crate::error::Error;
use crate::eval::{scenes_for, ExperimentConfig, Scenario};
use crate::grid::{attention, BevFeature, GridShape, Matrix, VoxelFeature};
use crate::scene::{NoiseSpec, Scene};

/// Outcome of one check: a short summary on success, the first
/// counterexample on failure.
#[derive(Debug, Clone)]
pub struct Check {
    pub name: &'static str,
    pub result: Result<String, String>,
}

impl Check {
    pub fn passed(&self) -> bool {
        self.result.is_ok()
    }

    pub fn line(&self) -> String {
        match &self.result {
            Ok(s) => format!("PASS {}: {s}", self.name),
            Err(s) => format!("FAIL {}: {s}", self.name),
        }
    }
}

fn rand_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    let data = (0..rows * cols).map(|_| rng.random_range(-3.0f32..3.0)).collect();
    Matrix::new(rows, cols, data).expect("sized buffer")
}

/// Textbook attention: explicit double loop, naive softmax, f64 throughout.
fn attention_oracle(q: &Matrix, k: &Matrix, v: &Matrix) -> Vec<f64> {
    let c = q.cols;
    let mut out = vec![0.0f64; q.rows * v.cols];
    for i in 0..q.rows {
        let mut logits = vec![0.0f64; k.rows];
        for (j, l) in logits.iter_mut().enumerate() {
            let mut dot = 0.0f64;
            for t in 0..c {
                dot += q.row(i)[t] as f64 * k.row(j)[t] as f64;
            }
            *l = dot / (c as f64).sqrt();
        }
        let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = logits.iter().map(|l| (l - m).exp()).sum();
        for (j, l) in logits.iter().enumerate() {
            let a = (l - m).exp() / z;
            for t in 0..v.cols {
                out[i * v.cols + t] += a * v.row(j)[t] as f64;
            }
        }
    }
    out
}

/// Fuzzed attention (M, N <= 16, C <= 32) against the double-loop oracle.
pub fn attention_check(cases: usize, seed: u64, tol: f64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for case in 0..cases {
        let (m, n, c, cv) = (
            rng.random_range(1..=16),
            rng.random_range(1..=16),
            rng.random_range(1..=32),
            rng.random_range(1..=32),
        );
        let (q, k, v) = (rand_matrix(&mut rng, m, c), rand_matrix(&mut rng, n, c), rand_matrix(&mut rng, n, cv));
        let got = match attention(&q, &k, &v) {
            Ok(g) => g,
            Err(e) => return Check { name: "attention", result: Err(format!("case {case}: {e}")) },
        };
        let want = attention_oracle(&q, &k, &v);
        let err = got.data.iter().zip(&want).map(|(a, b)| (*a as f64 - b).abs()).fold(0.0, f64::max);
        worst = worst.max(err);
        if err > tol {
            return Check {
                name: "attention",
                result: Err(format!("case {case} (M={m}, N={n}, C={c}): max abs error {err:.3e} > {tol:.0e}")),
            };
        }
    }
    Check { name: "attention", result: Ok(format!("{cases} cases, max abs error {worst:.2e}")) }
}

fn rand_heatmap(rng: &mut ChaCha8Rng) -> Heatmap {
    let (h, w) = (rng.random_range(1..=12), rng.random_range(1..=12));
    let levels = rng.random_range(2..=5);
    // coarse levels force many ties
    let quantized = rng.random_bool(0.6);
    let data = (0..h * w)
        .map(|_| {
            if quantized {
                rng.random_range(0..levels) as f32 / (levels - 1) as f32
            } else {
                rng.random_range(0.0f32..=1.0)
            }
        })
        .collect();
    Heatmap::new(GridShape::new(h, w, 1, 1, 1.0, 1.0).expect("valid"), data, 0, 0).expect("values in range")
}

/// Top-K selection against the prefix of a full stable sort.
pub fn topk_check(cases: usize, seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ties = 0usize;
    for case in 0..cases {
        let hm = rand_heatmap(&mut rng);
        let (rows, cols) = (hm.rows(), hm.cols());
        let n = rows * cols;
        let k = rng.random_range(0..=n);
        let d = hm.data();
        let mut asc: Vec<usize> = (0..n).collect();
        asc.sort_by(|&a, &b| d[a].partial_cmp(&d[b]).expect("finite"));
        let mut desc: Vec<usize> = (0..n).collect();
        desc.sort_by(|&a, &b| d[b].partial_cmp(&d[a]).expect("finite"));
        if k > 0 && k < n && d[asc[k - 1]] == d[asc[k]] {
            ties += 1;
        }
        let pos = |i: usize| (i / cols, i % cols);
        let want_min: Vec<_> = asc[..k].iter().map(|&i| pos(i)).collect();
        let got_min = select_k_min(&hm, k);
        if got_min.as_ref().ok() != Some(&want_min) {
            return Check { name: "top-k", result: Err(format!("case {case}: select_k_min k={k} gave {got_min:?}, want {want_min:?}")) };
        }
        let feat = BevFeature::from_fn(hm.shape().with_channels(2), 0, |h, w, c| (h * cols + w) as f32 + c as f32 * 0.5)
            .expect("valid");
        let got_max = match select_k_max(&hm, &feat, k) {
            Ok(g) => g,
            Err(e) => return Check { name: "top-k", result: Err(format!("case {case}: {e}")) },
        };
        let want_max: Vec<InstanceVector> = desc[..k]
            .iter()
            .map(|&i| InstanceVector { h: i / cols, w: i % cols, feature: feat.cell(i / cols, i % cols).to_vec(), heat: d[i], scale: 0, owner: 0 })
            .collect();
        if got_max != want_max {
            return Check { name: "top-k", result: Err(format!("case {case}: select_k_max k={k} differs from stable-sort prefix")) };
        }
        if select_k_min(&hm, n + 1).is_ok() {
            return Check { name: "top-k", result: Err(format!("case {case}: k > cells accepted")) };
        }
    }
    Check { name: "top-k", result: Ok(format!("{cases} cases ({ties} with a tie at the cut)")) }
}

/// A random message that passes validation.
pub fn random_message(rng: &mut ChaCha8Rng) -> Message {
    let sender = rng.random_range(0..6u32);
    let receiver = rng.random_range(0..6u32);
    let scale = rng.random_range(0..3u8);
    let (rows, cols) = (rng.random_range(1..=10), rng.random_range(1..=10));
    let c = rng.random_range(0..=12);
    let val = |rng: &mut ChaCha8Rng| rng.random_range(-1e3f32..1e3);
    let payload = match rng.random_range(0..5) {
        0 => {
            let g = GridShape::new(rows, cols, rng.random_range(1..=4), c.max(1), rng.random_range(0.1f32..4.0), rng.random_range(0.1f32..2.0))
                .expect("valid");
            let data = (0..g.voxel_len()).map(|_| val(rng)).collect();
            Payload::VoxelPrior(VoxelFeature::new(g, data, sender).expect("sized"))
        }
        1 => {
            let g = GridShape::new(rows, cols, 1, 1, rng.random_range(0.1f32..4.0), 1.0).expect("valid");
            let data = (0..rows * cols).map(|_| rng.random_range(0.0f32..=1.0)).collect();
            Payload::HeatmapShare(Heatmap::new(g, data, sender, scale as usize).expect("in range"))
        }
        2 => {
            let n = rng.random_range(0..=20);
            let positions = (0..n).map(|_| (rng.random_range(0..rows), rng.random_range(0..cols))).collect();
            Payload::InstanceQuery { rows, cols, positions }
        }
        k => {
            let n = rng.random_range(0..=20);
            let instances = (0..n)
                .map(|_| InstanceVector {
                    h: rng.random_range(0..rows),
                    w: rng.random_range(0..cols),
                    feature: (0..c).map(|_| val(rng)).collect(),
                    heat: rng.random_range(0.0f32..=1.0),
                    scale: scale as usize,
                    owner: sender,
                })
                .collect();
            if k == 3 {
                Payload::InstanceReply { rows, cols, channels: c, instances }
            } else {
                Payload::InstanceBroadcast { rows, cols, channels: c, instances }
            }
        }
    };
    Message { sender, receiver, scale, payload }
}

/// `decode(encode(m)) == m` and re-encoding reproduces the same bytes.
pub fn wire_roundtrip_check(cases: usize, seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut bytes_total = 0usize;
    for case in 0..cases {
        let m = random_message(&mut rng);
        let fail = |why: String| Check { name: "wire round-trip", result: Err(format!("case {case} ({}): {why}", m.kind())) };
        let bytes = match m.encode() {
            Ok(b) => b,
            Err(e) => return fail(format!("encode failed: {e}")),
        };
        if bytes.len() != m.byte_len() {
            return fail(format!("{} bytes, byte_len says {}", bytes.len(), m.byte_len()));
        }
        bytes_total += bytes.len();
        match Message::decode(&bytes) {
            Ok(d) if d == m && d.encode().ok().as_deref() == Some(bytes.as_slice()) => {}
            Ok(_) => return fail("decoded message differs".into()),
            Err(e) => return fail(format!("decode failed: {e}")),
        }
    }
    Check { name: "wire round-trip", result: Ok(format!("{cases} messages, {bytes_total} bytes")) }
}

/// Structural damage (truncation, bad magic/version/kind, length or dims
/// mismatch, trailing bytes, out-of-range fields) must decode to an error;
/// arbitrary byte noise must never panic.
pub fn wire_corruption_check(cases: usize, seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for case in 0..cases {
        let m = random_message(&mut rng);
        let good = m.encode().expect("valid message");
        let mut bad = good.clone();
        let what = match rng.random_range(0..8) {
            0 => {
                bad.truncate(rng.random_range(0..good.len()));
                "truncated"
            }
            1 => {
                bad[rng.random_range(0..4)] ^= rng.random_range(1..=255u8);
                "magic"
            }
            2 => {
                bad[4] = bad[4].wrapping_add(rng.random_range(1..=255u8));
                "version"
            }
            3 => {
                bad[6] = [0u8, 6, 7, 200, 255][rng.random_range(0..5)];
                "kind"
            }
            4 => {
                let len = u32::from_le_bytes(bad[32..36].try_into().expect("4 bytes"));
                let delta = rng.random_range(1..=64u32);
                let v = if rng.random_bool(0.5) { len.wrapping_add(delta) } else { len.wrapping_sub(delta) };
                bad[32..36].copy_from_slice(&v.to_le_bytes());
                "payload_len"
            }
            5 => {
                bad.extend((0..rng.random_range(1..16)).map(|_| rng.random::<u8>()));
                "trailing"
            }
            6 => {
                // grow a length-bearing dimension without growing the payload
                let idx = match m.payload {
                    Payload::VoxelPrior(_) => rng.random_range(0..4),
                    Payload::HeatmapShare(_) => rng.random_range(0..2),
                    _ => 2,
                };
                let d = 16 + 4 * idx;
                let v = u32::from_le_bytes(bad[d..d + 4].try_into().expect("4 bytes"));
                bad[d..d + 4].copy_from_slice(&(v + 1).to_le_bytes());
                "dims"
            }
            _ => {
                // an out-of-range field inside the payload, where one exists
                match &m.payload {
                    Payload::InstanceQuery { positions, .. } if !positions.is_empty() => {
                        let at = HEADER_LEN + 8 * rng.random_range(0..positions.len());
                        bad[at..at + 4].copy_from_slice(&(-1i32).to_le_bytes());
                        "position"
                    }
                    Payload::InstanceReply { instances, channels, .. } | Payload::InstanceBroadcast { instances, channels, .. }
                        if !instances.is_empty() =>
                    {
                        let entry = 8 + 4 * channels + 4;
                        let at = HEADER_LEN + entry * rng.random_range(0..instances.len()) + entry - 4;
                        bad[at..at + 4].copy_from_slice(&1.5f32.to_le_bytes());
                        "heat"
                    }
                    Payload::HeatmapShare(_) => {
                        bad[HEADER_LEN + 12..HEADER_LEN + 16].copy_from_slice(&f32::NAN.to_le_bytes());
                        "non-finite"
                    }
                    _ => {
                        bad.pop();
                        "truncated"
                    }
                }
            }
        };
        match catch_unwind(AssertUnwindSafe(|| Message::decode(&bad))) {
            Ok(Err(_)) => {}
            Ok(Ok(_)) => {
                return Check { name: "wire corruption", result: Err(format!("case {case}: {what} damage decoded without error")) }
            }
            Err(_) => return Check { name: "wire corruption", result: Err(format!("case {case}: decode panicked on {what} damage")) },
        }
        // unstructured noise: any result is fine, a panic is not
        let mut noise = good;
        for _ in 0..rng.random_range(1..8) {
            let i = rng.random_range(0..noise.len());
            noise[i] = rng.random();
        }
        if catch_unwind(AssertUnwindSafe(|| Message::decode(&noise))).is_err() {
            return Check { name: "wire corruption", result: Err(format!("case {case}: decode panicked on byte noise")) };
        }
    }
    Check { name: "wire corruption", result: Ok(format!("{cases} damaged messages rejected, no panics")) }
}

/// Ledger total stays within every budget fraction, and a zero budget
/// reproduces the ego-only baseline bit for bit.
pub fn budget_law_check(scenario: &Scenario, scenes: &[Scene], fractions: &[f64]) -> Check {
    let run = || -> Result<String, String> {
        let pipe = Pipeline::new(scenario.pipeline_config().map_err(|e| e.to_string())?, None).map_err(|e| e.to_string())?;
        let mut runs = 0;
        for scene in scenes {
            let scene = scene.with_agent_count(scenario.agents);
            let graph = CommGraph::from_scene(&scene, scenario.comm_range_m).map_err(|e| e.to_string())?;
            let noise = NoiseSpec { sigma_p: scenario.noise.sigma_p, sigma_r: scenario.noise.sigma_r, seed: scene.seed };
            let full = pipe.run(&scene, &graph, None, &noise).map_err(|e| e.to_string())?.ledger.total();
            let ego = scene.agents[0].id;
            for &f in fractions {
                let b = (full as f64 * f).floor() as u64;
                let out = pipe.run(&scene, &graph, Some(b), &noise).map_err(|e| e.to_string())?;
                if out.ledger.total() > b {
                    return Err(format!("seed {}: {} bytes over budget {b}", scene.seed, out.ledger.total()));
                }
                if b == 0 {
                    let solo = pipe.run_solo(&scene, ego).map_err(|e| e.to_string())?;
                    let mine = &out.outputs[&ego];
                    let same = mine.bev.data().iter().zip(solo.bev.data()).all(|(a, b)| a.to_bits() == b.to_bits())
                        && mine.heatmap.data().iter().zip(solo.heatmap.data()).all(|(a, b)| a.to_bits() == b.to_bits());
                    if !same {
                        return Err(format!("seed {}: zero budget differs from the ego-only baseline", scene.seed));
                    }
                }
                runs += 1;
            }
        }
        Ok(format!("{runs} budgeted runs within budget; B=0 equals baseline"))
    };
    Check { name: "budget law", result: run() }
}

/// A small scenario for quick self-checks.
pub fn small_scenario() -> Scenario {
    let mut s = Scenario { seeds: 2, agents: 3, ..Scenario::default() };
    s.grid.h = 32;
    s.grid.w = 32;
    s.grid.l = 4;
    s.grid.c = 8;
    s.scene.extent_m = 20.0;
    s.scene.sensor_range_m = 18.0;
    s.scene.boxes = 4;
    s.scene.occluded_count = 1;
    s.scene.min_box_spacing_m = 6.0;
    s.collab.k_ic = 10;
    s.collab.k_ir = vec![40, 20, 10];
    s
}

/// The quick suite behind `collabsim selftest`.
pub fn quick_suite() -> Result<Vec<Check>, Error> {
    let sc = small_scenario();
    let cfg = ExperimentConfig { name: "selftest".into(), base: sc.clone(), sweep: None };
    let scenes = scenes_for(&cfg)?;
    Ok(vec![
        attention_check(200, 1, 1e-5),
        topk_check(200, 2),
        wire_roundtrip_check(500, 3),
        wire_corruption_check(200, 4),
        budget_law_check(&sc, &scenes, &[0.0, 0.25, 0.5, 1.0]),
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn checks_pass_on_small_counts() {
        for c in [attention_check(30, 9, 1e-5), topk_check(50, 9), wire_roundtrip_check(100, 9), wire_corruption_check(100, 9)] {
            assert!(c.passed(), "{}", c.line());
        }
    }

    #[test]
    fn oracle_catches_a_wrong_scale() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let q = rand_matrix(&mut rng, 3, 4);
        let k = rand_matrix(&mut rng, 5, 4);
        let v = rand_matrix(&mut rng, 5, 2);
        let doubled = Matrix::new(3, 4, q.data.iter().map(|x| x * 2.0).collect()).unwrap();
        let got = attention(&doubled, &k, &v).unwrap();
        let want = attention_oracle(&q, &k, &v);
        let err = got.data.iter().zip(&want).map(|(a, b)| (*a as f64 - b).abs()).fold(0.0, f64::max);
        assert!(err > 1e-3);
    }
}
