use collab_core::comms::{CommGraph, MessageKind, Pipeline};
use collab_core::eval::{Scenario, ExperimentConfig, scenes_for};
use collab_core::scene::NoiseSpec;
use collab_core::selftest::small_scenario;

fn setup(agents: usize) -> (Scenario, Pipeline, Vec<collab_core::scene::Scene>) {
    let sc = Scenario { agents, seeds: 2, ..small_scenario() };
    let scenes = scenes_for(&ExperimentConfig { name: "t".into(), base: sc.clone(), sweep: None }).unwrap();
    let pipe = Pipeline::new(sc.pipeline_config().unwrap(), None).unwrap();
    (sc, pipe, scenes)
}

#[test]
fn ledger_matches_closed_form_accounting() {
    for agents in [2, 3] {
        let (sc, pipe, scenes) = setup(agents);
        for scene in &scenes {
            let graph = CommGraph::from_scene(scene, None).unwrap();
            let input = sc.pipeline_config().unwrap().budget_input(&graph.links()).unwrap();
            let full = pipe.run(scene, &graph, None, &NoiseSpec::none()).unwrap();
            let plan = input.full_plan();
            assert_eq!(full.ledger.total(), input.cost(&plan));
            let by_kind = input.cost_by_kind(&plan);
            for (k, b) in MessageKind::ALL.iter().zip(by_kind) {
                assert_eq!(full.ledger.total_for(*k), b, "{k:?}");
            }
            // Under a budget the non-broadcast decisions depend on sizes only;
            // how broadcast trimming spreads over lists depends on real heats.
            for frac in [0.1, 0.4, 0.8] {
                let b = (full.ledger.total() as f64 * frac) as u64;
                let (plan, _) = input.plan(Some(b));
                let out = pipe.run(scene, &graph, Some(b), &NoiseSpec::none()).unwrap();
                let got = MessageKind::ALL.map(|k| out.ledger.total_for(k));
                assert_eq!(got[..4], input.cost_by_kind(&plan)[..4], "agents {agents} seed {} frac {frac}", scene.seed);
                assert!(out.ledger.total() <= b);
                assert!(out.ledger.within_budget());
            }
        }
    }
}

#[test]
fn every_agent_gets_an_output_and_drops_are_logged() {
    let (_, pipe, scenes) = setup(3);
    let scene = &scenes[0];
    let graph = CommGraph::from_scene(scene, None).unwrap();
    let out = pipe.run(scene, &graph, Some(1), &NoiseSpec::none()).unwrap();
    assert_eq!(out.outputs.len(), 3);
    assert_eq!(out.ledger.total(), 0);
    assert!(!out.ledger.drops().is_empty());
}

#[test]
fn disconnected_agents_exchange_nothing() {
    let (_, pipe, scenes) = setup(2);
    let scene = &scenes[0];
    let ids: Vec<u32> = scene.agents.iter().map(|a| a.id).collect();
    let graph = CommGraph::new(&ids, &[]).unwrap();
    let out = pipe.run(scene, &graph, None, &NoiseSpec::none()).unwrap();
    assert_eq!(out.ledger.total(), 0);
    let solo = pipe.run_solo(scene, ids[0]).unwrap();
    assert_eq!(out.outputs[&ids[0]].heatmap.data(), solo.heatmap.data());
}
