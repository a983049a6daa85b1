mod common;

use hnode_anc::attack::{defender_visibility, run_attack, AttackConfig, AttackVariant};
use hnode_anc::defense::{run_defense, single_pass, CancelMode, DefenseConfig, StopReason};
use hnode_anc::hnode::{HNodeSet, NodeSource};
use hnode_anc::pipeline::{identify_stage, probe_stage};
use hnode_anc::probe::Probe;
use hnode_anc::Label;

use common::{rows_set, small_config, small_set};

fn nodes(ids: Vec<usize>, d: usize) -> HNodeSet {
    HNodeSet {
        node_ids: ids,
        baseline: vec![0.0; d],
        percentile: 80.0,
        source: NodeSource::Defender,
        layer: 0,
    }
}

/// Clean rows are all zero, so both classes look alike to any probe. The
/// attack lifts dim 0 of the hallucinated rows; static cancellation at
/// α = 1 with an open gate puts it back.
#[test]
fn exact_cancellation_restores_full_robustness() {
    let labels: Vec<Label> = (0..20)
        .map(|i| if i % 2 == 0 { Label::Hallucinated } else { Label::Grounded })
        .collect();
    let clean_rows = vec![vec![0.0f32; 4]; 20];
    let attacked_rows: Vec<Vec<f32>> = labels
        .iter()
        .map(|l| if l.is_hallucinated() { vec![2.0, 0.0, 0.0, 0.0] } else { vec![0.0; 4] })
        .collect();
    let clean = rows_set(&clean_rows, &labels);
    let attacked = rows_set(&attacked_rows, &labels);
    let probe = Probe::from_weights(vec![1.0, 0.0, 0.0, 0.0], 0.0);
    let idx: Vec<usize> = (0..20).collect();
    let cfg = DefenseConfig {
        alpha_def: 1.0,
        tau: 0.0,
        mode: CancelMode::Static,
        dynamic: false,
        max_passes: 1,
        ..DefenseConfig::default()
    };
    let out = run_defense(&attacked, &cfg, &nodes(vec![0], 4), &probe, &probe, &clean, &idx).unwrap();
    assert_eq!(out.trace.clean_amplitude, 0.0);
    assert!(out.trace.undefended_amplitude > 0.3);
    assert!((out.trace.final_robustness - 1.0).abs() < 1e-12);
    assert_eq!(out.defended, clean);
    assert_eq!(out.trace.stop_reason, StopReason::MaxPasses);
}

#[test]
fn zero_amplitude_attack_is_rejected() {
    let labels = [Label::Hallucinated, Label::Grounded];
    let set = rows_set(&[vec![0.0, 0.0], vec![0.0, 0.0]], &labels);
    let probe = Probe::from_weights(vec![1.0, 1.0], 0.0);
    let err = run_defense(&set, &DefenseConfig::default(), &nodes(vec![0], 2), &probe, &probe, &set, &[0, 1]);
    assert!(matches!(err, Err(hnode_anc::Error::ZeroAmplitude)));
}

/// Attacked activations plus both probes and node sets of the small
/// fixture.
fn attacked_fixture() -> (hnode_anc::ActivationSet, hnode_anc::ActivationSet, hnode_anc::pipeline::ProbeStage, HNodeSet) {
    let (set, _) = small_set(11);
    let cfg = small_config();
    let probes = probe_stage(&set, None, &cfg).unwrap();
    let (defender, attacker) = identify_stage(&set, &probes, &cfg).unwrap();
    let attack_cfg = AttackConfig::prepare(
        &set,
        &probes.split.attacker_idx,
        probes.attacker_probe(),
        attacker,
        AttackVariant::Pct80,
        cfg.alpha_atk,
        cfg.fourier_k,
    )
    .unwrap();
    let attack = run_attack(&set, &attack_cfg, probes.attacker_probe(), probes.defender_probe(), &probes.split.eval_idx)
        .unwrap();
    (set, attack.attacked, probes, defender)
}

#[test]
fn one_static_pass_matches_single_pass() {
    let (clean, attacked, probes, defender) = attacked_fixture();
    let eval = &probes.split.eval_idx;
    let cfg = DefenseConfig {
        node_count: defender.len(),
        ..DefenseConfig::default()
    };
    let looped = run_defense(
        &attacked,
        &cfg.single_pass(),
        &defender,
        probes.defender_probe(),
        probes.attacker_probe(),
        &clean,
        eval,
    )
    .unwrap();
    let dynamic_one = run_defense(
        &attacked,
        &DefenseConfig { max_passes: 1, ..cfg.clone() },
        &defender,
        probes.defender_probe(),
        probes.attacker_probe(),
        &clean,
        eval,
    )
    .unwrap();
    let (direct, deltas) = single_pass(
        &attacked,
        probes.layer,
        eval,
        &defender.node_ids,
        &defender.baseline,
        probes.defender_probe(),
        cfg.alpha_def,
        cfg.tau,
        cfg.mode,
        cfg.eps,
    )
    .unwrap();
    assert_eq!(looped.defended, direct);
    assert_eq!(looped.trace.passes.len(), 1);
    assert_eq!(looped.trace.passes[0].defender, deltas);
    assert_eq!(dynamic_one.defended, direct);
    assert_eq!(dynamic_one.trace, looped.trace);
}

#[test]
fn dynamic_never_loses_to_single_pass() {
    let (clean, attacked, probes, defender) = attacked_fixture();
    let eval = &probes.split.eval_idx;
    let cfg = DefenseConfig {
        node_count: defender.len(),
        ..DefenseConfig::default()
    };
    let run = |cfg: &DefenseConfig| {
        run_defense(&attacked, cfg, &defender, probes.defender_probe(), probes.attacker_probe(), &clean, eval).unwrap()
    };
    let single = run(&cfg.single_pass());
    for max_passes in [1, 2, 5, 15] {
        let dynamic = run(&DefenseConfig { max_passes, ..cfg.clone() });
        assert!(dynamic.trace.final_robustness >= single.trace.final_robustness);
        assert_eq!(dynamic.trace.passes[0], single.trace.passes[0]);
        let best = &dynamic.trace.passes[dynamic.trace.best_pass - 1];
        assert!(best.eligible);
        assert!(dynamic.trace.passes.len() <= max_passes);
    }
}

/// The attack only touches dims the defender probe ignores, so the
/// defender sees nothing.
#[test]
fn orthogonal_attack_is_invisible_to_the_defender() {
    let labels: Vec<Label> = (0..40)
        .map(|i| if i % 2 == 0 { Label::Hallucinated } else { Label::Grounded })
        .collect();
    let rows: Vec<Vec<f32>> = (0..40)
        .map(|i| {
            let x = i as f32 / 10.0;
            let hall = if i % 2 == 0 { 1.0 } else { 0.0 };
            vec![x.sin() + hall, x.cos(), 0.3 * x + hall, hall - 0.5 * x.cos()]
        })
        .collect();
    let set = rows_set(&rows, &labels);
    let idx: Vec<usize> = (0..40).collect();
    let defender = Probe::from_weights(vec![1.5, -0.5, 0.0, 0.0], 0.1);
    let attacker = Probe::from_weights(vec![0.0, 0.0, 1.0, 1.0], -0.2);
    let attacker_nodes = HNodeSet {
        node_ids: vec![2, 3],
        ..nodes(vec![], 4)
    };
    for variant in [AttackVariant::Mean, AttackVariant::Pct80, AttackVariant::Zero] {
        let cfg = AttackConfig::prepare(&set, &idx, &attacker, attacker_nodes.clone(), variant, 1.0, 0).unwrap();
        let out = run_attack(&set, &cfg, &attacker, &defender, &idx).unwrap();
        assert_ne!(out.attacked, set, "{variant:?} changed nothing");
        assert_eq!(out.metrics.defender_visibility, 0.0);
        assert_eq!(defender_visibility(&set, &out.attacked, 0, &defender, &idx).unwrap(), 0.0);
    }
}
