mod common;

use hnode_anc::hnode::overlap_count;
use hnode_anc::pipeline::{identify_stage, probe_stage, run_pipeline, RunConfig};
use hnode_anc::report::PipelineReport;
use hnode_anc::synth::{generate, mean_pool_view, SynthSpec};

use common::{small_config, small_set, small_spec};

#[test]
fn reports_are_byte_identical_across_runs() {
    let (set, _) = small_set(11);
    let cfg = small_config();
    let a = run_pipeline(&set, None, &cfg).unwrap();
    let b = run_pipeline(&set, None, &cfg).unwrap();
    assert_eq!(a.report.to_json().unwrap(), b.report.to_json().unwrap());
    assert_eq!(a.trace_csv(), b.trace_csv());
}

#[test]
fn full_report_is_consistent() {
    let spec = small_spec(11);
    let (set, _) = generate(&spec).unwrap();
    let mean = mean_pool_view(&spec, &set, 4).unwrap();
    let out = run_pipeline(&set, Some(&mean), &small_config()).unwrap();
    let report = &out.report;
    report.verify().unwrap();
    let back = PipelineReport::from_json(&report.to_json().unwrap()).unwrap();
    assert_eq!(&back, report, "floats must survive the JSON round trip");
    assert!(report.probe.mean_pool_best_auc.is_some());
    assert!(report.cancellation.is_some());
    let adv = report.adversarial.as_ref().unwrap();
    assert!(adv.dynamic_rho.unwrap() >= adv.single_pass_rho);
    assert_eq!(out.probes.layer, report.probe.best_layer);
    assert_eq!(out.defender_nodes.layer, out.attacker_nodes.layer);
    assert_eq!(report.split.defender + report.split.attacker + report.split.eval, 360);
}

#[test]
fn static_only_run_has_no_dynamic_section() {
    let (set, _) = small_set(3);
    let cfg = RunConfig {
        dynamic: false,
        ..small_config()
    };
    let out = run_pipeline(&set, None, &cfg).unwrap();
    let adv = out.report.adversarial.unwrap();
    assert!(adv.dynamic_rho.is_none());
    assert!(adv.stop_reason.is_none());
    let json = serde_json::to_value(&adv).unwrap();
    assert!(json["dynamic_rho"].is_null());
}

/// With a hundred planted dims and fifty nodes per side, independent
/// probes pick partly different dims.
#[test]
fn redundant_fixture_gives_partial_overlap() {
    let (set, _) = generate(&SynthSpec::redundant_fixture()).unwrap();
    for (defender_seed, attacker_seed) in [(42, 99), (1, 2), (3, 4), (5, 6), (7, 8)] {
        let cfg = RunConfig {
            defender_seed,
            attacker_seed,
            ..RunConfig::default()
        };
        let probes = probe_stage(&set, None, &cfg).unwrap();
        let (defender, attacker) = identify_stage(&set, &probes, &cfg).unwrap();
        let shared = overlap_count(&defender, &attacker).unwrap();
        assert!(shared < defender.len(), "seeds {defender_seed}/{attacker_seed}: full overlap");
    }
}
