#![allow(dead_code)]

use hnode_anc::pipeline::RunConfig;
use hnode_anc::synth::{generate, LayerProfile, Manifest, SynthSpec};
use hnode_anc::{ActivationSet, Label, Pooling};

/// Small adversarial fixture: three layers, signal peaking at layer 1.
pub fn small_spec(seed: u64) -> SynthSpec {
    SynthSpec::new(48, 3, 360, 30, 0.8, seed).with_profile(LayerProfile::tent(1, 1, 1))
}

pub fn small_set(seed: u64) -> (ActivationSet, Manifest) {
    generate(&small_spec(seed)).unwrap()
}

pub fn small_config() -> RunConfig {
    RunConfig {
        nodes: 20,
        alpha_atk: 0.1,
        ..RunConfig::default()
    }
}

/// Builds a one-layer set from explicit rows.
pub fn rows_set(rows: &[Vec<f32>], labels: &[Label]) -> ActivationSet {
    let d = rows[0].len();
    ActivationSet::new(
        "fixture",
        Pooling::LastToken,
        d,
        labels.to_vec(),
        (0..rows.len()).map(|i| format!("s{i}")).collect(),
        vec![rows.concat()],
    )
    .unwrap()
}
