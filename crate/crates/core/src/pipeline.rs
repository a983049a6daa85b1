//! Three-phase pipeline: probes and node selection, cancellation ablation,
//! adversarial attack and defense.

use serde::{Deserialize, Serialize};

use crate::attack::{attack_amplitude, run_attack, AttackConfig, AttackOutcome, AttackVariant};
use crate::data::{split_three_way, ActivationSet, SplitAssignment};
use crate::defense::{
    drift_reduction, probe_direction, project_rows, robustness, run_defense, single_pass, CancelMode,
    DefenseConfig, DefenseOutcome,
};
use crate::error::{Error, Result};
use crate::hnode::{overlap_count, percentile_sweep, HNodeSet, NodeSource, SweepParams, PERCENTILE_CANDIDATES};
use crate::probe::{layer_sweep, LayerSweep, LayerSweepReport, Probe, ProbeOptions};
use crate::report::{
    build_report, AdversarialSection, CancellationSection, PipelineReport, ProbeSection, SplitSection, Stage,
};

/// Every hyperparameter of a run, echoed into the report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    /// Where the activations came from.
    pub source: String,
    pub nodes: usize,
    pub alpha_def: f64,
    pub alpha_atk: f64,
    pub tau: f64,
    pub percentile: f64,
    pub variant: AttackVariant,
    pub fourier_k: usize,
    pub defender_seed: u64,
    pub attacker_seed: u64,
    pub max_passes: usize,
    pub stop_eps: f64,
    pub dynamic: bool,
    pub mode: CancelMode,
    pub l2_lambda: f64,
    pub eps: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let defense = DefenseConfig::default();
        RunConfig {
            source: String::new(),
            nodes: defense.node_count,
            alpha_def: defense.alpha_def,
            alpha_atk: 1.0,
            tau: defense.tau,
            percentile: 80.0,
            variant: AttackVariant::Fourier,
            fourier_k: 8,
            defender_seed: 42,
            attacker_seed: 99,
            max_passes: defense.max_passes,
            stop_eps: defense.stop_eps,
            dynamic: defense.dynamic,
            mode: defense.mode,
            l2_lambda: ProbeOptions::default().l2_lambda,
            eps: defense.eps,
        }
    }
}

impl RunConfig {
    /// Flag-level checks that need no data.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidArgument(msg.into()));
        if self.nodes == 0 {
            return bad("--nodes must be at least 1");
        }
        if self.fourier_k > self.nodes {
            return bad("--fourier-k cannot exceed --nodes");
        }
        if !(0.0..=100.0).contains(&self.percentile) {
            return bad("--percentile must lie in [0, 100]");
        }
        if !(self.alpha_atk >= 0.0 && self.alpha_atk.is_finite()) {
            return bad("--alpha-atk must be finite and >= 0");
        }
        if !(self.l2_lambda >= 0.0 && self.l2_lambda.is_finite()) {
            return bad("--l2-lambda must be finite and >= 0");
        }
        if !(self.stop_eps >= 0.0) {
            return bad("--stop-eps must be >= 0");
        }
        self.defense().validate()
    }

    pub fn defense(&self) -> DefenseConfig {
        DefenseConfig {
            alpha_def: self.alpha_def,
            tau: self.tau,
            mode: self.mode,
            max_passes: self.max_passes,
            stop_eps: self.stop_eps,
            node_count: self.nodes,
            dynamic: self.dynamic,
            eps: self.eps,
        }
    }

    pub fn probe_options(&self) -> ProbeOptions {
        ProbeOptions {
            l2_lambda: self.l2_lambda,
            ..ProbeOptions::default()
        }
    }

    /// Defender-seeded permutation, tagged with the attacker seed.
    pub fn split(&self, set: &ActivationSet) -> Result<SplitAssignment> {
        Ok(split_three_way(set, self.defender_seed)?.with_attacker_seed(self.attacker_seed))
    }
}

/// Phase 1 output: both sides' layer sweeps at a shared layer.
#[derive(Debug, Clone)]
pub struct ProbeStage {
    pub split: SplitAssignment,
    /// The defender's best layer; every later stage works here.
    pub layer: usize,
    pub defender: LayerSweep,
    pub attacker: LayerSweep,
    pub mean_pool: Option<LayerSweepReport>,
}

impl ProbeStage {
    pub fn defender_probe(&self) -> &Probe {
        &self.defender.layer_probes[self.layer]
    }

    pub fn attacker_probe(&self) -> &Probe {
        &self.attacker.layer_probes[self.layer]
    }

    fn section(&self) -> ProbeSection {
        let report = &self.defender.report;
        let mean_best = self.mean_pool.as_ref().map(LayerSweepReport::best_auc);
        ProbeSection {
            best_layer: report.best_layer,
            best_auc: report.best_auc(),
            layer_auc: report.layer_auc.clone(),
            top_layers: report.top_layers.clone(),
            ensemble_auc: report.ensemble_auc,
            mean_pool_best_auc: mean_best,
            pooling_gain: mean_best.map(|m| report.best_auc() - m),
            attacker_best_layer: self.attacker.report.best_layer,
            attacker_auc: self.attacker_probe().eval_auc.unwrap_or(0.5),
        }
    }
}

/// Trains defender and attacker probes on their own splits and scores both
/// on the evaluation split. A mean-pooled companion set, when given, is
/// swept with the defender split for the pooling comparison.
pub fn probe_stage(set: &ActivationSet, mean_pool: Option<&ActivationSet>, cfg: &RunConfig) -> Result<ProbeStage> {
    let split = cfg.split(set)?;
    let options = cfg.probe_options();
    let defender = layer_sweep(set, &split.defender_idx, &split.eval_idx, split.defender_seed, &options)?;
    let attacker = layer_sweep(set, &split.attacker_idx, &split.eval_idx, split.attacker_seed, &options)?;
    let mean_pool = match mean_pool {
        Some(mp) => {
            if mp.labels() != set.labels() || mp.num_layers() != set.num_layers() {
                return Err(Error::DimensionMismatch(
                    "mean-pool set does not align with the last-token set".into(),
                ));
            }
            Some(layer_sweep(mp, &split.defender_idx, &split.eval_idx, split.defender_seed, &options)?.report)
        }
        None => None,
    };
    Ok(ProbeStage {
        layer: defender.report.best_layer,
        split,
        defender,
        attacker,
        mean_pool,
    })
}

/// Defender and attacker node sets with grounded baselines from each
/// side's own split.
pub fn identify_stage(set: &ActivationSet, probes: &ProbeStage, cfg: &RunConfig) -> Result<(HNodeSet, HNodeSet)> {
    let defender = HNodeSet::from_probe(
        set,
        probes.layer,
        probes.defender_probe(),
        &probes.split.defender_idx,
        cfg.nodes,
        cfg.percentile,
        NodeSource::Defender,
    )?;
    let attacker = HNodeSet::from_probe(
        set,
        probes.layer,
        probes.attacker_probe(),
        &probes.split.attacker_idx,
        cfg.nodes,
        cfg.percentile,
        NodeSource::Attacker,
    )?;
    Ok((defender, attacker))
}

/// Static and adaptive single passes on the clean evaluation rows, plus
/// the baseline percentile sweep.
pub fn cancellation_stage(
    set: &ActivationSet,
    probes: &ProbeStage,
    defender_nodes: &HNodeSet,
    cfg: &RunConfig,
) -> Result<CancellationSection> {
    let layer = probes.layer;
    let eval = &probes.split.eval_idx;
    let pass = |mode| {
        single_pass(
            set,
            layer,
            eval,
            &defender_nodes.node_ids,
            &defender_nodes.baseline,
            probes.defender_probe(),
            cfg.alpha_def,
            cfg.tau,
            mode,
            cfg.eps,
        )
        .map(|(_, deltas)| deltas)
    };
    let static_pass = pass(CancelMode::Static)?;
    let adaptive_pass = pass(CancelMode::Adaptive)?;
    let sweep = percentile_sweep(
        set,
        &probes.split.defender_idx,
        eval,
        &PERCENTILE_CANDIDATES,
        SweepParams {
            layer,
            nodes: &defender_nodes.node_ids,
            probe: probes.defender_probe(),
            alpha: cfg.alpha_def,
            tau: cfg.tau,
            eps: cfg.eps,
        },
    )?;
    let best_sweep_selectivity = sweep
        .selectivity(sweep.best_percentile)
        .expect("best percentile comes from the sweep");
    Ok(CancellationSection {
        layer,
        percentile: cfg.percentile,
        drift_reduction_pct: drift_reduction(static_pass.grounded_drift, adaptive_pass.grounded_drift).ok(),
        static_pass,
        adaptive_pass,
        sweep,
        best_sweep_selectivity,
    })
}

/// Phase 3 output.
#[derive(Debug, Clone)]
pub struct AdversarialStage {
    pub attack: AttackOutcome,
    pub single: DefenseOutcome,
    pub dynamic: Option<DefenseOutcome>,
    pub section: AdversarialSection,
}

/// Attacks the evaluation rows, then defends them single-pass, dynamically
/// (when enabled) and by orthogonal projection.
pub fn adversarial_stage(
    set: &ActivationSet,
    probes: &ProbeStage,
    defender_nodes: &HNodeSet,
    attacker_nodes: &HNodeSet,
    cfg: &RunConfig,
) -> Result<AdversarialStage> {
    let layer = probes.layer;
    let eval = &probes.split.eval_idx;
    let attacker_probe = probes.attacker_probe();
    let defender_probe = probes.defender_probe();

    let mut attack_cfg = AttackConfig::prepare(
        set,
        &probes.split.attacker_idx,
        attacker_probe,
        attacker_nodes.clone(),
        cfg.variant,
        cfg.alpha_atk,
        cfg.fourier_k,
    )?;
    attack_cfg.eps = cfg.eps;
    let attack = run_attack(set, &attack_cfg, attacker_probe, defender_probe, eval)?;
    let attacked = &attack.attacked;

    let defense = cfg.defense();
    let single = run_defense(
        attacked,
        &defense.single_pass(),
        defender_nodes,
        defender_probe,
        attacker_probe,
        set,
        eval,
    )?;
    let dynamic = if cfg.dynamic {
        Some(run_defense(attacked, &defense, defender_nodes, defender_probe, attacker_probe, set, eval)?)
    } else {
        None
    };

    let undefended = attack.metrics.amplitude;
    let projected = project_rows(attacked, layer, eval, &probe_direction(defender_probe)?)?;
    let projection_amplitude = attack_amplitude(&projected, layer, eval, attacker_probe)?;

    let shared = overlap_count(defender_nodes, attacker_nodes)?;
    let n = defender_nodes.len() as f64;
    let best_amplitude = |outcome: &DefenseOutcome| outcome.trace.passes[outcome.trace.best_pass - 1].amplitude;
    let dynamic_amplitude = dynamic.as_ref().map(best_amplitude);
    let section = AdversarialSection {
        variant: cfg.variant,
        attack: attack.metrics.clone(),
        node_count: defender_nodes.len(),
        overlap_count: shared,
        overlap_pct: 100.0 * shared as f64 / n,
        transfer_pct: 100.0 * (1.0 - shared as f64 / n),
        undefended_amplitude: undefended,
        single_pass_amplitude: best_amplitude(&single),
        single_pass_rho: robustness(best_amplitude(&single), undefended)?,
        dynamic_amplitude,
        dynamic_rho: dynamic_amplitude.map(|a| robustness(a, undefended)).transpose()?,
        dynamic_best_pass: dynamic.as_ref().map(|d| d.trace.best_pass),
        dynamic_passes: dynamic.as_ref().map(|d| d.trace.passes.len()),
        stop_reason: dynamic.as_ref().map(|d| d.trace.stop_reason),
        projection_amplitude,
        projection_rho: robustness(projection_amplitude, undefended)?,
    };
    Ok(AdversarialStage {
        attack,
        single,
        dynamic,
        section,
    })
}

/// Everything a pipeline run produced.
#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub report: PipelineReport,
    pub probes: ProbeStage,
    pub defender_nodes: HNodeSet,
    pub attacker_nodes: HNodeSet,
    pub adversarial: AdversarialStage,
}

impl PipelineOutput {
    /// Per-pass trajectory of the reported defense run.
    pub fn trace_csv(&self) -> String {
        self.adversarial
            .dynamic
            .as_ref()
            .unwrap_or(&self.adversarial.single)
            .trace
            .to_csv()
    }
}

/// Runs every phase in order. Defense always follows the attack.
pub fn run_pipeline(set: &ActivationSet, mean_pool: Option<&ActivationSet>, cfg: &RunConfig) -> Result<PipelineOutput> {
    cfg.validate()?;
    let probes = probe_stage(set, mean_pool, cfg)?;
    let (defender_nodes, attacker_nodes) = identify_stage(set, &probes, cfg)?;
    let cancellation = cancellation_stage(set, &probes, &defender_nodes, cfg)?;
    let adversarial = adversarial_stage(set, &probes, &defender_nodes, &attacker_nodes, cfg)?;

    let fingerprint = probes.split.fingerprint();
    let stage = |value| Stage {
        fingerprint: fingerprint.clone(),
        value,
    };
    let probe_section = Stage {
        fingerprint: fingerprint.clone(),
        value: probes.section(),
    };
    let cancellation = Stage {
        fingerprint: fingerprint.clone(),
        value: cancellation,
    };
    let report = build_report(
        cfg.clone(),
        SplitSection {
            fingerprint: fingerprint.clone(),
            defender: probes.split.defender_idx.len(),
            attacker: probes.split.attacker_idx.len(),
            eval: probes.split.eval_idx.len(),
        },
        probe_section,
        Some(cancellation),
        Some(stage(adversarial.section.clone())),
    )?;
    Ok(PipelineOutput {
        report,
        probes,
        defender_nodes,
        attacker_nodes,
        adversarial,
    })
}
