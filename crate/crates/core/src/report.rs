//! Pipeline report: probe quality, cancellation ablation, adversarial game.
//!
//! Every ratio is stored next to the raw quantities it was computed from;
//! [`PipelineReport::verify`] recomputes each one. Stages that did not run
//! are `None` and serialize as `null`.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::attack::{attack_selectivity, AttackMetrics, AttackVariant};
use crate::defense::{defense_selectivity, drift_reduction, robustness, CancellationDeltas, StopReason};
use crate::error::{Error, Result};
use crate::hnode::PercentileSweep;
use crate::pipeline::RunConfig;

/// Tolerance of [`PipelineReport::verify`].
pub const CONSISTENCY_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSection {
    pub fingerprint: String,
    pub defender: usize,
    pub attacker: usize,
    pub eval: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeSection {
    pub best_layer: usize,
    pub best_auc: f64,
    pub layer_auc: Vec<f64>,
    pub top_layers: Vec<usize>,
    pub ensemble_auc: f64,
    pub mean_pool_best_auc: Option<f64>,
    /// Last-token best AUC minus mean-pool best AUC.
    pub pooling_gain: Option<f64>,
    pub attacker_best_layer: usize,
    /// Attacker probe AUC at the defender's best layer.
    pub attacker_auc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CancellationSection {
    pub layer: usize,
    pub percentile: f64,
    pub static_pass: CancellationDeltas,
    pub adaptive_pass: CancellationDeltas,
    /// Percent of static grounded drift removed by adaptive cancellation;
    /// absent when static cancellation caused no drift.
    pub drift_reduction_pct: Option<f64>,
    pub sweep: PercentileSweep,
    pub best_sweep_selectivity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdversarialSection {
    pub variant: AttackVariant,
    pub attack: AttackMetrics,
    pub node_count: usize,
    pub overlap_count: usize,
    pub overlap_pct: f64,
    pub transfer_pct: f64,
    pub undefended_amplitude: f64,
    pub single_pass_amplitude: f64,
    pub single_pass_rho: f64,
    pub dynamic_amplitude: Option<f64>,
    pub dynamic_rho: Option<f64>,
    pub dynamic_best_pass: Option<usize>,
    pub dynamic_passes: Option<usize>,
    pub stop_reason: Option<StopReason>,
    /// Amplitude after projecting eval rows off the defender probe
    /// direction.
    pub projection_amplitude: f64,
    pub projection_rho: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub config: RunConfig,
    pub split: SplitSection,
    pub probe: ProbeSection,
    pub cancellation: Option<CancellationSection>,
    pub adversarial: Option<AdversarialSection>,
}

/// One stage's output, tagged with the split it ran on.
#[derive(Debug, Clone)]
pub struct Stage<T> {
    pub fingerprint: String,
    pub value: T,
}

/// Assembles a report, refusing stages computed on different splits.
pub fn build_report(
    config: RunConfig,
    split: SplitSection,
    probe: Stage<ProbeSection>,
    cancellation: Option<Stage<CancellationSection>>,
    adversarial: Option<Stage<AdversarialSection>>,
) -> Result<PipelineReport> {
    let check = |stage: &str, fp: &str| {
        if fp != split.fingerprint {
            return Err(Error::InconsistentSplits(format!(
                "{stage} stage ran on split {fp}, report split is {}",
                split.fingerprint
            )));
        }
        Ok(())
    };
    check("probe", &probe.fingerprint)?;
    if let Some(stage) = &cancellation {
        check("cancellation", &stage.fingerprint)?;
    }
    if let Some(stage) = &adversarial {
        check("adversarial", &stage.fingerprint)?;
    }
    let report = PipelineReport {
        config,
        split,
        probe: probe.value,
        cancellation: cancellation.map(|s| s.value),
        adversarial: adversarial.map(|s| s.value),
    };
    report.verify()?;
    Ok(report)
}

fn close(name: &str, reported: f64, recomputed: f64) -> Result<()> {
    let same = reported == recomputed || (reported - recomputed).abs() <= CONSISTENCY_TOL;
    if !same {
        return Err(Error::InvalidArgument(format!(
            "{name}: reported {reported} but raw values give {recomputed}"
        )));
    }
    Ok(())
}

fn close_opt(name: &str, reported: Option<f64>, recomputed: Option<f64>) -> Result<()> {
    match (reported, recomputed) {
        (Some(a), Some(b)) => close(name, a, b),
        (None, None) => Ok(()),
        _ => Err(Error::InvalidArgument(format!("{name}: presence does not match raw values"))),
    }
}

fn check_deltas(name: &str, d: &CancellationDeltas, eps: f64) -> Result<()> {
    close(name, d.selectivity, defense_selectivity(d.hall_reduction, d.grounded_drift, eps))
}

impl PipelineReport {
    /// Recomputes every derived ratio from the raw values stored beside it.
    pub fn verify(&self) -> Result<()> {
        let eps = self.config.eps;
        let p = &self.probe;
        close("best_auc", p.best_auc, p.layer_auc[p.best_layer])?;
        close_opt(
            "pooling_gain",
            p.pooling_gain,
            p.mean_pool_best_auc.map(|m| p.best_auc - m),
        )?;

        if let Some(c) = &self.cancellation {
            check_deltas("static selectivity", &c.static_pass, eps)?;
            check_deltas("adaptive selectivity", &c.adaptive_pass, eps)?;
            close_opt(
                "drift_reduction_pct",
                c.drift_reduction_pct,
                drift_reduction(c.static_pass.grounded_drift, c.adaptive_pass.grounded_drift).ok(),
            )?;
            for e in &c.sweep.entries {
                check_deltas("sweep selectivity", &e.deltas, eps)?;
            }
            let best = c
                .sweep
                .selectivity(c.sweep.best_percentile)
                .ok_or_else(|| Error::InvalidArgument("best percentile missing from sweep".into()))?;
            close("best_sweep_selectivity", c.best_sweep_selectivity, best)?;
        }

        if let Some(a) = &self.adversarial {
            let m = &a.attack;
            close("attack selectivity", m.selectivity, attack_selectivity(m.delta_hall, m.delta_grnd, eps))?;
            close_opt(
                "visibility_ratio",
                m.visibility_ratio,
                (m.amplitude != 0.0).then(|| m.defender_visibility / m.amplitude),
            )?;
            close("undefended amplitude", a.undefended_amplitude, m.amplitude)?;
            let n = a.node_count as f64;
            close("overlap_pct", a.overlap_pct, 100.0 * a.overlap_count as f64 / n)?;
            close("transfer_pct", a.transfer_pct, 100.0 * (1.0 - a.overlap_count as f64 / n))?;
            let rho = |amp: f64| robustness(amp, a.undefended_amplitude);
            close("single_pass_rho", a.single_pass_rho, rho(a.single_pass_amplitude)?)?;
            close_opt(
                "dynamic_rho",
                a.dynamic_rho,
                a.dynamic_amplitude.map(rho).transpose()?,
            )?;
            close("projection_rho", a.projection_rho, rho(a.projection_amplitude)?)?;
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Header(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Header(e.to_string()))
    }

    /// Two-column metric/value tables, one per section.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let p = &self.probe;
        let opt = |v: Option<f64>, digits: usize| v.map_or("---".to_string(), |x| format!("{x:.digits$}"));

        table(
            &mut out,
            "Probe quality and layer trajectory",
            &[
                ("Best layer", p.best_layer.to_string()),
                ("AUC last-token", format!("{:.3}", p.best_auc)),
                ("AUC mean-pool", opt(p.mean_pool_best_auc, 3)),
                ("Last-token gain", p.pooling_gain.map_or("---".into(), |g| format!("{g:+.3}"))),
                ("Ensemble AUC", format!("{:.3}", p.ensemble_auc)),
                ("Attacker AUC (same layer)", format!("{:.3}", p.attacker_auc)),
            ],
        );
        let auc_row: Vec<String> = p.layer_auc.iter().map(|a| format!("{a:.3}")).collect();
        let _ = writeln!(out, "Per-layer AUC: {}\n", auc_row.join(" "));

        if let Some(c) = &self.cancellation {
            table(
                &mut out,
                "Cancellation and static vs. adaptive ablation",
                &[
                    (
                        &*format!("Hall. reduction (pct{})", c.percentile),
                        format!("{:.4}", c.adaptive_pass.hall_reduction),
                    ),
                    ("Grounded drift", format!("{:.4}", c.adaptive_pass.grounded_drift)),
                    (
                        &*format!("Selectivity (pct{})", c.percentile),
                        ratio(c.adaptive_pass.selectivity),
                    ),
                    (
                        "Best pct sweep sel.",
                        format!("{} (pct{})", ratio(c.best_sweep_selectivity), c.sweep.best_percentile),
                    ),
                    ("Static ANC sel.", ratio(c.static_pass.selectivity)),
                    ("Adaptive ANC sel.", ratio(c.adaptive_pass.selectivity)),
                    ("Drift reduction (%)", opt(c.drift_reduction_pct, 1)),
                ],
            );
        }

        if let Some(a) = &self.adversarial {
            table(
                &mut out,
                &format!("Adversarial pipeline ({} attack)", a.variant.name()),
                &[
                    ("Atk. amplitude", format!("{:.3}", a.attack.amplitude)),
                    ("Atk. selectivity", ratio(a.attack.selectivity)),
                    ("Def. visibility", format!("{:.3}", a.attack.defender_visibility)),
                    ("Overlap rate (%)", format!("{:.1}", a.overlap_pct)),
                    ("Transfer rate (%)", format!("{:.1}", a.transfer_pct)),
                    ("Single-pass rho", format!("{:.3}", a.single_pass_rho)),
                    ("Dynamic iterative rho", opt(a.dynamic_rho, 3)),
                    ("Projection rho", format!("{:.3}", a.projection_rho)),
                ],
            );
        }
        out
    }
}

/// Selectivity ratios explode when the denominator is at its floor.
fn ratio(x: f64) -> String {
    if x.abs() < 1e4 {
        format!("{x:.2}x")
    } else {
        format!("{x:.2e}x")
    }
}

fn table(out: &mut String, title: &str, rows: &[(&str, String)]) {
    let width = rows.iter().map(|(k, _)| k.chars().count()).max().unwrap_or(0);
    let value_width = rows.iter().map(|(_, v)| v.len()).max().unwrap_or(0);
    let rule = "-".repeat(width + value_width + 3);
    let _ = writeln!(out, "{title}\n{rule}");
    for (k, v) in rows {
        let pad = width - k.chars().count();
        let _ = writeln!(out, "{k}{}   {v:>value_width$}", " ".repeat(pad));
    }
    let _ = writeln!(out, "{rule}\n");
}
