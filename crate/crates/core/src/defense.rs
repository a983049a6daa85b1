//! Adaptive node cancellation and the iterative defense game.
//!
//! A defender cancels the excess of selected dimensions above a grounded
//! baseline, scaled by its probe's confidence:
//!
//! ```text
//! h'_j = h_j − α · γ · max(0, h_j − b_j)     for j in nodes, when c_def ≥ τ
//! ```
//!
//! with `γ = 1` for static cancellation and `γ = c_def` for adaptive
//! cancellation. The dynamic variant repeats the pass, each time re-ranking
//! every dimension by its summed rectified excess over the evaluation rows,
//! and tracks robustness with the *attacker's* probe.

use serde::{Deserialize, Serialize};

use crate::attack::attack_amplitude;
use crate::data::{ActivationSet, Label};
use crate::error::{Error, Result};
use crate::hnode::{HNodeSet, NodeSource};
use crate::probe::{rank_desc, Probe};

/// Whether cancellation strength follows the probe confidence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum CancelMode {
    Static,
    Adaptive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DefenseConfig {
    pub alpha_def: f64,
    pub tau: f64,
    pub mode: CancelMode,
    pub max_passes: usize,
    /// Minimum per-pass robustness improvement before the loop stops.
    pub stop_eps: f64,
    pub node_count: usize,
    pub dynamic: bool,
    /// Denominator floor in selectivity ratios.
    pub eps: f64,
}

impl Default for DefenseConfig {
    fn default() -> Self {
        Self {
            alpha_def: 0.9,
            tau: 0.45,
            mode: CancelMode::Adaptive,
            max_passes: 15,
            stop_eps: 1e-4,
            node_count: 50,
            dynamic: true,
            eps: 1e-9,
        }
    }
}

impl DefenseConfig {
    pub fn single_pass(&self) -> DefenseConfig {
        DefenseConfig {
            dynamic: false,
            max_passes: 1,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.tau) {
            return Err(Error::InvalidArgument(format!("tau {} outside [0, 1]", self.tau)));
        }
        if !(self.alpha_def >= 0.0 && self.alpha_def.is_finite()) {
            return Err(Error::InvalidArgument("alpha_def must be finite and >= 0".into()));
        }
        if self.max_passes == 0 {
            return Err(Error::InvalidArgument("max_passes must be at least 1".into()));
        }
        if self.node_count == 0 {
            return Err(Error::InvalidArgument("node_count must be at least 1".into()));
        }
        if !(self.eps > 0.0) {
            return Err(Error::InvalidArgument("eps must be positive".into()));
        }
        Ok(())
    }
}

/// Cancels excess above `baseline` on `nodes`. Returns `h` unchanged when
/// `c_def < tau`.
pub fn cancel(
    h: &[f32],
    baseline: &[f32],
    nodes: &[usize],
    alpha: f64,
    c_def: f64,
    tau: f64,
    mode: CancelMode,
) -> Vec<f32> {
    let mut out = h.to_vec();
    cancel_in_place(&mut out, baseline, nodes, alpha, c_def, tau, mode);
    out
}

/// In-place form of [`cancel`]; returns whether the gate opened.
pub fn cancel_in_place(
    h: &mut [f32],
    baseline: &[f32],
    nodes: &[usize],
    alpha: f64,
    c_def: f64,
    tau: f64,
    mode: CancelMode,
) -> bool {
    if c_def < tau {
        return false;
    }
    let gain = alpha
        * match mode {
            CancelMode::Static => 1.0,
            CancelMode::Adaptive => c_def,
        };
    for &j in nodes {
        let x = f64::from(h[j]);
        let excess = (x - f64::from(baseline[j])).max(0.0);
        if excess > 0.0 {
            h[j] = (x - gain * excess) as f32;
        }
    }
    true
}

/// `reduction / (drift + eps)`.
pub fn defense_selectivity(hall_reduction: f64, grounded_drift: f64, eps: f64) -> f64 {
    hall_reduction / (grounded_drift + eps)
}

/// Percent of static-cancellation drift removed by the adaptive variant.
pub fn drift_reduction(static_drift: f64, adaptive_drift: f64) -> Result<f64> {
    if !(static_drift > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "static drift must be positive, got {static_drift}"
        )));
    }
    Ok(100.0 * (static_drift - adaptive_drift) / static_drift)
}

/// Fraction of the attack amplitude neutralized: `1 − A_def / A_undef`.
pub fn robustness(a_defended: f64, a_undefended: f64) -> Result<f64> {
    if a_undefended == 0.0 || !a_undefended.is_finite() {
        return Err(Error::ZeroAmplitude);
    }
    Ok(1.0 - a_defended / a_undefended)
}

/// Top-`n` dimensions of a row-major `S × d` matrix by summed rectified
/// excess over `baseline`, largest first, ties to the lower index.
pub fn rerank_nodes(matrix: &[f32], baseline: &[f32], n: usize) -> Result<Vec<usize>> {
    let d = baseline.len();
    if d == 0 || !matrix.len().is_multiple_of(d) {
        return Err(Error::DimensionMismatch(format!(
            "matrix of {} values is not a whole number of rows of width {d}",
            matrix.len()
        )));
    }
    if n > d {
        return Err(Error::InvalidArgument(format!("cannot select {n} of {d} dimensions")));
    }
    let mut scores = vec![0.0f64; d];
    for row in matrix.chunks_exact(d) {
        for ((s, &x), &b) in scores.iter_mut().zip(row).zip(baseline) {
            *s += (f64::from(x) - f64::from(b)).max(0.0);
        }
    }
    let mut order = rank_desc(&scores);
    order.truncate(n);
    Ok(order)
}

/// Confidence shifts produced by one cancellation pass.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CancellationDeltas {
    /// Mean confidence decrease over hallucinated rows.
    pub hall_reduction: f64,
    /// Absolute mean confidence change over grounded rows.
    pub grounded_drift: f64,
    pub selectivity: f64,
    /// Rows whose gate opened.
    pub cancelled: usize,
}

fn class_means(values: &[f64], labels: &[Label]) -> (f64, f64) {
    let mut sums = [0.0f64; 2];
    let mut counts = [0usize; 2];
    for (v, l) in values.iter().zip(labels) {
        let k = usize::from(l.bit());
        sums[k] += v;
        counts[k] += 1;
    }
    let mean = |k: usize| if counts[k] == 0 { 0.0 } else { sums[k] / counts[k] as f64 };
    (mean(1), mean(0))
}

/// Label-stratified confidence shifts between two states of the same rows.
pub(crate) fn measure_deltas(
    before: &[f64],
    after: &[f64],
    labels: &[Label],
    eps: f64,
    cancelled: usize,
) -> CancellationDeltas {
    let diff: Vec<f64> = before.iter().zip(after).map(|(b, a)| b - a).collect();
    let (hall, grounded) = class_means(&diff, labels);
    let grounded_drift = grounded.abs();
    CancellationDeltas {
        hall_reduction: hall,
        grounded_drift,
        selectivity: defense_selectivity(hall, grounded_drift, eps),
        cancelled,
    }
}

/// One cancellation pass over `idx`, gated and scaled by `probe`, with
/// deltas measured by the same probe.
#[allow(clippy::too_many_arguments)]
pub fn single_pass(
    set: &ActivationSet,
    layer: usize,
    idx: &[usize],
    nodes: &[usize],
    baseline: &[f32],
    probe: &Probe,
    alpha: f64,
    tau: f64,
    mode: CancelMode,
    eps: f64,
) -> Result<(ActivationSet, CancellationDeltas)> {
    check_nodes(set, nodes, baseline)?;
    let before = probe.confidences(set, layer, idx)?;
    let mut cancelled = 0;
    let out = set.map_rows(layer, idx, |_, row| {
        let mut h = row.to_vec();
        let c = probe.confidence(row)?;
        if cancel_in_place(&mut h, baseline, nodes, alpha, c, tau, mode) {
            cancelled += 1;
        }
        Ok(h)
    })?;
    let after = probe.confidences(&out, layer, idx)?;
    let labels: Vec<Label> = idx.iter().map(|&i| set.label(i)).collect();
    Ok((out, measure_deltas(&before, &after, &labels, eps, cancelled)))
}

fn check_nodes(set: &ActivationSet, nodes: &[usize], baseline: &[f32]) -> Result<()> {
    if baseline.len() != set.hidden_dim() {
        return Err(Error::LengthMismatch {
            expected: set.hidden_dim(),
            found: baseline.len(),
        });
    }
    if let Some(&bad) = nodes.iter().find(|&&j| j >= set.hidden_dim()) {
        return Err(Error::InvalidArgument(format!("node {bad} out of range")));
    }
    Ok(())
}

/// Why the iterative defense stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    EpsConverged,
    SelectivityBelowOne,
    MaxPasses,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PassRecord {
    pub pass: usize,
    pub node_ids: Vec<usize>,
    pub robustness: f64,
    pub amplitude: f64,
    /// Attacker-probe deltas of this pass alone; drive the stopping rule.
    pub attacker: CancellationDeltas,
    /// Defender-probe deltas of this pass, kept for audit.
    pub defender: CancellationDeltas,
    /// Whether the pass could become the reported state.
    pub eligible: bool,
}

impl PassRecord {
    pub fn selectivity(&self) -> f64 {
        self.attacker.selectivity
    }

    pub fn node_set(&self, baseline: &[f32], percentile: f64, layer: usize) -> HNodeSet {
        HNodeSet {
            node_ids: self.node_ids.clone(),
            baseline: baseline.to_vec(),
            percentile,
            source: NodeSource::DynamicPass(self.pass),
            layer,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DefenseTrace {
    pub passes: Vec<PassRecord>,
    pub stop_reason: StopReason,
    pub undefended_amplitude: f64,
    /// Attacker-probe amplitude on the clean activations.
    pub clean_amplitude: f64,
    pub best_pass: usize,
    pub final_robustness: f64,
}

impl DefenseTrace {
    pub fn first_pass_robustness(&self) -> f64 {
        self.passes[0].robustness
    }

    /// Delimiter-separated per-pass trajectory.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "pass,robustness,amplitude,selectivity,hall_reduction,grounded_drift,cancelled,eligible\n",
        );
        for p in &self.passes {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                p.pass,
                p.robustness,
                p.amplitude,
                p.attacker.selectivity,
                p.attacker.hall_reduction,
                p.attacker.grounded_drift,
                p.attacker.cancelled,
                p.eligible
            ));
        }
        out
    }
}

/// Trace plus the activations of the reported (best) pass.
#[derive(Debug, Clone)]
pub struct DefenseOutcome {
    pub trace: DefenseTrace,
    pub defended: ActivationSet,
}

/// Runs the (possibly multi-pass) defense on the `eval_idx` rows of
/// `attacked` at the defender nodes' layer.
///
/// Pass 1 targets `defender_nodes`. With `cfg.dynamic` every later pass
/// targets the top dimensions of the residual excess. Each pass is gated
/// per sample on the defender probe's confidence in the current state.
/// Robustness and per-pass selectivity use the attacker probe. The loop
/// stops at `max_passes`, when a pass's selectivity drops below one, or
/// when robustness improves by less than `stop_eps` over the best pass so
/// far; the reported state is the best eligible pass, where pass 1 is
/// always eligible and later passes only if their selectivity is at least
/// one.
pub fn run_defense(
    attacked: &ActivationSet,
    cfg: &DefenseConfig,
    defender_nodes: &HNodeSet,
    defender_probe: &Probe,
    attacker_probe: &Probe,
    clean: &ActivationSet,
    eval_idx: &[usize],
) -> Result<DefenseOutcome> {
    cfg.validate()?;
    let layer = defender_nodes.layer;
    if attacked.num_samples() != clean.num_samples()
        || attacked.hidden_dim() != clean.hidden_dim()
        || attacked.num_layers() != clean.num_layers()
    {
        return Err(Error::DimensionMismatch(
            "attacked and clean sets differ in shape".into(),
        ));
    }
    let baseline = &defender_nodes.baseline;
    check_nodes(attacked, &defender_nodes.node_ids, baseline)?;
    let labels: Vec<Label> = eval_idx.iter().map(|&i| attacked.label(i)).collect();

    let undefended = attack_amplitude(attacked, layer, eval_idx, attacker_probe)?;
    let clean_amplitude = attack_amplitude(clean, layer, eval_idx, attacker_probe)?;
    // fails early on a zero-amplitude attack
    robustness(undefended, undefended)?;

    let mut current = attacked.clone();
    let mut nodes = defender_nodes.node_ids.clone();
    let mut passes: Vec<PassRecord> = Vec::new();
    let mut best: Option<(usize, f64, ActivationSet)> = None;
    let mut stop_reason = StopReason::MaxPasses;

    for pass in 1..=cfg.max_passes {
        let atk_before = attacker_probe.confidences(&current, layer, eval_idx)?;
        let def_before = defender_probe.confidences(&current, layer, eval_idx)?;
        let mut cancelled = 0;
        let next = current.map_rows(layer, eval_idx, |_, row| {
            let mut h = row.to_vec();
            let c = defender_probe.confidence(row)?;
            if cancel_in_place(&mut h, baseline, &nodes, cfg.alpha_def, c, cfg.tau, cfg.mode) {
                cancelled += 1;
            }
            Ok(h)
        })?;
        let atk_after = attacker_probe.confidences(&next, layer, eval_idx)?;
        let def_after = defender_probe.confidences(&next, layer, eval_idx)?;
        let attacker = measure_deltas(&atk_before, &atk_after, &labels, cfg.eps, cancelled);
        let defender = measure_deltas(&def_before, &def_after, &labels, cfg.eps, cancelled);

        let amplitude = attack_amplitude(&next, layer, eval_idx, attacker_probe)?;
        let rho = robustness(amplitude, undefended)?;
        let selective = attacker.selectivity >= 1.0;
        let eligible = pass == 1 || selective;
        let best_rho = best.as_ref().map_or(0.0, |b| b.1);
        let improvement = rho - best_rho;

        passes.push(PassRecord {
            pass,
            node_ids: nodes.clone(),
            robustness: rho,
            amplitude,
            attacker,
            defender,
            eligible,
        });
        if eligible && (best.is_none() || rho > best_rho) {
            best = Some((pass, rho, next.clone()));
        }

        if pass == cfg.max_passes {
            stop_reason = StopReason::MaxPasses;
            break;
        }
        if !selective {
            stop_reason = StopReason::SelectivityBelowOne;
            break;
        }
        if improvement < cfg.stop_eps {
            stop_reason = StopReason::EpsConverged;
            break;
        }

        current = next;
        if cfg.dynamic {
            let residual: Vec<f32> = eval_idx
                .iter()
                .flat_map(|&i| current.row(layer, i).iter().copied())
                .collect();
            nodes = rerank_nodes(&residual, baseline, cfg.node_count.min(baseline.len()))?;
        }
    }

    let (best_pass, final_robustness, defended) =
        best.expect("pass 1 is always eligible");
    Ok(DefenseOutcome {
        trace: DefenseTrace {
            passes,
            stop_reason,
            undefended_amplitude: undefended,
            clean_amplitude,
            best_pass,
            final_robustness,
        },
        defended,
    })
}

/// Removes the component of `h` along the unit vector `v`: `h − (v·h) v`.
pub fn project_orthogonal(h: &[f64], v: &[f64]) -> Result<Vec<f64>> {
    if h.len() != v.len() {
        return Err(Error::LengthMismatch {
            expected: v.len(),
            found: h.len(),
        });
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if (norm - 1.0).abs() > 1e-6 {
        return Err(Error::NonUnitVector { norm });
    }
    let dot: f64 = h.iter().zip(v).map(|(a, b)| a * b).sum();
    Ok(h.iter().zip(v).map(|(x, vj)| x - dot * vj).collect())
}

/// Unit-length hallucination direction from a probe's weights.
pub fn probe_direction(probe: &Probe) -> Result<Vec<f64>> {
    let norm = probe.weights.iter().map(|w| w * w).sum::<f64>().sqrt();
    if norm == 0.0 || !norm.is_finite() {
        return Err(Error::NonUnitVector { norm });
    }
    Ok(probe.weights.iter().map(|w| w / norm).collect())
}

/// Checks that the columns of a `d × k` basis (given as `k` vectors) are
/// orthonormal. Only the rank-1 projection is applied by this crate; wider
/// subspaces are validated for interface compatibility.
pub fn validate_subspace_basis(basis: &[Vec<f64>]) -> Result<()> {
    let Some(first) = basis.first() else {
        return Err(Error::InvalidArgument("empty subspace basis".into()));
    };
    for (a, va) in basis.iter().enumerate() {
        if va.len() != first.len() {
            return Err(Error::LengthMismatch {
                expected: first.len(),
                found: va.len(),
            });
        }
        for (b, vb) in basis.iter().enumerate().skip(a) {
            let dot: f64 = va.iter().zip(vb).map(|(x, y)| x * y).sum();
            let target = if a == b { 1.0 } else { 0.0 };
            if (dot - target).abs() > 1e-6 {
                return Err(Error::InvalidArgument(format!(
                    "basis columns {a} and {b} have inner product {dot}"
                )));
            }
        }
    }
    Ok(())
}

/// Projects the `idx` rows of one layer onto the orthogonal complement of `v`.
pub fn project_rows(set: &ActivationSet, layer: usize, idx: &[usize], v: &[f64]) -> Result<ActivationSet> {
    set.map_rows(layer, idx, |_, row| {
        let h: Vec<f64> = row.iter().map(|&x| f64::from(x)).collect();
        Ok(project_orthogonal(&h, v)?.into_iter().map(|x| x as f32).collect())
    })
}
