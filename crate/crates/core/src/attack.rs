//! Activation-injection attacks.
//!
//! Every variant pulls the attacker's nodes toward a hallucinated-class
//! target, gated by the attacker probe's confidence on the clean row:
//!
//! ```text
//! h'_j = h_j + α · c_atk · max(0, b_j − h_j)     for j in attacker nodes
//! ```
//!
//! `c_atk` is computed once per sample, before injection.

use std::sync::Arc;

use rayon::prelude::*;
use realfft::num_complex::Complex;
use realfft::{ComplexToReal, RealFftPlanner, RealToComplex};
use serde::{Deserialize, Serialize};

use crate::data::{ActivationSet, Label};
use crate::error::{Error, Result};
use crate::hnode::{class_mean, compute_baseline, identify_anti_nodes, HNodeSet};
use crate::probe::{rank_desc, Probe};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum AttackVariant {
    /// Toward the hallucinated-class mean.
    Mean,
    /// Toward the hallucinated-class 80th percentile.
    Pct80,
    /// Pct80 amplification plus suppression of anti-hallucination nodes.
    Dual,
    /// Excess with its dominant frequency bins removed.
    Fourier,
    /// Overwrite attacker nodes with the target.
    Zero,
    /// Fourier, applied one sample at a time through a stateful hook.
    RealtimeFourier,
}

impl AttackVariant {
    pub const ALL: [AttackVariant; 6] = [
        AttackVariant::Mean,
        AttackVariant::Pct80,
        AttackVariant::Dual,
        AttackVariant::Fourier,
        AttackVariant::Zero,
        AttackVariant::RealtimeFourier,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AttackVariant::Mean => "mean",
            AttackVariant::Pct80 => "pct80",
            AttackVariant::Dual => "dual",
            AttackVariant::Fourier => "fourier",
            AttackVariant::Zero => "zero",
            AttackVariant::RealtimeFourier => "realtime_fourier",
        }
    }
}

/// Percentile of hallucinated activations used as the injection target by
/// every variant except `mean`.
pub const TARGET_PERCENTILE: f64 = 80.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackConfig {
    pub variant: AttackVariant,
    pub alpha_atk: f64,
    pub fourier_k: usize,
    pub layer: usize,
    pub attacker_nodes: HNodeSet,
    /// Full-width injection target `b_atk`.
    pub target: Vec<f32>,
    /// Dual only: nodes to suppress and their full-width floor.
    pub anti_nodes: Option<Vec<usize>>,
    pub anti_target: Option<Vec<f32>>,
    pub eps: f64,
}

impl AttackConfig {
    /// Derives the variant's targets from the hallucinated rows of
    /// `attacker_idx` at the attacker nodes' layer.
    pub fn prepare(
        set: &ActivationSet,
        attacker_idx: &[usize],
        attacker_probe: &Probe,
        attacker_nodes: HNodeSet,
        variant: AttackVariant,
        alpha_atk: f64,
        fourier_k: usize,
    ) -> Result<AttackConfig> {
        let layer = attacker_nodes.layer;
        let target = match variant {
            AttackVariant::Mean => class_mean(set, layer, attacker_idx, Label::Hallucinated)?,
            _ => compute_baseline(set, layer, attacker_idx, TARGET_PERCENTILE, Label::Hallucinated)?,
        };
        let (anti_nodes, anti_target) = if variant == AttackVariant::Dual {
            let anti = identify_anti_nodes(&attacker_probe.weights, attacker_nodes.len())?;
            let floor = compute_baseline(
                set,
                layer,
                attacker_idx,
                100.0 - TARGET_PERCENTILE,
                Label::Hallucinated,
            )?;
            (Some(anti), Some(floor))
        } else {
            (None, None)
        };
        let cfg = AttackConfig {
            variant,
            alpha_atk,
            fourier_k,
            layer,
            attacker_nodes,
            target,
            anti_nodes,
            anti_target,
            eps: 1e-9,
        };
        cfg.validate(set.hidden_dim())?;
        Ok(cfg)
    }

    pub fn validate(&self, hidden_dim: usize) -> Result<()> {
        if !(self.alpha_atk >= 0.0 && self.alpha_atk.is_finite()) {
            return Err(Error::InvalidArgument("alpha_atk must be finite and >= 0".into()));
        }
        if self.fourier_k > self.attacker_nodes.len() {
            return Err(Error::InvalidArgument(format!(
                "fourier_k {} exceeds {} attacker nodes",
                self.fourier_k,
                self.attacker_nodes.len()
            )));
        }
        if self.target.len() != hidden_dim {
            return Err(Error::LengthMismatch {
                expected: hidden_dim,
                found: self.target.len(),
            });
        }
        if self.attacker_nodes.node_ids.iter().any(|&j| j >= hidden_dim) {
            return Err(Error::InvalidArgument("attacker node out of range".into()));
        }
        if self.variant == AttackVariant::Dual {
            match (&self.anti_nodes, &self.anti_target) {
                (Some(nodes), Some(floor)) if floor.len() == hidden_dim => {
                    if nodes.iter().any(|&j| j >= hidden_dim) {
                        return Err(Error::InvalidArgument("anti node out of range".into()));
                    }
                }
                _ => {
                    return Err(Error::InvalidArgument(
                        "dual attack needs anti nodes and a full-width anti target".into(),
                    ))
                }
            }
        }
        if !(self.eps > 0.0) {
            return Err(Error::InvalidArgument("eps must be positive".into()));
        }
        Ok(())
    }

    /// Attacker node ids in ascending order, the ordering the Fourier
    /// variants transform over.
    fn sorted_nodes(&self) -> Vec<usize> {
        let mut ids = self.attacker_nodes.node_ids.clone();
        ids.sort_unstable();
        ids
    }
}

/// Pulls `nodes` of `h` toward `target` by `alpha · c_atk` of the gap.
pub fn inject_toward(h: &[f32], target: &[f32], nodes: &[usize], alpha: f64, c_atk: f64) -> Vec<f32> {
    let mut out = h.to_vec();
    inject_in_place(&mut out, target, nodes, alpha * c_atk);
    out
}

fn inject_in_place(h: &mut [f32], target: &[f32], nodes: &[usize], gain: f64) {
    for &j in nodes {
        let x = f64::from(h[j]);
        let gap = (f64::from(target[j]) - x).max(0.0);
        if gap > 0.0 {
            h[j] = (x + gain * gap) as f32;
        }
    }
}

/// Mirror of [`inject_toward`]: pushes `nodes` down toward `floor`.
pub fn suppress_toward(h: &[f32], floor: &[f32], nodes: &[usize], alpha: f64, c_atk: f64) -> Vec<f32> {
    let mut out = h.to_vec();
    suppress_in_place(&mut out, floor, nodes, alpha * c_atk);
    out
}

fn suppress_in_place(h: &mut [f32], floor: &[f32], nodes: &[usize], gain: f64) {
    for &j in nodes {
        let x = f64::from(h[j]);
        let excess = (x - f64::from(floor[j])).max(0.0);
        if excess > 0.0 {
            h[j] = (x - gain * excess) as f32;
        }
    }
}

/// Real-input FFT filter that removes the `k` strongest non-DC bins.
///
/// Bins are ranked by magnitude, ties resolved toward the lower frequency.
#[derive(Clone)]
pub struct FourierFilter {
    len: usize,
    forward: Arc<dyn RealToComplex<f64>>,
    inverse: Arc<dyn ComplexToReal<f64>>,
}

impl std::fmt::Debug for FourierFilter {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FourierFilter").field("len", &self.len).finish()
    }
}

impl FourierFilter {
    pub fn new(len: usize) -> Self {
        let mut planner = RealFftPlanner::<f64>::new();
        FourierFilter {
            len,
            forward: planner.plan_fft_forward(len),
            inverse: planner.plan_fft_inverse(len),
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn spectrum(&self, signal: &[f64]) -> Vec<Complex<f64>> {
        let mut input = signal.to_vec();
        let mut spectrum = self.forward.make_output_vec();
        if self.len > 0 {
            self.forward
                .process(&mut input, &mut spectrum)
                .expect("buffer lengths come from the plan");
        }
        spectrum
    }

    pub fn inverse(&self, spectrum: &[Complex<f64>]) -> Vec<f64> {
        let mut spectrum = spectrum.to_vec();
        let mut output = self.inverse.make_output_vec();
        if self.len == 0 {
            return output;
        }
        // A real signal's DC (and, for even lengths, Nyquist) bins are real.
        spectrum[0].im = 0.0;
        if self.len.is_multiple_of(2) {
            let last = spectrum.len() - 1;
            spectrum[last].im = 0.0;
        }
        self.inverse
            .process(&mut spectrum, &mut output)
            .expect("buffer lengths come from the plan");
        let scale = 1.0 / self.len as f64;
        output.iter_mut().for_each(|x| *x *= scale);
        output
    }

    /// Forward transform, zero the `k` largest-magnitude bins other than DC,
    /// inverse transform.
    pub fn remove_top_bins(&self, signal: &[f64], k: usize) -> Vec<f64> {
        assert_eq!(signal.len(), self.len);
        if k == 0 {
            return signal.to_vec();
        }
        let mut spectrum = self.spectrum(signal);
        for bin in dominant_bins(&spectrum, k) {
            spectrum[bin] = Complex::new(0.0, 0.0);
        }
        self.inverse(&spectrum)
    }
}

/// Indices of the `k` largest-magnitude bins excluding DC, lower frequency
/// first among equal magnitudes.
pub fn dominant_bins(spectrum: &[Complex<f64>], k: usize) -> Vec<usize> {
    let magnitudes: Vec<f64> = spectrum.iter().skip(1).map(|c| c.norm()).collect();
    rank_desc(&magnitudes).into_iter().take(k).map(|b| b + 1).collect()
}

/// Fourier injection of one row: excess over `nodes` (ascending order),
/// top bins removed, re-injected with gain `alpha · c_atk`.
fn fourier_inject(
    h: &mut [f32],
    target: &[f32],
    nodes: &[usize],
    gain: f64,
    k: usize,
    filter: &FourierFilter,
) {
    let excess: Vec<f64> = nodes
        .iter()
        .map(|&j| (f64::from(target[j]) - f64::from(h[j])).max(0.0))
        .collect();
    if excess.iter().all(|&e| e == 0.0) {
        return;
    }
    let shaped = filter.remove_top_bins(&excess, k);
    for (&j, e) in nodes.iter().zip(shaped) {
        let delta = gain * e;
        if delta != 0.0 {
            h[j] = (f64::from(h[j]) + delta) as f32;
        }
    }
}

/// Applies one variant to a single row given the attacker's confidence.
pub fn apply_variant(cfg: &AttackConfig, h: &[f32], c_atk: f64, filter: Option<&FourierFilter>) -> Vec<f32> {
    let mut out = h.to_vec();
    let gain = cfg.alpha_atk * c_atk;
    let nodes = &cfg.attacker_nodes.node_ids;
    match cfg.variant {
        AttackVariant::Mean | AttackVariant::Pct80 => inject_in_place(&mut out, &cfg.target, nodes, gain),
        AttackVariant::Dual => {
            inject_in_place(&mut out, &cfg.target, nodes, gain);
            if let (Some(anti), Some(floor)) = (&cfg.anti_nodes, &cfg.anti_target) {
                suppress_in_place(&mut out, floor, anti, gain);
            }
        }
        AttackVariant::Zero => {
            for &j in nodes {
                out[j] = cfg.target[j];
            }
        }
        AttackVariant::Fourier | AttackVariant::RealtimeFourier => {
            let sorted = cfg.sorted_nodes();
            let owned;
            let filter = match filter {
                Some(f) => f,
                None => {
                    owned = FourierFilter::new(sorted.len());
                    &owned
                }
            };
            fourier_inject(&mut out, &cfg.target, &sorted, gain, cfg.fourier_k, filter);
        }
    }
    out
}

/// Stateful per-sample Fourier injection, modeling a forward hook that
/// fires once per sequence as samples stream past.
#[derive(Debug)]
pub struct RealtimeFourierHook<'a> {
    cfg: &'a AttackConfig,
    probe: &'a Probe,
    nodes: Vec<usize>,
    filter: FourierFilter,
    fired: Vec<usize>,
}

impl<'a> RealtimeFourierHook<'a> {
    pub fn new(cfg: &'a AttackConfig, probe: &'a Probe) -> Self {
        let nodes = cfg.sorted_nodes();
        let filter = FourierFilter::new(nodes.len());
        RealtimeFourierHook {
            cfg,
            probe,
            nodes,
            filter,
            fired: Vec::new(),
        }
    }

    /// Scores the incoming row with the attacker probe and injects.
    pub fn fire(&mut self, sample: usize, h: &[f32]) -> Result<Vec<f32>> {
        let c = self.probe.confidence(h)?;
        let mut out = h.to_vec();
        fourier_inject(
            &mut out,
            &self.cfg.target,
            &self.nodes,
            self.cfg.alpha_atk * c,
            self.cfg.fourier_k,
            &self.filter,
        );
        self.fired.push(sample);
        Ok(out)
    }

    /// Samples in the order the hook saw them.
    pub fn fired(&self) -> &[usize] {
        &self.fired
    }
}

/// Per-sample confidence shifts, attacked minus clean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleShift {
    pub sample: usize,
    pub label: Label,
    pub attacker_delta: f64,
    pub defender_delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackMetrics {
    /// Attacker-probe `c̄_hall − c̄_grnd` on the attacked rows.
    pub amplitude: f64,
    /// Same quantity before the attack.
    pub clean_amplitude: f64,
    pub delta_hall: f64,
    pub delta_grnd: f64,
    pub selectivity: f64,
    pub defender_visibility: f64,
    /// Visibility divided by amplitude; absent for a zero amplitude.
    pub visibility_ratio: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct AttackOutcome {
    pub attacked: ActivationSet,
    pub metrics: AttackMetrics,
    pub shifts: Vec<SampleShift>,
    /// Streaming order, for the realtime variant.
    pub hook_order: Option<Vec<usize>>,
}

/// `Δhall / (Δgrnd + eps)`.
pub fn attack_selectivity(delta_hall: f64, delta_grnd: f64, eps: f64) -> f64 {
    delta_hall / (delta_grnd + eps)
}

fn mean_by_label(values: &[f64], labels: &[Label], want: Label) -> f64 {
    let (sum, n) = values
        .iter()
        .zip(labels)
        .filter(|(_, &l)| l == want)
        .fold((0.0, 0usize), |(s, n), (v, _)| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// `c̄_hall − c̄_grnd` of `probe` over the `idx` rows of one layer.
pub fn attack_amplitude(set: &ActivationSet, layer: usize, idx: &[usize], probe: &Probe) -> Result<f64> {
    set.require_both_classes(idx)?;
    let conf = probe.confidences(set, layer, idx)?;
    let labels: Vec<Label> = idx.iter().map(|&i| set.label(i)).collect();
    Ok(mean_by_label(&conf, &labels, Label::Hallucinated) - mean_by_label(&conf, &labels, Label::Grounded))
}

/// Mean defender-probe confidence increase on hallucinated `eval_idx` rows.
pub fn defender_visibility(
    clean: &ActivationSet,
    attacked: &ActivationSet,
    layer: usize,
    defender_probe: &Probe,
    eval_idx: &[usize],
) -> Result<f64> {
    if clean.num_samples() != attacked.num_samples() || clean.hidden_dim() != attacked.hidden_dim() {
        return Err(Error::DimensionMismatch("clean and attacked sets differ in shape".into()));
    }
    let hall = clean.indices_with_label(eval_idx, Label::Hallucinated);
    if hall.is_empty() {
        return Err(Error::EmptyClass { class: "hallucinated" });
    }
    let before = defender_probe.confidences(clean, layer, &hall)?;
    let after = defender_probe.confidences(attacked, layer, &hall)?;
    Ok(after.iter().zip(&before).map(|(a, b)| a - b).sum::<f64>() / hall.len() as f64)
}

/// Applies `cfg` to every `eval_idx` row (regardless of label) and measures
/// the shift under both probes.
pub fn run_attack(
    set: &ActivationSet,
    cfg: &AttackConfig,
    attacker_probe: &Probe,
    defender_probe: &Probe,
    eval_idx: &[usize],
) -> Result<AttackOutcome> {
    set.check_layer(cfg.layer)?;
    set.check_indices(eval_idx)?;
    cfg.validate(set.hidden_dim())?;
    for probe in [attacker_probe, defender_probe] {
        if probe.dim() != set.hidden_dim() {
            return Err(Error::LengthMismatch {
                expected: set.hidden_dim(),
                found: probe.dim(),
            });
        }
    }
    let layer = cfg.layer;

    let (attacked, hook_order) = if cfg.variant == AttackVariant::RealtimeFourier {
        let mut hook = RealtimeFourierHook::new(cfg, attacker_probe);
        let attacked = set.map_rows(layer, eval_idx, |i, row| hook.fire(i, row))?;
        (attacked, Some(hook.fired().to_vec()))
    } else {
        let filter = FourierFilter::new(cfg.attacker_nodes.len());
        let rows = eval_idx
            .par_iter()
            .map(|&i| {
                let row = set.row(layer, i);
                let c = attacker_probe.confidence(row)?;
                Ok(apply_variant(cfg, row, c, Some(&filter)))
            })
            .collect::<Result<Vec<Vec<f32>>>>()?;
        let mut rows = rows.into_iter();
        let attacked = set.map_rows(layer, eval_idx, |_, _| Ok(rows.next().expect("one row per index")))?;
        (attacked, None)
    };

    let labels: Vec<Label> = eval_idx.iter().map(|&i| set.label(i)).collect();
    let atk_clean = attacker_probe.confidences(set, layer, eval_idx)?;
    let atk_after = attacker_probe.confidences(&attacked, layer, eval_idx)?;
    let def_clean = defender_probe.confidences(set, layer, eval_idx)?;
    let def_after = defender_probe.confidences(&attacked, layer, eval_idx)?;

    let atk_delta: Vec<f64> = atk_after.iter().zip(&atk_clean).map(|(a, b)| a - b).collect();
    let delta_hall = mean_by_label(&atk_delta, &labels, Label::Hallucinated);
    let delta_grnd = mean_by_label(&atk_delta, &labels, Label::Grounded);
    let amplitude = attack_amplitude(&attacked, layer, eval_idx, attacker_probe)?;
    let clean_amplitude = attack_amplitude(set, layer, eval_idx, attacker_probe)?;
    let visibility = defender_visibility(set, &attacked, layer, defender_probe, eval_idx)?;

    let shifts = eval_idx
        .iter()
        .enumerate()
        .map(|(k, &sample)| SampleShift {
            sample,
            label: labels[k],
            attacker_delta: atk_delta[k],
            defender_delta: def_after[k] - def_clean[k],
        })
        .collect();

    Ok(AttackOutcome {
        attacked,
        metrics: AttackMetrics {
            amplitude,
            clean_amplitude,
            delta_hall,
            delta_grnd,
            selectivity: attack_selectivity(delta_hall, delta_grnd, cfg.eps),
            defender_visibility: visibility,
            visibility_ratio: (amplitude != 0.0).then(|| visibility / amplitude),
        },
        shifts,
        hook_order,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hnode::NodeSource;
    use proptest::prelude::*;

    fn config(variant: AttackVariant, target: Vec<f32>, nodes: Vec<usize>, alpha: f64, k: usize) -> AttackConfig {
        let d = target.len();
        let anti: Vec<usize> = (0..d).filter(|j| !nodes.contains(j)).collect();
        AttackConfig {
            variant,
            alpha_atk: alpha,
            fourier_k: k,
            layer: 0,
            attacker_nodes: HNodeSet {
                node_ids: nodes,
                baseline: vec![0.0; d],
                percentile: 80.0,
                source: NodeSource::Attacker,
                layer: 0,
            },
            anti_target: Some(vec![-0.5; d]),
            anti_nodes: Some(anti),
            target,
            eps: 1e-9,
        }
    }

    #[test]
    fn inject_examples() {
        assert_eq!(inject_toward(&[0.2], &[1.0], &[0], 1.0, 1.0), vec![1.0]);
        assert_eq!(inject_toward(&[1.2], &[1.0], &[0], 1.0, 1.0), vec![1.2]);
        let h = [0.1, -3.0, 0.7];
        assert_eq!(inject_toward(&h, &[5.0; 3], &[0, 1, 2], 1.0, 0.0), h.to_vec());
    }

    #[test]
    fn zero_variant_clamps_both_ways() {
        let cfg = config(AttackVariant::Zero, vec![1.0, 1.0, 9.0], vec![0, 1], 0.3, 0);
        let out = apply_variant(&cfg, &[0.8, 1.2, 4.0], 0.2, None);
        assert_eq!(out, vec![1.0, 1.0, 4.0]);
    }

    #[test]
    fn fourier_with_zero_excess_is_identity() {
        let cfg = config(AttackVariant::Fourier, vec![0.0; 8], (0..8).collect(), 1.0, 3);
        let h = [0.5f32; 8];
        assert_eq!(apply_variant(&cfg, &h, 0.9, None), h.to_vec());
    }

    #[test]
    fn fourier_k0_matches_plain_injection() {
        let target: Vec<f32> = (0..10).map(|j| j as f32 * 0.3).collect();
        let nodes = vec![7, 2, 5, 0, 9];
        let cfg = config(AttackVariant::Fourier, target.clone(), nodes.clone(), 0.8, 0);
        let h: Vec<f32> = (0..10).map(|j| (j as f32 * 0.77).sin()).collect();
        let got = apply_variant(&cfg, &h, 0.6, None);
        let want = inject_toward(&h, &target, &nodes, 0.8, 0.6);
        for (a, b) in got.iter().zip(&want) {
            assert!((a - b).abs() <= 1e-6 * b.abs().max(1.0));
        }
    }

    #[test]
    fn fourier_removes_dominant_tone() {
        // constant + one strong cosine at bin 3 + a weak one at bin 1
        let n = 16;
        let signal: Vec<f64> = (0..n)
            .map(|t| {
                let x = t as f64 * std::f64::consts::TAU / n as f64;
                2.0 + 1.5 * (3.0 * x).cos() + 0.1 * x.cos()
            })
            .collect();
        let filter = FourierFilter::new(n);
        let out = filter.remove_top_bins(&signal, 1);
        for (t, y) in out.iter().enumerate() {
            let x = t as f64 * std::f64::consts::TAU / n as f64;
            assert!((y - (2.0 + 0.1 * x.cos())).abs() < 1e-12);
        }
    }

    #[test]
    fn bin_ties_zero_lower_frequency_first() {
        let c = |re: f64, im: f64| Complex::new(re, im);
        let spectrum = [c(9.0, 0.0), c(0.0, 2.0), c(1.0, 0.0), c(-2.0, 0.0), c(0.0, -2.0)];
        assert_eq!(dominant_bins(&spectrum, 2), vec![1, 3]);
        assert_eq!(dominant_bins(&spectrum, 4), vec![1, 3, 4, 2]);
        assert!(dominant_bins(&spectrum, 0).is_empty());
    }

    #[test]
    fn selectivity_examples() {
        assert!((attack_selectivity(0.03, 0.01, 1e-9) - 3.0).abs() < 1e-6);
        assert_eq!(attack_selectivity(0.0, 0.2, 1e-9), 0.0);
        assert!((attack_selectivity(0.02, 0.0, 1e-6) - 2.0e4).abs() < 1e-6);
    }

    #[test]
    fn dual_suppresses_anti_nodes() {
        let cfg = config(AttackVariant::Dual, vec![2.0, 2.0, 0.0, 0.0], vec![0, 1], 1.0, 0);
        let out = apply_variant(&cfg, &[0.0, 3.0, 0.5, -1.0], 1.0, None);
        assert_eq!(out, vec![2.0, 3.0, -0.5, -1.0]);
    }

    fn rows_strategy() -> impl Strategy<Value = (Vec<f32>, Vec<f32>)> {
        prop::collection::vec((-4.0f32..4.0, -4.0f32..4.0), 4..24)
            .prop_map(|pairs| pairs.into_iter().unzip())
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn inject_rectifier_bounds((h, b) in rows_strategy(), alpha in 0.0f64..=1.0, c in 0.0f64..=1.0) {
            let nodes: Vec<usize> = (0..h.len()).filter(|j| j % 3 != 1).collect();
            for variant in [AttackVariant::Mean, AttackVariant::Pct80] {
                let cfg = config(variant, b.clone(), nodes.clone(), alpha, 0);
                let out = apply_variant(&cfg, &h, c, None);
                for j in 0..h.len() {
                    prop_assert!(out[j] >= h[j]);
                    prop_assert!(out[j] <= h[j].max(b[j]));
                    if !nodes.contains(&j) {
                        prop_assert_eq!(out[j].to_bits(), h[j].to_bits());
                    }
                }
            }
        }

        #[test]
        fn dual_never_raises_anti_nodes((h, b) in rows_strategy(), alpha in 0.0f64..=3.0, c in 0.0f64..=1.0) {
            let nodes: Vec<usize> = (0..h.len()).step_by(2).collect();
            let cfg = config(AttackVariant::Dual, b, nodes, alpha, 0);
            let out = apply_variant(&cfg, &h, c, None);
            for &j in cfg.anti_nodes.as_ref().unwrap() {
                prop_assert!(out[j] <= h[j]);
            }
        }

        #[test]
        fn zero_alpha_is_identity((h, b) in rows_strategy(), c in 0.0f64..=1.0, k in 0usize..3) {
            let nodes: Vec<usize> = (0..h.len()).collect();
            for variant in AttackVariant::ALL {
                if variant == AttackVariant::Zero {
                    continue;
                }
                let cfg = config(variant, b.clone(), nodes.clone(), 0.0, k);
                prop_assert_eq!(apply_variant(&cfg, &h, c, None), h.clone());
            }
        }

        #[test]
        fn zero_variant_idempotent((h, b) in rows_strategy(), c in 0.0f64..=1.0) {
            let nodes: Vec<usize> = (0..h.len()).step_by(3).collect();
            let cfg = config(AttackVariant::Zero, b, nodes, 1.0, 0);
            let once = apply_variant(&cfg, &h, c, None);
            prop_assert_eq!(apply_variant(&cfg, &once, c, None), once);
        }

        #[test]
        fn fft_round_trip(signal in prop::collection::vec(-100.0f64..100.0, 1..80)) {
            let filter = FourierFilter::new(signal.len());
            let back = filter.inverse(&filter.spectrum(&signal));
            let scale = signal.iter().map(|x| x.abs()).fold(0.0, f64::max).max(1e-12);
            for (a, b) in back.iter().zip(&signal) {
                prop_assert!((a - b).abs() <= 1e-6 * scale);
            }
        }
    }
}
