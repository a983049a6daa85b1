//! Hallucination-node selection and per-dimension baselines.

use serde::{Deserialize, Serialize};

use crate::data::{ActivationSet, Label};
use crate::defense::{single_pass, CancelMode, CancellationDeltas};
use crate::error::{Error, Result};
use crate::probe::{rank_desc, Probe};

/// Percentiles tried when tuning the defender baseline.
pub const PERCENTILE_CANDIDATES: [f64; 9] = [50.0, 60.0, 70.0, 75.0, 80.0, 85.0, 90.0, 95.0, 99.0];

/// Who derived a node set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeSource {
    Defender,
    Attacker,
    DynamicPass(usize),
}

/// Selected dimensions of one layer plus a full-width baseline vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HNodeSet {
    pub node_ids: Vec<usize>,
    pub baseline: Vec<f32>,
    pub percentile: f64,
    pub source: NodeSource,
    pub layer: usize,
}

impl HNodeSet {
    pub fn len(&self) -> usize {
        self.node_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.node_ids.is_empty()
    }

    /// Defender-style set: top-`n` signed coefficients of `probe` with the
    /// grounded `percentile` baseline over `idx`.
    pub fn from_probe(
        set: &ActivationSet,
        layer: usize,
        probe: &Probe,
        idx: &[usize],
        n: usize,
        percentile: f64,
        source: NodeSource,
    ) -> Result<HNodeSet> {
        if probe.dim() != set.hidden_dim() {
            return Err(Error::LengthMismatch {
                expected: set.hidden_dim(),
                found: probe.dim(),
            });
        }
        Ok(HNodeSet {
            node_ids: identify_hnodes(&probe.weights, n)?,
            baseline: compute_baseline(set, layer, idx, percentile, Label::Grounded)?,
            percentile,
            source,
            layer,
        })
    }
}

/// Indices of the `n` largest coefficients, largest first. The sort is on
/// signed values, so a negative coefficient can be selected when nothing
/// larger exists. Ties go to the lower index.
pub fn identify_hnodes(weights: &[f64], n: usize) -> Result<Vec<usize>> {
    if n > weights.len() {
        return Err(Error::InvalidArgument(format!(
            "cannot select {n} nodes from {} dimensions",
            weights.len()
        )));
    }
    let mut order = rank_desc(weights);
    order.truncate(n);
    Ok(order)
}

/// The `n` most negative coefficients, most negative first.
pub fn identify_anti_nodes(weights: &[f64], n: usize) -> Result<Vec<usize>> {
    let negated: Vec<f64> = weights.iter().map(|w| -w).collect();
    identify_hnodes(&negated, n)
}

/// `p`-th percentile of `values` by linear interpolation between closest
/// ranks: position `p/100 · (n − 1)` in sorted order.
pub fn percentile(values: &[f64], p: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::InvalidArgument("percentile of an empty sample".into()));
    }
    if !(0.0..=100.0).contains(&p) {
        return Err(Error::InvalidArgument(format!("percentile {p} outside [0, 100]")));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(percentile_sorted(&sorted, p))
}

fn percentile_sorted(sorted: &[f64], p: f64) -> f64 {
    let pos = p / 100.0 * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    if lo == hi {
        sorted[lo]
    } else {
        sorted[lo] + (sorted[hi] - sorted[lo]) * frac
    }
}

fn class_columns(
    set: &ActivationSet,
    layer: usize,
    idx: &[usize],
    class: Label,
) -> Result<Vec<Vec<f64>>> {
    set.check_layer(layer)?;
    set.check_indices(idx)?;
    let rows = set.indices_with_label(idx, class);
    if rows.is_empty() {
        return Err(Error::EmptyClass { class: class.name() });
    }
    let d = set.hidden_dim();
    let mut columns = vec![Vec::with_capacity(rows.len()); d];
    for &i in &rows {
        for (col, &v) in columns.iter_mut().zip(set.row(layer, i)) {
            col.push(f64::from(v));
        }
    }
    Ok(columns)
}

/// Per-dimension `p`-th percentile over the rows of `idx` with label `class`.
///
/// Only rows listed in `idx` are read.
pub fn compute_baseline(
    set: &ActivationSet,
    layer: usize,
    idx: &[usize],
    p: f64,
    class: Label,
) -> Result<Vec<f32>> {
    if !(p > 0.0 && p <= 100.0) {
        return Err(Error::InvalidArgument(format!("percentile {p} outside (0, 100]")));
    }
    class_columns(set, layer, idx, class)?
        .into_iter()
        .map(|mut col| {
            col.sort_by(f64::total_cmp);
            Ok(percentile_sorted(&col, p) as f32)
        })
        .collect()
}

/// Per-dimension mean over the rows of `idx` with label `class`.
pub fn class_mean(set: &ActivationSet, layer: usize, idx: &[usize], class: Label) -> Result<Vec<f32>> {
    Ok(class_columns(set, layer, idx, class)?
        .into_iter()
        .map(|col| (col.iter().sum::<f64>() / col.len() as f64) as f32)
        .collect())
}

fn shared_count(a: &HNodeSet, b: &HNodeSet) -> Result<usize> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch {
            expected: a.len(),
            found: b.len(),
        });
    }
    if a.is_empty() {
        return Err(Error::InvalidArgument("empty node sets".into()));
    }
    Ok(a.node_ids.iter().filter(|id| b.node_ids.contains(id)).count())
}

/// Fraction of `a`'s nodes also selected by `b`.
pub fn overlap_rate(a: &HNodeSet, b: &HNodeSet) -> Result<f64> {
    Ok(shared_count(a, b)? as f64 / a.len() as f64)
}

/// Fraction of `a`'s nodes that `b` did not select.
pub fn transfer_rate(a: &HNodeSet, b: &HNodeSet) -> Result<f64> {
    Ok(1.0 - overlap_rate(a, b)?)
}

/// Number of shared node ids.
pub fn overlap_count(a: &HNodeSet, b: &HNodeSet) -> Result<usize> {
    shared_count(a, b)
}

/// One percentile candidate's single-pass outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepEntry {
    pub percentile: f64,
    pub deltas: CancellationDeltas,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PercentileSweep {
    pub entries: Vec<SweepEntry>,
    /// Candidate with the highest selectivity, earliest on ties.
    pub best_percentile: f64,
    /// Activations the sweep was measured on.
    pub measured_on: String,
}

impl PercentileSweep {
    pub fn selectivity(&self, percentile: f64) -> Option<f64> {
        self.entries
            .iter()
            .find(|e| e.percentile == percentile)
            .map(|e| e.deltas.selectivity)
    }
}

/// Parameters shared by every candidate of a percentile sweep.
#[derive(Debug, Clone, Copy)]
pub struct SweepParams<'a> {
    pub layer: usize,
    pub nodes: &'a [usize],
    pub probe: &'a Probe,
    pub alpha: f64,
    pub tau: f64,
    pub eps: f64,
}

/// For each candidate percentile, builds grounded baselines on
/// `baseline_idx`, runs single-pass adaptive cancellation on the clean
/// `eval_idx` rows and records the defense selectivity.
pub fn percentile_sweep(
    set: &ActivationSet,
    baseline_idx: &[usize],
    eval_idx: &[usize],
    candidates: &[f64],
    params: SweepParams<'_>,
) -> Result<PercentileSweep> {
    if candidates.is_empty() {
        return Err(Error::InvalidArgument("no percentile candidates".into()));
    }
    let mut entries = Vec::with_capacity(candidates.len());
    for &p in candidates {
        let baseline = compute_baseline(set, params.layer, baseline_idx, p, Label::Grounded)?;
        let (_, deltas) = single_pass(
            set,
            params.layer,
            eval_idx,
            params.nodes,
            &baseline,
            params.probe,
            params.alpha,
            params.tau,
            CancelMode::Adaptive,
            params.eps,
        )?;
        entries.push(SweepEntry { percentile: p, deltas });
    }
    let scores: Vec<f64> = entries.iter().map(|e| e.deltas.selectivity).collect();
    let best_percentile = entries[rank_desc(&scores)[0]].percentile;
    Ok(PercentileSweep {
        entries,
        best_percentile,
        measured_on: "clean".into(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Pooling;
    use proptest::prelude::*;

    fn column_set(values: &[f32], labels: &[Label]) -> ActivationSet {
        ActivationSet::new(
            "col",
            Pooling::LastToken,
            1,
            labels.to_vec(),
            (0..values.len()).map(|i| i.to_string()).collect(),
            vec![values.to_vec()],
        )
        .unwrap()
    }

    #[test]
    fn signed_descending_selection() {
        assert_eq!(identify_hnodes(&[0.5, -0.9, 0.3, 0.1], 2).unwrap(), vec![0, 2]);
        assert_eq!(identify_hnodes(&[-0.2, -0.1], 1).unwrap(), vec![1]);
        assert_eq!(identify_hnodes(&[0.4; 5], 3).unwrap(), vec![0, 1, 2]);
        assert!(identify_hnodes(&[1.0], 2).is_err());
        assert_eq!(identify_anti_nodes(&[0.5, -0.9, 0.3, -0.1], 2).unwrap(), vec![1, 3]);
    }

    #[test]
    fn percentile_examples() {
        let eleven: Vec<f64> = (0..=10).map(f64::from).collect();
        assert_eq!(percentile(&eleven, 80.0).unwrap(), 8.0);
        assert_eq!(percentile(&[1.0, 2.0, 3.0, 4.0], 50.0).unwrap(), 2.5);
        assert_eq!(percentile(&[3.25], 37.0).unwrap(), 3.25);
    }

    #[test]
    fn baseline_filters_by_class() {
        let g = Label::Grounded;
        let h = Label::Hallucinated;
        let set = column_set(&[0.0, 1.0, 2.0, 100.0, 3.0, 4.0], &[g, g, g, h, g, g]);
        let all: Vec<usize> = (0..6).collect();
        assert_eq!(compute_baseline(&set, 0, &all, 50.0, g).unwrap(), vec![2.0]);
        assert_eq!(compute_baseline(&set, 0, &all, 80.0, h).unwrap(), vec![100.0]);
        assert!(matches!(
            compute_baseline(&set, 0, &[0, 1], 50.0, h),
            Err(Error::EmptyClass { class: "hallucinated" })
        ));
        assert_eq!(class_mean(&set, 0, &all, g).unwrap(), vec![2.0]);
    }

    #[test]
    fn baseline_reads_only_listed_rows() {
        let g = Label::Grounded;
        let values = [0.5, 1.5, 2.5, 3.5, 4.5, 5.5];
        let base = column_set(&values, &[g; 6]);
        let idx = [0, 2, 4];
        // poison every row outside idx
        let poisoned = base
            .map_rows(0, &[1, 3, 5], |_, _| Ok(vec![f32::NAN]))
            .unwrap();
        assert_eq!(
            compute_baseline(&base, 0, &idx, 80.0, g).unwrap(),
            compute_baseline(&poisoned, 0, &idx, 80.0, g).unwrap()
        );
    }

    fn node_set(ids: Vec<usize>) -> HNodeSet {
        HNodeSet {
            node_ids: ids,
            baseline: vec![0.0; 200],
            percentile: 80.0,
            source: NodeSource::Defender,
            layer: 0,
        }
    }

    #[test]
    fn overlap_eighteen_of_fifty() {
        let a = node_set((0..50).collect());
        let b = node_set((32..82).collect());
        assert_eq!(overlap_count(&a, &b).unwrap(), 18);
        assert!((overlap_rate(&a, &b).unwrap() - 0.36).abs() < 1e-12);
        assert!((transfer_rate(&a, &b).unwrap() - 0.64).abs() < 1e-12);
        assert_eq!(overlap_rate(&a, &a).unwrap(), 1.0);
        assert_eq!(transfer_rate(&a, &a).unwrap(), 0.0);
        assert!(overlap_rate(&a, &node_set(vec![1, 2])).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn percentile_matches_sort_oracle(
            values in prop::collection::vec(-1e3f64..1e3, 1..40),
            p in 0.0f64..=100.0,
        ) {
            let mut sorted = values.clone();
            sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let rank = p / 100.0 * (sorted.len() as f64 - 1.0);
            let below = rank.floor() as usize;
            let above = (below + 1).min(sorted.len() - 1);
            let w = rank - below as f64;
            let oracle = (1.0 - w) * sorted[below] + w * sorted[above];
            prop_assert!((percentile(&values, p).unwrap() - oracle).abs() <= 1e-9 * (1.0 + oracle.abs()));
        }

        #[test]
        fn baseline_monotone_in_p(
            values in prop::collection::vec(-10.0f32..10.0, 1..30),
            p1 in 1.0f64..=100.0,
            p2 in 1.0f64..=100.0,
        ) {
            let set = column_set(&values, &vec![Label::Grounded; values.len()]);
            let idx: Vec<usize> = (0..values.len()).collect();
            let (lo, hi) = if p1 <= p2 { (p1, p2) } else { (p2, p1) };
            let a = compute_baseline(&set, 0, &idx, lo, Label::Grounded).unwrap();
            let b = compute_baseline(&set, 0, &idx, hi, Label::Grounded).unwrap();
            prop_assert!(a[0] <= b[0]);
        }

        #[test]
        fn full_selection_is_permutation(w in prop::collection::vec(-3.0f64..3.0, 1..64)) {
            let mut ids = identify_hnodes(&w, w.len()).unwrap();
            ids.sort_unstable();
            prop_assert_eq!(ids, (0..w.len()).collect::<Vec<_>>());
        }

        #[test]
        fn overlap_symmetric(
            a in prop::collection::hash_set(0usize..60, 10),
            b in prop::collection::hash_set(0usize..60, 10),
        ) {
            let a = node_set(a.into_iter().collect());
            let b = node_set(b.into_iter().collect());
            prop_assert_eq!(overlap_rate(&a, &b).unwrap(), overlap_rate(&b, &a).unwrap());
        }
    }
}
