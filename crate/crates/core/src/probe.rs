//! Linear hallucination probes.
//!
//! A probe is an L2-regularized logistic regression on raw activations:
//!
//! ```text
//! minimize  Σᵢ [ softplus(zᵢ) − yᵢ zᵢ ] + (λ/2)‖w‖²,   zᵢ = w·xᵢ + b
//! ```
//!
//! The bias is not penalized. The objective is strictly convex in `w` for
//! `λ > 0`, so the minimizer is unique; it is found with full-batch damped
//! Newton steps and Armijo backtracking, which is deterministic and reaches a
//! gradient infinity-norm of `1e-6` in a handful of iterations.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{ActivationSet, Label, Pooling};
use crate::error::{Error, Result};

/// Solver and feature options for [`train_probe`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeOptions {
    pub l2_lambda: f64,
    /// Z-score features with training-set statistics before fitting.
    pub standardize: bool,
    pub max_iter: usize,
    pub grad_tol: f64,
}

impl Default for ProbeOptions {
    fn default() -> Self {
        Self {
            l2_lambda: 1.0,
            standardize: false,
            max_iter: 10_000,
            grad_tol: 1e-6,
        }
    }
}

/// Per-feature affine map applied before the linear score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

/// A trained linear probe.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Probe {
    pub weights: Vec<f64>,
    pub bias: f64,
    /// Source layers whose activations are concatenated, in feature order.
    pub layer_ids: Vec<usize>,
    pub train_seed: u64,
    pub train_auc: f64,
    pub eval_auc: Option<f64>,
    pub standardization: Option<Standardization>,
    pub iterations: usize,
    /// Infinity norm of the objective gradient at the returned point.
    pub grad_norm: f64,
}

impl Probe {
    /// Zero probe: confidence 0.5 everywhere.
    pub fn constant(dim: usize, bias: f64) -> Self {
        Probe {
            weights: vec![0.0; dim],
            bias,
            layer_ids: Vec::new(),
            train_seed: 0,
            train_auc: 0.5,
            eval_auc: None,
            standardization: None,
            iterations: 0,
            grad_norm: 0.0,
        }
    }

    pub fn from_weights(weights: Vec<f64>, bias: f64) -> Self {
        Probe {
            weights,
            ..Probe::constant(0, bias)
        }
    }

    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    pub fn logit(&self, h: &[f32]) -> Result<f64> {
        if h.len() != self.weights.len() {
            return Err(Error::LengthMismatch {
                expected: self.weights.len(),
                found: h.len(),
            });
        }
        let z = match &self.standardization {
            None => self
                .weights
                .iter()
                .zip(h)
                .map(|(w, &x)| w * f64::from(x))
                .sum::<f64>(),
            Some(s) => self
                .weights
                .iter()
                .zip(h)
                .zip(s.mean.iter().zip(&s.scale))
                .map(|((w, &x), (m, sd))| w * (f64::from(x) - m) / sd)
                .sum::<f64>(),
        };
        Ok(z + self.bias)
    }

    /// Probe confidence that `h` is hallucinated.
    pub fn confidence(&self, h: &[f32]) -> Result<f64> {
        Ok(sigmoid(self.logit(h)?))
    }

    /// Confidences for the given rows of one layer.
    pub fn confidences(&self, set: &ActivationSet, layer: usize, idx: &[usize]) -> Result<Vec<f64>> {
        set.check_layer(layer)?;
        set.check_indices(idx)?;
        idx.iter()
            .map(|&i| self.confidence(set.row(layer, i)))
            .collect()
    }
}

/// Free-function form of [`Probe::confidence`].
pub fn confidence(probe: &Probe, h: &[f32]) -> Result<f64> {
    probe.confidence(h)
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

/// Area under the ROC curve as the Mann-Whitney statistic: the fraction of
/// (hallucinated, grounded) pairs ranked correctly, ties counting one half.
pub fn auc(scores: &[f64], labels: &[Label]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::LengthMismatch {
            expected: labels.len(),
            found: scores.len(),
        });
    }
    if let Some(row) = scores.iter().position(|s| !s.is_finite()) {
        return Err(Error::NonFiniteInput { row, col: 0 });
    }
    let n_pos = labels.iter().filter(|l| l.is_hallucinated()).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::DegenerateLabels);
    }

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    // Sum of 1-based midranks of the positives.
    let mut rank_sum = 0.0;
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && scores[order[end]] == scores[order[start]] {
            end += 1;
        }
        let midrank = (start + 1 + end) as f64 / 2.0;
        let positives = order[start..end]
            .iter()
            .filter(|&&i| labels[i].is_hallucinated())
            .count();
        rank_sum += midrank * positives as f64;
        start = end;
    }
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

/// Fits a probe on `features` (one row per sample) by minimizing the
/// L2-regularized logistic loss.
pub fn train_probe(
    features: &[Vec<f64>],
    labels: &[Label],
    seed: u64,
    options: &ProbeOptions,
) -> Result<Probe> {
    if features.len() != labels.len() {
        return Err(Error::LengthMismatch {
            expected: labels.len(),
            found: features.len(),
        });
    }
    if options.l2_lambda < 0.0 || !options.l2_lambda.is_finite() {
        return Err(Error::InvalidArgument("l2_lambda must be finite and >= 0".into()));
    }
    let n_pos = labels.iter().filter(|l| l.is_hallucinated()).count();
    if n_pos == 0 || n_pos == labels.len() {
        return Err(Error::DegenerateLabels);
    }
    let dim = features[0].len();
    if dim == 0 {
        return Err(Error::InvalidArgument("probe needs at least one feature".into()));
    }
    for (row, f) in features.iter().enumerate() {
        if f.len() != dim {
            return Err(Error::LengthMismatch {
                expected: dim,
                found: f.len(),
            });
        }
        if let Some(col) = f.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteInput { row, col });
        }
    }

    let standardization = options.standardize.then(|| column_stats(features));
    let n = features.len();
    // Design matrix with a trailing column of ones for the bias.
    let x = DMatrix::from_fn(n, dim + 1, |i, j| {
        if j == dim {
            1.0
        } else if let Some(s) = &standardization {
            (features[i][j] - s.mean[j]) / s.scale[j]
        } else {
            features[i][j]
        }
    });
    let y = DVector::from_iterator(n, labels.iter().map(|l| f64::from(l.bit())));

    let fit = LogisticObjective {
        x: &x,
        y: &y,
        lambda: options.l2_lambda,
    }
    .minimize(options.max_iter, options.grad_tol);

    let weights: Vec<f64> = fit.theta.iter().take(dim).copied().collect();
    let bias = fit.theta[dim];
    let mut probe = Probe {
        weights,
        bias,
        layer_ids: Vec::new(),
        train_seed: seed,
        train_auc: 0.5,
        eval_auc: None,
        standardization,
        iterations: fit.iterations,
        grad_norm: fit.grad_norm,
    };
    let scores: Vec<f64> = (&x * &fit.theta).iter().copied().collect();
    probe.train_auc = auc(&scores, labels)?;
    Ok(probe)
}

fn column_stats(features: &[Vec<f64>]) -> Standardization {
    let n = features.len() as f64;
    let dim = features[0].len();
    let mut mean = vec![0.0; dim];
    for f in features {
        for (m, v) in mean.iter_mut().zip(f) {
            *m += v / n;
        }
    }
    let mut var = vec![0.0; dim];
    for f in features {
        for ((s, v), m) in var.iter_mut().zip(f).zip(&mean) {
            *s += (v - m) * (v - m) / n;
        }
    }
    let scale = var
        .into_iter()
        .map(|v| if v > 0.0 { v.sqrt() } else { 1.0 })
        .collect();
    Standardization { mean, scale }
}

struct LogisticObjective<'a> {
    x: &'a DMatrix<f64>,
    y: &'a DVector<f64>,
    lambda: f64,
}

struct Fit {
    theta: DVector<f64>,
    iterations: usize,
    grad_norm: f64,
}

impl LogisticObjective<'_> {
    fn dim(&self) -> usize {
        self.x.ncols() - 1
    }

    fn value(&self, theta: &DVector<f64>) -> f64 {
        let z = self.x * theta;
        let data: f64 = z
            .iter()
            .zip(self.y.iter())
            .map(|(&z, &y)| softplus(z) - y * z)
            .sum();
        let reg: f64 = theta.rows(0, self.dim()).norm_squared();
        data + 0.5 * self.lambda * reg
    }

    /// Gradient and the per-sample curvature weights p(1 − p).
    fn gradient(&self, theta: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        let z = self.x * theta;
        let p = z.map(sigmoid);
        let curvature = p.map(|p| p * (1.0 - p));
        let mut grad = self.x.tr_mul(&(p - self.y));
        for j in 0..self.dim() {
            grad[j] += self.lambda * theta[j];
        }
        (grad, curvature)
    }

    fn newton_direction(&self, grad: &DVector<f64>, curvature: &DVector<f64>) -> DVector<f64> {
        let mut weighted = self.x.clone();
        for (i, mut row) in weighted.row_iter_mut().enumerate() {
            row *= curvature[i].sqrt();
        }
        let mut hessian = weighted.tr_mul(&weighted);
        for j in 0..self.dim() {
            hessian[(j, j)] += self.lambda;
        }
        // Tiny ridge keeps the factorization alive when curvature vanishes.
        let mut ridge = 0.0;
        loop {
            let mut h = hessian.clone();
            if ridge > 0.0 {
                for j in 0..h.nrows() {
                    h[(j, j)] += ridge;
                }
            }
            if let Some(chol) = h.cholesky() {
                return -chol.solve(grad);
            }
            ridge = if ridge == 0.0 { 1e-10 } else { ridge * 100.0 };
            if ridge > 1e6 {
                return -grad.clone();
            }
        }
    }

    fn minimize(&self, max_iter: usize, grad_tol: f64) -> Fit {
        const ARMIJO: f64 = 1e-4;
        let mut theta = DVector::zeros(self.x.ncols());
        let mut value = self.value(&theta);
        let (mut grad, mut curvature) = self.gradient(&theta);
        let mut iterations = 0;
        while iterations < max_iter && grad.amax() > grad_tol {
            iterations += 1;
            let mut direction = self.newton_direction(&grad, &curvature);
            let mut slope = grad.dot(&direction);
            if slope >= 0.0 {
                direction = -grad.clone();
                slope = -grad.norm_squared();
            }
            if -slope <= 64.0 * f64::EPSILON * value.abs().max(1.0) {
                // The objective can no longer resolve the decrease, so judge
                // the full step by the gradient instead.
                let candidate = &theta + &direction;
                let (candidate_grad, candidate_curvature) = self.gradient(&candidate);
                if candidate_grad.amax() >= grad.amax() {
                    break;
                }
                value = self.value(&candidate);
                theta = candidate;
                (grad, curvature) = (candidate_grad, candidate_curvature);
                continue;
            }
            let mut step = 1.0;
            let mut accepted = None;
            while step > 1e-20 {
                let candidate = &theta + &direction * step;
                let candidate_value = self.value(&candidate);
                if candidate_value <= value + ARMIJO * step * slope {
                    accepted = Some((candidate, candidate_value));
                    break;
                }
                step *= 0.5;
            }
            match accepted {
                Some((candidate, _)) if candidate == theta => break,
                Some((candidate, candidate_value)) => {
                    theta = candidate;
                    value = candidate_value;
                    (grad, curvature) = self.gradient(&theta);
                }
                // No representable decrease left along the descent direction.
                None => break,
            }
        }
        Fit {
            grad_norm: grad.amax(),
            theta,
            iterations,
        }
    }
}

/// Per-layer AUC trajectory and the top-layer ensemble.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSweepReport {
    pub pooling: Pooling,
    pub layer_auc: Vec<f64>,
    pub best_layer: usize,
    /// Up to four layers by descending AUC, ties to the lower index.
    pub top_layers: Vec<usize>,
    pub ensemble_auc: f64,
}

impl LayerSweepReport {
    pub fn best_auc(&self) -> f64 {
        self.layer_auc[self.best_layer]
    }
}

/// Output of [`layer_sweep`]: the report plus the trained probes.
#[derive(Debug, Clone)]
pub struct LayerSweep {
    pub report: LayerSweepReport,
    pub layer_probes: Vec<Probe>,
    pub ensemble: Probe,
}

impl LayerSweep {
    pub fn best_probe(&self) -> &Probe {
        &self.layer_probes[self.report.best_layer]
    }
}

pub const ENSEMBLE_LAYERS: usize = 4;

/// Layers ordered by descending score, ties to the lower index.
pub(crate) fn rank_desc(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order
}

/// Trains a probe on every layer, evaluates each on `eval_idx`, and fits an
/// ensemble probe on the concatenated activations of the top layers.
///
/// Layers are trained in parallel; results do not depend on scheduling.
pub fn layer_sweep(
    set: &ActivationSet,
    train_idx: &[usize],
    eval_idx: &[usize],
    seed: u64,
    options: &ProbeOptions,
) -> Result<LayerSweep> {
    if set.num_layers() == 0 {
        return Err(Error::InvalidArgument("activation set has no layers".into()));
    }
    set.require_both_classes(train_idx)?;
    set.require_both_classes(eval_idx)?;
    let train_labels: Vec<Label> = train_idx.iter().map(|&i| set.label(i)).collect();

    let layer_probes = (0..set.num_layers())
        .into_par_iter()
        .map(|layer| fit_on_layers(set, &[layer], train_idx, &train_labels, eval_idx, seed, options))
        .collect::<Result<Vec<Probe>>>()?;

    let layer_auc: Vec<f64> = layer_probes
        .iter()
        .map(|p| p.eval_auc.unwrap_or(0.5))
        .collect();
    let order = rank_desc(&layer_auc);
    let best_layer = order[0];
    let top_layers: Vec<usize> = order.into_iter().take(ENSEMBLE_LAYERS).collect();

    let ensemble = fit_on_layers(set, &top_layers, train_idx, &train_labels, eval_idx, seed, options)?;
    let report = LayerSweepReport {
        pooling: set.pooling(),
        best_layer,
        ensemble_auc: ensemble.eval_auc.unwrap_or(0.5),
        layer_auc,
        top_layers,
    };
    Ok(LayerSweep {
        report,
        layer_probes,
        ensemble,
    })
}

/// Trains a probe on the concatenation of `layers` and scores it on `eval_idx`.
pub fn fit_on_layers(
    set: &ActivationSet,
    layers: &[usize],
    train_idx: &[usize],
    train_labels: &[Label],
    eval_idx: &[usize],
    seed: u64,
    options: &ProbeOptions,
) -> Result<Probe> {
    let features = set.features(layers, train_idx)?;
    let mut probe = train_probe(&features, train_labels, seed, options)?;
    probe.layer_ids = layers.to_vec();
    let eval_features = set.features(layers, eval_idx)?;
    let scores = eval_features
        .iter()
        .map(|f| {
            let row: Vec<f32> = f.iter().map(|&v| v as f32).collect();
            probe.logit(&row)
        })
        .collect::<Result<Vec<f64>>>()?;
    let eval_labels: Vec<Label> = eval_idx.iter().map(|&i| set.label(i)).collect();
    probe.eval_auc = Some(auc(&scores, &eval_labels)?);
    Ok(probe)
}

/// Best-layer AUC gain of last-token pooling over mean pooling.
pub fn pooling_gain(last_token: &LayerSweepReport, mean_pool: &LayerSweepReport) -> f64 {
    last_token.best_auc() - mean_pool.best_auc()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const G: Label = Label::Grounded;
    const H: Label = Label::Hallucinated;

    fn labels_from(bits: &[u8]) -> Vec<Label> {
        bits.iter().map(|&b| Label::from_bit(b).unwrap()).collect()
    }

    /// Pairwise oracle, independent of the rank-sum path.
    fn brute_auc(scores: &[f64], labels: &[Label]) -> f64 {
        let mut credit = 0.0;
        let mut pairs = 0.0;
        for (i, li) in labels.iter().enumerate() {
            for (j, lj) in labels.iter().enumerate() {
                if li.is_hallucinated() && !lj.is_hallucinated() {
                    pairs += 1.0;
                    credit += match scores[i].partial_cmp(&scores[j]).unwrap() {
                        std::cmp::Ordering::Greater => 1.0,
                        std::cmp::Ordering::Equal => 0.5,
                        std::cmp::Ordering::Less => 0.0,
                    };
                }
            }
        }
        credit / pairs
    }

    /// Objective written out directly, for the optimality oracle.
    fn naive_loss(features: &[Vec<f64>], labels: &[Label], w: &[f64], b: f64, lambda: f64) -> f64 {
        let mut loss = 0.0;
        for (x, y) in features.iter().zip(labels) {
            let z: f64 = x.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() + b;
            let p = 1.0 / (1.0 + (-z).exp());
            loss -= if y.is_hallucinated() { p.ln() } else { (1.0 - p).ln() };
        }
        loss + 0.5 * lambda * w.iter().map(|v| v * v).sum::<f64>()
    }

    fn random_instance(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> (Vec<Vec<f64>>, Vec<Label>) {
        loop {
            let labels: Vec<Label> = (0..n).map(|_| if rng.random_bool(0.5) { H } else { G }).collect();
            let h = labels.iter().filter(|l| l.is_hallucinated()).count();
            if h == 0 || h == n {
                continue;
            }
            let features = labels
                .iter()
                .map(|l| {
                    (0..dim)
                        .map(|_| rng.random_range(-2.0..2.0) + if l.is_hallucinated() { 0.7 } else { 0.0 })
                        .collect()
                })
                .collect();
            return (features, labels);
        }
    }

    #[test]
    fn auc_examples() {
        let s = [0.9, 0.8, 0.3, 0.2];
        assert_eq!(auc(&s, &labels_from(&[1, 1, 0, 0])).unwrap(), 1.0);
        assert_eq!(auc(&s, &labels_from(&[1, 0, 1, 0])).unwrap(), 0.75);
        assert_eq!(auc(&[0.4; 6], &labels_from(&[1, 0, 1, 0, 0, 1])).unwrap(), 0.5);
    }

    #[test]
    fn auc_degenerate() {
        assert!(matches!(auc(&[0.1, 0.2], &[G, G]), Err(Error::DegenerateLabels)));
        assert!(matches!(auc(&[0.1, f64::NAN], &[G, H]), Err(Error::NonFiniteInput { row: 1, .. })));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn auc_matches_pairwise_oracle(
            cases in prop::collection::vec((0u8..6, any::<bool>()), 2..=12)
        ) {
            // coarse score grid so ties are common
            let scores: Vec<f64> = cases.iter().map(|(s, _)| f64::from(*s) / 5.0).collect();
            let labels: Vec<Label> = cases.iter().map(|(_, h)| if *h { H } else { G }).collect();
            let h = labels.iter().filter(|l| l.is_hallucinated()).count();
            prop_assume!(h > 0 && h < labels.len());
            let fast = auc(&scores, &labels).unwrap();
            prop_assert!((fast - brute_auc(&scores, &labels)).abs() < 1e-12);
        }

        #[test]
        fn auc_invariant_under_monotone_transform(
            cases in prop::collection::vec((-5.0f64..5.0, any::<bool>()), 2..40)
        ) {
            let scores: Vec<f64> = cases.iter().map(|c| c.0).collect();
            let labels: Vec<Label> = cases.iter().map(|(_, h)| if *h { H } else { G }).collect();
            let h = labels.iter().filter(|l| l.is_hallucinated()).count();
            prop_assume!(h > 0 && h < labels.len());
            let warped: Vec<f64> = scores.iter().map(|s| s.exp() * 3.0 + 1.0).collect();
            prop_assert_eq!(auc(&scores, &labels).unwrap(), auc(&warped, &labels).unwrap());
        }
    }

    #[test]
    fn confidence_examples() {
        let zero = Probe::constant(3, 0.0);
        assert_eq!(zero.confidence(&[1.0, -4.0, 9.0]).unwrap(), 0.5);
        let one = Probe::from_weights(vec![1.0], 0.0);
        assert_eq!(one.confidence(&[0.0]).unwrap(), 0.5);
        let p = Probe::from_weights(vec![2.0], -1.0);
        assert!((p.confidence(&[1.0]).unwrap() - 0.731_058_578_630_004_9).abs() < 1e-12);
        assert!(matches!(p.confidence(&[1.0, 2.0]), Err(Error::LengthMismatch { .. })));
    }

    fn separable_1d() -> (Vec<Vec<f64>>, Vec<Label>) {
        let mut features = Vec::new();
        let mut labels = Vec::new();
        for _ in 0..50 {
            features.push(vec![-1.0]);
            labels.push(G);
            features.push(vec![1.0]);
            labels.push(H);
        }
        (features, labels)
    }

    #[test]
    fn separable_direction() {
        let (f, l) = separable_1d();
        let probe = train_probe(&f, &l, 0, &ProbeOptions::default()).unwrap();
        assert!(probe.weights[0] > 0.0);
        assert!(probe.confidence(&[1.0]).unwrap() > 0.5);
        assert!(probe.grad_norm <= 1e-6);
        // monotone in the feature
        let c: Vec<f64> = [-2.0f32, -1.0, 0.0, 0.5, 1.0, 3.0]
            .iter()
            .map(|&x| probe.confidence(&[x]).unwrap())
            .collect();
        assert!(c.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn huge_lambda_collapses_to_half() {
        let (f, l) = separable_1d();
        let options = ProbeOptions {
            l2_lambda: 1e9,
            ..Default::default()
        };
        let probe = train_probe(&f, &l, 0, &options).unwrap();
        assert!(probe.weights[0].abs() < 1e-6);
        assert!(probe.bias.abs() < 1e-6);
        for x in [-1.0f32, 0.0, 1.0] {
            assert!((probe.confidence(&[x]).unwrap() - 0.5).abs() < 1e-6);
        }
    }

    #[test]
    fn training_errors() {
        let o = ProbeOptions::default();
        assert!(matches!(
            train_probe(&[vec![1.0], vec![2.0]], &[G, G], 0, &o),
            Err(Error::DegenerateLabels)
        ));
        assert!(matches!(
            train_probe(&[vec![1.0], vec![f64::INFINITY]], &[G, H], 0, &o),
            Err(Error::NonFiniteInput { row: 1, col: 0 })
        ));
    }

    #[test]
    fn grid_perturbation_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let (features, labels) = random_instance(&mut rng, 20, 3);
        let o = ProbeOptions::default();
        let probe = train_probe(&features, &labels, 0, &o).unwrap();
        let best = naive_loss(&features, &labels, &probe.weights, probe.bias, o.l2_lambda);
        // every point of the {-1e-3, 0, +1e-3}^4 grid around the solution
        for code in 0..81 {
            let mut c = code;
            let mut delta = [0.0; 4];
            for d in &mut delta {
                *d = (c % 3) as f64 - 1.0;
                c /= 3;
            }
            let w: Vec<f64> = probe.weights.iter().zip(&delta).map(|(w, d)| w + 1e-3 * d).collect();
            let b = probe.bias + 1e-3 * delta[3];
            assert!(best <= naive_loss(&features, &labels, &w, b, o.l2_lambda) + 1e-12);
        }
    }

    #[test]
    fn sample_order_does_not_matter() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (features, labels) = random_instance(&mut rng, 40, 5);
        let o = ProbeOptions::default();
        let a = train_probe(&features, &labels, 0, &o).unwrap();
        let rev_f: Vec<_> = features.iter().rev().cloned().collect();
        let rev_l: Vec<_> = labels.iter().rev().copied().collect();
        let b = train_probe(&rev_f, &rev_l, 0, &o).unwrap();
        for (x, y) in a.weights.iter().zip(&b.weights) {
            assert!((x - y).abs() < 1e-7);
        }
        assert!((a.bias - b.bias).abs() < 1e-7);
    }

    #[test]
    fn standardized_probe_scores_raw_rows() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (mut features, labels) = random_instance(&mut rng, 60, 2);
        for f in &mut features {
            f[1] = f[1] * 100.0 + 40.0;
        }
        let o = ProbeOptions {
            standardize: true,
            ..Default::default()
        };
        let probe = train_probe(&features, &labels, 0, &o).unwrap();
        assert!(probe.standardization.is_some());
        assert!(probe.grad_norm <= 1e-6);
        let scores: Vec<f64> = features
            .iter()
            .map(|f| probe.logit(&[f[0] as f32, f[1] as f32]).unwrap())
            .collect();
        assert!((auc(&scores, &labels).unwrap() - probe.train_auc).abs() < 1e-3);
    }

    #[test]
    fn rank_desc_ties_to_lowest_index() {
        assert_eq!(rank_desc(&[0.7, 0.9, 0.9, 0.1]), vec![1, 2, 0, 3]);
    }

    fn report(best: f64) -> LayerSweepReport {
        LayerSweepReport {
            pooling: Pooling::LastToken,
            layer_auc: vec![0.5, best],
            best_layer: 1,
            top_layers: vec![1, 0],
            ensemble_auc: best,
        }
    }

    #[test]
    fn pooling_gain_examples() {
        assert!((pooling_gain(&report(0.754), &report(0.627)) - 0.127).abs() < 1e-12);
        assert!((pooling_gain(&report(0.888), &report(0.648)) - 0.240).abs() < 1e-12);
        assert_eq!(pooling_gain(&report(0.8), &report(0.8)), 0.0);
    }
}
