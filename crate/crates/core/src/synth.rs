//! Synthetic activations with planted hallucination geometry.
//!
//! Grounded rows are pure `N(0, σ²)` noise. Hallucinated rows add
//! `δ_m · σ · profile(l)` on each planted dim `m`. The returned
//! [`Manifest`] is the ground truth the recovery tests check against.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::{ActivationSet, Label, Pooling, SplitMix64};
use crate::error::{Error, Result};

const PEAK_SHOULDER: f64 = 0.3;

/// Attack strength paired with [`SynthSpec::redundant_fixture`]. Pulling
/// fifty unit-noise dims all the way to the target moves the probe logit
/// far past the class gap, which saturates both classes alike.
pub const REDUNDANT_ALPHA_ATK: f64 = 0.1;

/// Piecewise-linear depth profile through `(layer, value)` knots, held
/// flat beyond the first and last knot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerProfile {
    pub knots: Vec<(f64, f64)>,
}

impl LayerProfile {
    /// Ramp from 0 at layer 0 to 1 at `peak`, back to 0 one layer past the
    /// end.
    pub fn spanning(num_layers: usize, peak: usize) -> Self {
        let mut knots = vec![(0.0, 0.0), (peak as f64, 1.0), (num_layers.max(peak + 1) as f64, 0.0)];
        if peak == 0 {
            knots.remove(0);
        }
        LayerProfile { knots }
    }

    /// Narrow peak on a shallow ramp: 0 at layer 0, 0.1 at layer 1, 0.3 one
    /// layer either side of `peak`, 1 at `peak`, back down to 0.1 at the last
    /// layer. The steps are wide enough that per-layer AUCs stay ordered.
    pub fn peaked(num_layers: usize, peak: usize) -> Self {
        let p = peak as f64;
        let last = num_layers.saturating_sub(1) as f64;
        let mut knots: Vec<(f64, f64)> = Vec::new();
        for (x, y) in [(0.0, 0.0), (1.0, 0.1), (p - 1.0, PEAK_SHOULDER)] {
            if x >= 0.0 && x < p && knots.last().is_none_or(|&(px, _)| x > px) {
                knots.push((x, y));
            }
        }
        knots.push((p, 1.0));
        for (x, y) in [(p + 1.0, PEAK_SHOULDER), (last, 0.1)] {
            if x > knots[knots.len() - 1].0 {
                knots.push((x, y));
            }
        }
        LayerProfile { knots }
    }

    /// Triangle of half-widths `rise` and `fall` around `peak`.
    pub fn tent(peak: usize, rise: usize, fall: usize) -> Self {
        let p = peak as f64;
        LayerProfile {
            knots: vec![(p - rise.max(1) as f64, 0.0), (p, 1.0), (p + fall.max(1) as f64, 0.0)],
        }
    }

    pub fn at(&self, layer: usize) -> f64 {
        let x = layer as f64;
        let (first, last) = (self.knots[0], self.knots[self.knots.len() - 1]);
        if x <= first.0 {
            return first.1;
        }
        if x >= last.0 {
            return last.1;
        }
        let k = self.knots.partition_point(|&(kx, _)| kx <= x);
        let ((x0, y0), (x1, y1)) = (self.knots[k - 1], self.knots[k]);
        y0 + (y1 - y0) * (x - x0) / (x1 - x0)
    }

    pub fn values(&self, num_layers: usize) -> Vec<f64> {
        (0..num_layers).map(|l| self.at(l)).collect()
    }

    /// Layer of the first knot reaching the maximum value.
    pub fn peak(&self) -> f64 {
        self.knots
            .iter()
            .fold((f64::NEG_INFINITY, 0.0), |best, &(x, y)| if y > best.0 { (y, x) } else { best })
            .1
    }

    fn validate(&self) -> Result<()> {
        if self.knots.is_empty() {
            return Err(Error::InvalidArgument("profile needs at least one knot".into()));
        }
        if self.knots.windows(2).any(|w| !(w[0].0 < w[1].0)) {
            return Err(Error::InvalidArgument("profile knots must be strictly increasing".into()));
        }
        if self.knots.iter().any(|&(x, y)| !x.is_finite() || !(0.0..=1.0).contains(&y)) {
            return Err(Error::InvalidArgument("profile values must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

/// Which dims carry signal and how strongly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Planting {
    /// `count` dims drawn from the seed, each with strength `delta`.
    Random { count: usize, delta: f64 },
    /// Explicit `(dim, δ)` pairs.
    Explicit(Vec<(usize, f64)>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub hidden_dim: usize,
    pub num_layers: usize,
    pub num_samples: usize,
    pub profile: LayerProfile,
    pub planting: Planting,
    pub noise_sigma: f64,
    /// Fraction of hallucinated samples.
    pub label_balance: f64,
    pub seed: u64,
}

impl SynthSpec {
    /// Balanced set with `planted` dims at strength `delta` peaking at
    /// `⌊L/2⌋`.
    pub fn new(hidden_dim: usize, num_layers: usize, num_samples: usize, planted: usize, delta: f64, seed: u64) -> Self {
        SynthSpec {
            hidden_dim,
            num_layers,
            num_samples,
            profile: LayerProfile::peaked(num_layers, num_layers / 2),
            planting: Planting::Random { count: planted, delta },
            noise_sigma: 1.0,
            label_balance: 0.5,
            seed,
        }
    }

    /// The recovery benchmark: d=256, L=12, S=600, peak 6, 20 dims at 3σ.
    pub fn recovery_fixture() -> Self {
        SynthSpec::new(256, 12, 600, 20, 3.0, 7)
    }

    /// Signal spread over more dims than either side selects, so attacker
    /// and defender node sets only partly overlap. Classes separate almost
    /// perfectly; use a weak attack (see [`REDUNDANT_ALPHA_ATK`]) to keep
    /// the attacker probe out of saturation.
    pub fn redundant_fixture() -> Self {
        let mut spec = SynthSpec::new(128, 4, 900, 100, 0.8, 11);
        spec.profile = LayerProfile::tent(2, 2, 2);
        spec
    }

    pub fn with_profile(mut self, profile: LayerProfile) -> Self {
        self.profile = profile;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if self.hidden_dim == 0 || self.num_layers == 0 {
            return bad("hidden_dim and num_layers must be positive".into());
        }
        self.profile.validate()?;
        if !(0.0..self.num_layers as f64).contains(&self.profile.peak()) {
            return bad(format!(
                "peak layer {} out of range for {} layers",
                self.profile.peak(),
                self.num_layers
            ));
        }
        if !(self.noise_sigma > 0.0 && self.noise_sigma.is_finite()) {
            return bad("noise_sigma must be positive".into());
        }
        if !(self.label_balance > 0.0 && self.label_balance < 1.0) {
            return bad("label_balance must lie in (0, 1)".into());
        }
        match &self.planting {
            Planting::Random { count, delta } => {
                if *count > self.hidden_dim {
                    return bad(format!("cannot plant {count} dims in {}", self.hidden_dim));
                }
                if !delta.is_finite() {
                    return bad("delta must be finite".into());
                }
            }
            Planting::Explicit(pairs) => {
                let mut seen = vec![false; self.hidden_dim];
                for &(dim, delta) in pairs {
                    if dim >= self.hidden_dim || std::mem::replace(&mut seen[dim], true) {
                        return bad(format!("planted dim {dim} out of range or repeated"));
                    }
                    if !delta.is_finite() {
                        return bad("delta must be finite".into());
                    }
                }
            }
        }
        Ok(())
    }
}

/// Planted ground truth for one generated set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub spec: SynthSpec,
    /// Planted dims in ascending order.
    pub planted_dims: Vec<usize>,
    /// Strength of each planted dim, aligned with `planted_dims`.
    pub deltas: Vec<f64>,
    pub profile: Vec<f64>,
    pub num_hallucinated: usize,
}

impl Manifest {
    /// Fraction of planted dims found in `nodes`.
    pub fn recall(&self, nodes: &[usize]) -> f64 {
        if self.planted_dims.is_empty() {
            return 0.0;
        }
        let hits = nodes.iter().filter(|j| self.planted_dims.binary_search(j).is_ok()).count();
        hits as f64 / self.planted_dims.len() as f64
    }
}

pub fn generate(spec: &SynthSpec) -> Result<(ActivationSet, Manifest)> {
    spec.validate()?;
    let (d, s) = (spec.hidden_dim, spec.num_samples);
    let mut seeds = SplitMix64::new(spec.seed);
    let mut setup = ChaCha8Rng::seed_from_u64(seeds.next_u64());

    let mut planted: Vec<(usize, f64)> = match &spec.planting {
        Planting::Random { count, delta } => {
            let mut dims: Vec<usize> = (0..d).collect();
            dims.shuffle(&mut setup);
            dims.truncate(*count);
            dims.into_iter().map(|j| (j, *delta)).collect()
        }
        Planting::Explicit(pairs) => pairs.clone(),
    };
    planted.sort_by_key(|&(j, _)| j);

    let num_hall = ((s as f64) * spec.label_balance).round() as usize;
    let mut labels: Vec<Label> = (0..s)
        .map(|i| if i < num_hall { Label::Hallucinated } else { Label::Grounded })
        .collect();
    labels.shuffle(&mut setup);

    let noise = Normal::new(0.0, spec.noise_sigma).expect("sigma validated");
    let profile = spec.profile.values(spec.num_layers);
    let layers: Vec<Vec<f32>> = profile
        .iter()
        .map(|&p| {
            let mut rng = ChaCha8Rng::seed_from_u64(seeds.next_u64());
            let mut values: Vec<f64> = (0..s * d).map(|_| noise.sample(&mut rng)).collect();
            for (i, label) in labels.iter().enumerate() {
                if label.is_hallucinated() {
                    for &(j, delta) in &planted {
                        values[i * d + j] += delta * spec.noise_sigma * p;
                    }
                }
            }
            values.into_iter().map(|v| v as f32).collect()
        })
        .collect();

    let width = s.to_string().len();
    let ids = (0..s).map(|i| format!("synth-{i:0width$}")).collect();
    let mut meta = serde_json::Map::new();
    meta.insert("source".into(), "synthetic".into());
    meta.insert("seed".into(), spec.seed.into());
    let set = ActivationSet::new("synthetic", Pooling::LastToken, d, labels, ids, layers)?.with_metadata(meta);

    let manifest = Manifest {
        spec: spec.clone(),
        planted_dims: planted.iter().map(|&(j, _)| j).collect(),
        deltas: planted.iter().map(|&(_, delta)| delta).collect(),
        profile,
        num_hallucinated: num_hall,
    };
    Ok((set, manifest))
}

/// Mean-pooled view of a generated last-token set: each row is averaged
/// with `tokens − 1` extra pure-noise token vectors, so the planted signal
/// is diluted by `1/tokens` while noise shrinks by `1/√tokens`.
pub fn mean_pool_view(spec: &SynthSpec, last_token: &ActivationSet, tokens: usize) -> Result<ActivationSet> {
    spec.validate()?;
    if tokens == 0 {
        return Err(Error::InvalidArgument("tokens must be at least 1".into()));
    }
    if last_token.num_layers() != spec.num_layers
        || last_token.hidden_dim() != spec.hidden_dim
        || last_token.num_samples() != spec.num_samples
    {
        return Err(Error::DimensionMismatch("set does not match the synthetic spec".into()));
    }
    let noise = Normal::new(0.0, spec.noise_sigma).expect("sigma validated");
    // a stream disjoint from the ones `generate` draws
    let mut seeds = SplitMix64::new(spec.seed ^ 0x6d65_616e_706f_6f6c);
    let scale = 1.0 / tokens as f64;
    let layers = (0..spec.num_layers)
        .map(|l| {
            let mut rng = ChaCha8Rng::seed_from_u64(seeds.next_u64());
            last_token
                .layer(l)
                .iter()
                .map(|&v| {
                    let extra: f64 = (1..tokens).map(|_| noise.sample(&mut rng)).sum();
                    ((f64::from(v) + extra) * scale) as f32
                })
                .collect()
        })
        .collect();
    let set = ActivationSet::new(
        last_token.model_name(),
        Pooling::MeanPool,
        spec.hidden_dim,
        last_token.labels().to_vec(),
        last_token.sample_ids().to_vec(),
        layers,
    )?;
    let mut meta = last_token.metadata().clone();
    meta.insert("tokens".into(), tokens.into());
    Ok(set.with_metadata(meta))
}
