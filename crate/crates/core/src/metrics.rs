//! Disentanglement metrics over quantized filler-index representations.
//!
//! A representation assigns each sample one filler index per role. Scores
//! depend only on which samples share an index, never on the index values
//! themselves (except BetaVAE, which looks at the filler embeddings).

use alloc::vec;
use alloc::vec::Vec;

use crate::dataset::{sample_record, FactorRecord, FactorSpec, Renderer};
use crate::error::{invalid, Result};
use crate::linalg::{dot, norm};
use crate::model::SoftTprAutoencoder;
use crate::rng::SeededRng;
use crate::tpr::FillerCodebook;

/// Minimum sample count for the DCI and MIG estimators.
pub const MIN_SAMPLES: usize = 100;

/// Filler indices (0-based) of each sample, one per role.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct IndexRepresentation {
    pub v: Vec<Vec<usize>>,
    pub n_f: usize,
}

impl IndexRepresentation {
    pub fn new(v: Vec<Vec<usize>>, n_f: usize) -> Result<Self> {
        let width = v.first().map_or(0, Vec::len);
        if v.iter().any(|row| row.len() != width || row.iter().any(|&j| j >= n_f)) {
            return Err(invalid("index rows must share a width and stay below n_f"));
        }
        Ok(Self { v, n_f })
    }
}

/// Greedy matchings of a model's encodings of `observations`.
pub fn to_index_repr(
    model: &SoftTprAutoencoder,
    observations: &[crate::linalg::DenseVector],
) -> Result<IndexRepresentation> {
    let v = model
        .quantize(observations)?
        .into_iter()
        .map(|q| q.tpr.matching.as_slice().to_vec())
        .collect();
    IndexRepresentation::new(v, model.config().n_f)
}

/// Anything that maps factor records to filler indices.
pub trait IndexEncoder {
    fn codebook(&self) -> &FillerCodebook;
    fn encode(&mut self, records: &[FactorRecord]) -> Result<Vec<Vec<usize>>>;
}

/// Renders records and quantizes them with a trained model.
pub struct ModelEncoder<'a> {
    model: &'a SoftTprAutoencoder,
    renderer: &'a Renderer,
    codebook: FillerCodebook,
}

impl<'a> ModelEncoder<'a> {
    pub fn new(model: &'a SoftTprAutoencoder, renderer: &'a Renderer) -> Result<Self> {
        if renderer.spec().obs_dim != model.arch.obs_dim {
            return Err(invalid("renderer obs_dim differs from the model's"));
        }
        Ok(Self {
            model,
            renderer,
            codebook: model.codebook()?,
        })
    }
}

impl IndexEncoder for ModelEncoder<'_> {
    fn codebook(&self) -> &FillerCodebook {
        &self.codebook
    }

    fn encode(&mut self, records: &[FactorRecord]) -> Result<Vec<Vec<usize>>> {
        let xs = records
            .iter()
            .map(|a| self.renderer.render(a))
            .collect::<Result<Vec<_>>>()?;
        Ok(to_index_repr(self.model, &xs)?.v)
    }
}

/// The ground-truth code: role `i` takes filler `a[i]`.
pub struct OracleEncoder {
    codebook: FillerCodebook,
}

impl OracleEncoder {
    pub fn new(codebook: FillerCodebook, spec: &FactorSpec) -> Result<Self> {
        if spec.values_per_factor.iter().any(|&v| v > codebook.n_f()) {
            return Err(invalid("codebook smaller than a factor's value count"));
        }
        Ok(Self { codebook })
    }
}

impl IndexEncoder for OracleEncoder {
    fn codebook(&self) -> &FillerCodebook {
        &self.codebook
    }

    fn encode(&mut self, records: &[FactorRecord]) -> Result<Vec<Vec<usize>>> {
        Ok(records.iter().map(|a| a.0.clone()).collect())
    }
}

/// Uniform random indices drawn independently of the records.
pub struct IndependentEncoder {
    codebook: FillerCodebook,
    n_r: usize,
    rng: SeededRng,
}

impl IndependentEncoder {
    pub fn new(codebook: FillerCodebook, n_r: usize, seed: u64) -> Self {
        Self {
            codebook,
            n_r,
            rng: SeededRng::new(seed),
        }
    }
}

impl IndexEncoder for IndependentEncoder {
    fn codebook(&self) -> &FillerCodebook {
        &self.codebook
    }

    fn encode(&mut self, records: &[FactorRecord]) -> Result<Vec<Vec<usize>>> {
        let n_f = self.codebook.n_f();
        Ok(records
            .iter()
            .map(|_| (0..self.n_r).map(|_| self.rng.below(n_f)).collect())
            .collect())
    }
}

// ---------------------------------------------------------------------------
// FactorVAE

/// Index vectors of samples that share the value of `fixed_factor`.
#[derive(Clone, Debug, PartialEq)]
pub struct VoteBatch {
    pub fixed_factor: usize,
    pub v: Vec<Vec<usize>>,
}

pub fn factorvae_batches(
    encoder: &mut dyn IndexEncoder,
    spec: &FactorSpec,
    n_batches: usize,
    batch_size: usize,
    rng: &mut SeededRng,
) -> Result<Vec<VoteBatch>> {
    let n_r = spec.n_r();
    (0..n_batches)
        .map(|_| {
            let k = rng.below(n_r);
            let value = rng.below(spec.values_per_factor[k]);
            let records: Vec<_> = (0..batch_size)
                .map(|_| {
                    let mut a = sample_record(spec, rng);
                    a.0[k] = value;
                    a
                })
                .collect();
            Ok(VoteBatch {
                fixed_factor: k,
                v: encoder.encode(&records)?,
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct FactorVaeResult {
    pub score: f64,
    /// `votes[d][k]`: training batches with fixed factor `k` whose
    /// lowest-dispersion dimension was `d`.
    pub votes: Vec<Vec<usize>>,
    /// Batches in which every dimension was constant.
    pub degenerate_batches: usize,
}

/// Categorical variance of one column: the total variance of its one-hot
/// encoding, `1 − Σ_c p_c²`.
fn categorical_variance(values: impl Iterator<Item = usize> + Clone) -> f64 {
    let n = values.clone().count();
    let mut sorted: Vec<usize> = values.collect();
    sorted.sort_unstable();
    let mut sum_sq = 0u128;
    let mut run = 0u128;
    for (k, &x) in sorted.iter().enumerate() {
        run += 1;
        if k + 1 == sorted.len() || sorted[k + 1] != x {
            sum_sq += run * run;
            run = 0;
        }
    }
    1.0 - sum_sq as f64 / (n as u128 * n as u128) as f64
}

/// Majority-vote accuracy: a table from lowest-dispersion dimension to
/// fixed factor is learned on the first half of the batches and scored on
/// the second half. Ties go to the lowest dimension and the lowest factor.
pub fn factorvae_score(batches: &[VoteBatch], n_r: usize) -> Result<FactorVaeResult> {
    if batches.len() < 2 {
        return Err(invalid("factorvae needs at least two batches"));
    }
    let width = batches[0].v.first().map_or(0, Vec::len);
    if width == 0 {
        return Err(invalid("factorvae needs non-empty index vectors"));
    }
    let mut degenerate = 0;
    let mut predicted_dim = Vec::with_capacity(batches.len());
    for b in batches {
        if b.v.len() < 2 || b.fixed_factor >= n_r || b.v.iter().any(|r| r.len() != width) {
            return Err(invalid("each batch needs two votes of equal width"));
        }
        let vars: Vec<f64> = (0..width)
            .map(|d| categorical_variance(b.v.iter().map(move |r| r[d])))
            .collect();
        if vars.iter().all(|&x| x == 0.0) {
            degenerate += 1;
        }
        let mut best = 0;
        for d in 1..width {
            if vars[d] < vars[best] {
                best = d;
            }
        }
        predicted_dim.push(best);
    }
    let split = batches.len() / 2;
    let mut votes = vec![vec![0usize; n_r]; width];
    for (b, &d) in batches[..split].iter().zip(&predicted_dim) {
        votes[d][b.fixed_factor] += 1;
    }
    let table: Vec<usize> = votes
        .iter()
        .map(|row| {
            let mut best = 0;
            for k in 1..n_r {
                if row[k] > row[best] {
                    best = k;
                }
            }
            best
        })
        .collect();
    let test = &batches[split..];
    let correct = test
        .iter()
        .zip(&predicted_dim[split..])
        .filter(|(b, &d)| table[d] == b.fixed_factor)
        .count();
    Ok(FactorVaeResult {
        score: correct as f64 / test.len() as f64,
        votes,
        degenerate_batches: degenerate,
    })
}

// ---------------------------------------------------------------------------
// DCI disentanglement

#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct BoostingConfig {
    pub rounds: usize,
    pub max_depth: usize,
    pub shrinkage: f64,
    /// A split must reduce the node's squared error by more than this
    /// fraction of it.
    pub min_relative_gain: f64,
}

impl Default for BoostingConfig {
    fn default() -> Self {
        Self {
            rounds: 10,
            max_depth: 3,
            shrinkage: 0.3,
            min_relative_gain: 1e-9,
        }
    }
}

/// A regression tree over categorical columns; internal nodes test
/// `v[column] == value`.
#[derive(Clone, Debug, PartialEq)]
enum Tree {
    Leaf(f64),
    Split {
        column: usize,
        value: usize,
        equal: alloc::boxed::Box<Tree>,
        other: alloc::boxed::Box<Tree>,
    },
}

impl Tree {
    fn predict(&self, row: &[usize]) -> f64 {
        match self {
            Tree::Leaf(v) => *v,
            Tree::Split {
                column,
                value,
                equal,
                other,
            } => {
                if row[*column] == *value {
                    equal.predict(row)
                } else {
                    other.predict(row)
                }
            }
        }
    }
}

struct TreeFit<'a> {
    v: &'a [Vec<usize>],
    residual: &'a [f64],
    cfg: &'a BoostingConfig,
    importance: &'a mut [f64],
}

impl TreeFit<'_> {
    fn grow(&mut self, samples: &[usize], depth: usize) -> Tree {
        let n = samples.len() as f64;
        let total: f64 = samples.iter().map(|&s| self.residual[s]).sum();
        let mean = total / n;
        if depth == self.cfg.max_depth || samples.len() < 2 {
            return Tree::Leaf(mean);
        }
        let sse: f64 = samples
            .iter()
            .map(|&s| (self.residual[s] - mean) * (self.residual[s] - mean))
            .sum();
        if sse == 0.0 {
            return Tree::Leaf(mean);
        }
        // (gain, column, first position of the value in `samples`, value)
        let mut best: Option<(f64, usize, usize, usize)> = None;
        let width = self.v[samples[0]].len();
        for column in 0..width {
            // value -> (first position, count, residual sum)
            let mut groups: Vec<(usize, usize, usize, f64)> = Vec::new();
            for (pos, &s) in samples.iter().enumerate() {
                let value = self.v[s][column];
                match groups.iter_mut().find(|g| g.0 == value) {
                    Some(g) => {
                        g.2 += 1;
                        g.3 += self.residual[s];
                    }
                    None => groups.push((value, pos, 1, self.residual[s])),
                }
            }
            if groups.len() < 2 {
                continue;
            }
            for &(value, first, count, sum) in &groups {
                let (nl, nr) = (count as f64, n - count as f64);
                let rest = total - sum;
                let gain = sum * sum / nl + rest * rest / nr - total * total / n;
                let better = match best {
                    None => true,
                    Some((g, c, f, _)) => gain > g || (gain == g && (column, first) < (c, f)),
                };
                if better {
                    best = Some((gain, column, first, value));
                }
            }
        }
        match best {
            Some((gain, column, _, value)) if gain > self.cfg.min_relative_gain * sse => {
                self.importance[column] += gain;
                let (eq, ne): (Vec<usize>, Vec<usize>) =
                    samples.iter().partition(|&&s| self.v[s][column] == value);
                Tree::Split {
                    column,
                    value,
                    equal: alloc::boxed::Box::new(self.grow(&eq, depth + 1)),
                    other: alloc::boxed::Box::new(self.grow(&ne, depth + 1)),
                }
            }
            _ => Tree::Leaf(mean),
        }
    }
}

/// Squared-error gradient boosting of categorical regression trees.
/// Returns the unnormalized impurity decrease credited to each column.
fn boosted_importance(v: &[Vec<usize>], target: &[f64], cfg: &BoostingConfig) -> Vec<f64> {
    let width = v[0].len();
    let n = target.len();
    let base = target.iter().sum::<f64>() / n as f64;
    let mut prediction = vec![base; n];
    let mut importance = vec![0.0; width];
    let samples: Vec<usize> = (0..n).collect();
    for _ in 0..cfg.rounds {
        let residual: Vec<f64> = target.iter().zip(&prediction).map(|(y, p)| y - p).collect();
        let tree = TreeFit {
            v,
            residual: &residual,
            cfg,
            importance: &mut importance,
        }
        .grow(&samples, 0);
        if matches!(tree, Tree::Leaf(_)) {
            break;
        }
        for (p, row) in prediction.iter_mut().zip(v) {
            *p += cfg.shrinkage * tree.predict(row);
        }
    }
    importance
}

#[derive(Clone, Debug, PartialEq)]
pub struct DciResult {
    pub score: f64,
    /// `importance[c][k]`: normalized importance of column `c` for factor `k`.
    pub importance: Vec<Vec<f64>>,
    /// Per-column disentanglement `1 − H(P_c)/ln K`.
    pub per_column: Vec<f64>,
    /// Share of total importance carried by each column.
    pub column_weight: Vec<f64>,
}

/// DCI disentanglement with boosted regression trees predicting each
/// factor's value from the index columns.
pub fn dci_score(v: &[Vec<usize>], records: &[FactorRecord], cfg: &BoostingConfig) -> Result<DciResult> {
    if v.len() < MIN_SAMPLES || v.len() != records.len() {
        return Err(invalid("dci needs at least 100 samples with matching records"));
    }
    let width = v[0].len();
    let n_factors = records[0].0.len();
    if width == 0 || v.iter().any(|r| r.len() != width) || records.iter().any(|a| a.0.len() != n_factors) {
        return Err(invalid("ragged representation or records"));
    }
    let mut importance = vec![vec![0.0; n_factors]; width];
    for k in 0..n_factors {
        let target: Vec<f64> = records.iter().map(|a| a.0[k] as f64).collect();
        let raw = boosted_importance(v, &target, cfg);
        let total: f64 = raw.iter().sum();
        if total > 0.0 {
            for c in 0..width {
                importance[c][k] = raw[c] / total;
            }
        }
    }
    let mass: Vec<f64> = importance.iter().map(|row| row.iter().sum()).collect();
    let total_mass: f64 = mass.iter().sum();
    let log_k = libm::log(n_factors as f64);
    let per_column: Vec<f64> = importance
        .iter()
        .zip(&mass)
        .map(|(row, &m)| {
            if m == 0.0 || n_factors < 2 {
                return if m == 0.0 { 0.0 } else { 1.0 };
            }
            let h: f64 = row
                .iter()
                .filter(|&&r| r > 0.0)
                .map(|&r| {
                    let p = r / m;
                    -p * libm::log(p)
                })
                .sum();
            1.0 - h / log_k
        })
        .collect();
    let column_weight: Vec<f64> = if total_mass > 0.0 {
        mass.iter().map(|m| m / total_mass).collect()
    } else {
        vec![0.0; width]
    };
    let score = per_column.iter().zip(&column_weight).map(|(d, w)| d * w).sum::<f64>();
    Ok(DciResult {
        score: score.clamp(0.0, 1.0),
        importance,
        per_column,
        column_weight,
    })
}

// ---------------------------------------------------------------------------
// BetaVAE

#[derive(Clone, Debug, PartialEq)]
pub struct BetaVaePoints {
    pub features: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    /// Cosines that involved a zero-norm filler and were set to 0.
    pub zero_norm: usize,
}

/// Per-role cosine similarity between the quantized fillers of a pair.
/// Returns the vector and the number of zero-norm cases.
pub fn cosine_features(codebook: &FillerCodebook, m: &[usize], m_prime: &[usize]) -> (Vec<f64>, usize) {
    let e = codebook.embeddings();
    let mut zero = 0;
    let d: Vec<f64> = m
        .iter()
        .zip(m_prime)
        .map(|(&j, &jp)| {
            let (a, b) = (e.column(j), e.column(jp));
            let (na, nb) = (norm(a.as_slice()), norm(b.as_slice()));
            if na == 0.0 || nb == 0.0 {
                zero += 1;
                0.0
            } else if j == jp {
                1.0
            } else {
                dot(a.as_slice(), b.as_slice()) / (na * nb)
            }
        })
        .collect();
    (d, zero)
}

/// Each point fixes one factor, draws `pairs_per_point` record pairs that
/// agree on it and differ elsewhere at random, and averages their cosine
/// vectors. The label is the fixed factor.
pub fn betavae_points(
    encoder: &mut dyn IndexEncoder,
    spec: &FactorSpec,
    n_points: usize,
    pairs_per_point: usize,
    rng: &mut SeededRng,
) -> Result<BetaVaePoints> {
    if pairs_per_point == 0 {
        return Err(invalid("pairs_per_point must be positive"));
    }
    let n_r = spec.n_r();
    let mut out = BetaVaePoints {
        features: Vec::with_capacity(n_points),
        labels: Vec::with_capacity(n_points),
        zero_norm: 0,
    };
    for _ in 0..n_points {
        let k = rng.below(n_r);
        let mut records = Vec::with_capacity(2 * pairs_per_point);
        for _ in 0..pairs_per_point {
            let a = sample_record(spec, rng);
            let mut b = sample_record(spec, rng);
            b.0[k] = a.0[k];
            records.push(a);
            records.push(b);
        }
        let v = encoder.encode(&records)?;
        let width = v[0].len();
        let mut mean = vec![0.0; width];
        for pair in v.chunks(2) {
            let (d, zero) = cosine_features(encoder.codebook(), &pair[0], &pair[1]);
            out.zero_norm += zero;
            for (m, x) in mean.iter_mut().zip(d) {
                *m += x;
            }
        }
        mean.iter_mut().for_each(|m| *m /= pairs_per_point as f64);
        out.features.push(mean);
        out.labels.push(k);
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ClassifierConfig {
    pub epochs: usize,
    pub lr: f64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self { epochs: 500, lr: 0.01 }
    }
}

/// Held-out accuracy of a linear softmax classifier trained by full-batch
/// gradient descent from zero weights on the first half of the points.
pub fn betavae_score(points: &BetaVaePoints, n_classes: usize, cfg: &ClassifierConfig) -> Result<f64> {
    let n = points.features.len();
    if n < 2 || points.labels.len() != n || n_classes == 0 {
        return Err(invalid("betavae needs at least two labelled points"));
    }
    let width = points.features[0].len();
    if points.labels.iter().any(|&l| l >= n_classes) || points.features.iter().any(|f| f.len() != width) {
        return Err(invalid("betavae labels or features malformed"));
    }
    let split = n / 2;
    let (train_x, test_x) = points.features.split_at(split);
    let (train_y, test_y) = points.labels.split_at(split);
    // w[k][c] with a trailing bias column.
    let mut w = vec![vec![0.0; width + 1]; n_classes];
    let logits = |w: &[Vec<f64>], x: &[f64]| -> Vec<f64> {
        w.iter()
            .map(|wk| dot(&wk[..width], x) + wk[width])
            .collect()
    };
    for _ in 0..cfg.epochs {
        let mut grad = vec![vec![0.0; width + 1]; n_classes];
        for (x, &y) in train_x.iter().zip(train_y) {
            let z = logits(&w, x);
            let max = z.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
            let e: Vec<f64> = z.iter().map(|&v| libm::exp(v - max)).collect();
            let s: f64 = e.iter().sum();
            for k in 0..n_classes {
                let g = e[k] / s - if k == y { 1.0 } else { 0.0 };
                for c in 0..width {
                    grad[k][c] += g * x[c];
                }
                grad[k][width] += g;
            }
        }
        let scale = cfg.lr / train_x.len() as f64;
        for (wk, gk) in w.iter_mut().zip(&grad) {
            for (a, b) in wk.iter_mut().zip(gk) {
                *a -= scale * b;
            }
        }
    }
    let correct = test_x
        .iter()
        .zip(test_y)
        .filter(|(x, &y)| {
            let z = logits(&w, x);
            let mut best = 0;
            for k in 1..n_classes {
                if z[k] > z[best] {
                    best = k;
                }
            }
            best == y
        })
        .count();
    Ok(correct as f64 / test_x.len() as f64)
}

// ---------------------------------------------------------------------------
// MIG

#[derive(Clone, Debug, PartialEq)]
pub struct MigResult {
    pub score: f64,
    /// Normalized gap per factor; `None` for constant factors (skipped).
    pub per_factor: Vec<Option<f64>>,
}

/// Plug-in mutual information (nats) between two discrete columns.
pub fn mutual_information(x: &[usize], y: &[usize]) -> f64 {
    let n = x.len() as u128;
    let mut joint: Vec<((usize, usize), u128)> = Vec::new();
    let mut px: Vec<(usize, u128)> = Vec::new();
    let mut py: Vec<(usize, u128)> = Vec::new();
    fn bump<K: PartialEq>(t: &mut Vec<(K, u128)>, k: K) {
        match t.iter_mut().find(|e| e.0 == k) {
            Some(e) => e.1 += 1,
            None => t.push((k, 1)),
        }
    }
    for (&a, &b) in x.iter().zip(y) {
        bump(&mut joint, (a, b));
        bump(&mut px, a);
        bump(&mut py, b);
    }
    let count = |t: &[(usize, u128)], k: usize| t.iter().find(|e| e.0 == k).map_or(0, |e| e.1);
    joint
        .iter()
        .map(|&((a, b), c)| {
            let ratio = (c * n) as f64 / (count(&px, a) * count(&py, b)) as f64;
            c as f64 / n as f64 * libm::log(ratio)
        })
        .sum::<f64>()
        .max(0.0)
}

/// Plug-in entropy (nats).
pub fn entropy(x: &[usize]) -> f64 {
    mutual_information(x, x)
}

/// Mutual information gap, averaged over non-constant factors.
pub fn mig_score(v: &[Vec<usize>], records: &[FactorRecord]) -> Result<MigResult> {
    if v.len() < MIN_SAMPLES || v.len() != records.len() {
        return Err(invalid("mig needs at least 100 samples with matching records"));
    }
    let width = v[0].len();
    let n_factors = records[0].0.len();
    let columns: Vec<Vec<usize>> = (0..width).map(|c| v.iter().map(|r| r[c]).collect()).collect();
    let mut per_factor = Vec::with_capacity(n_factors);
    for k in 0..n_factors {
        let a: Vec<usize> = records.iter().map(|r| r.0[k]).collect();
        let h = entropy(&a);
        if h == 0.0 {
            per_factor.push(None);
            continue;
        }
        let mut mi: Vec<f64> = columns.iter().map(|c| mutual_information(c, &a)).collect();
        mi.sort_by(|x, y| y.total_cmp(x));
        let gap = mi[0] - mi.get(1).copied().unwrap_or(0.0);
        per_factor.push(Some((gap / h).clamp(0.0, 1.0)));
    }
    let used: Vec<f64> = per_factor.iter().flatten().copied().collect();
    if used.is_empty() {
        return Err(invalid("every factor is constant"));
    }
    Ok(MigResult {
        score: used.iter().sum::<f64>() / used.len() as f64,
        per_factor,
    })
}

// ---------------------------------------------------------------------------
// All four

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields, default))]
pub struct MetricsConfig {
    pub factorvae_batches: usize,
    pub factorvae_batch_size: usize,
    pub betavae_points: usize,
    pub betavae_pairs_per_point: usize,
    /// Samples for DCI and MIG.
    pub samples: usize,
    #[cfg_attr(feature = "serde", serde(skip))]
    pub boosting: BoostingConfig,
    #[cfg_attr(feature = "serde", serde(skip))]
    pub classifier: ClassifierConfig,
    #[cfg_attr(feature = "serde", serde(skip))]
    pub seed: u64,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self {
            factorvae_batches: 500,
            factorvae_batch_size: 64,
            betavae_points: 500,
            betavae_pairs_per_point: 64,
            samples: 2000,
            boosting: BoostingConfig::default(),
            classifier: ClassifierConfig::default(),
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricReport {
    pub factorvae: f64,
    pub dci: f64,
    pub betavae: f64,
    pub mig: f64,
    pub factorvae_degenerate_batches: usize,
    pub betavae_zero_norm: usize,
    pub dci_per_column: Vec<f64>,
    pub mig_per_factor: Vec<Option<f64>>,
}

/// Evaluate all four metrics. Each metric draws from its own stream forked
/// off `cfg.seed`, so the scores do not depend on evaluation order.
pub fn evaluate(encoder: &mut dyn IndexEncoder, spec: &FactorSpec, cfg: &MetricsConfig) -> Result<MetricReport> {
    evaluate_on(encoder, spec, cfg, None)
}

/// As [`evaluate`], with DCI and MIG computed on `records` when given
/// instead of `cfg.samples` fresh draws.
pub fn evaluate_on(
    encoder: &mut dyn IndexEncoder,
    spec: &FactorSpec,
    cfg: &MetricsConfig,
    records: Option<&[FactorRecord]>,
) -> Result<MetricReport> {
    let mut root = SeededRng::new(cfg.seed);
    let mut fv_rng = root.fork();
    let mut bv_rng = root.fork();
    let mut sample_rng = root.fork();

    let batches = factorvae_batches(encoder, spec, cfg.factorvae_batches, cfg.factorvae_batch_size, &mut fv_rng)?;
    let fv = factorvae_score(&batches, spec.n_r())?;

    let points = betavae_points(encoder, spec, cfg.betavae_points, cfg.betavae_pairs_per_point, &mut bv_rng)?;
    let bv = betavae_score(&points, spec.n_r(), &cfg.classifier)?;

    let drawn: Vec<_>;
    let records = match records {
        Some(r) => r,
        None => {
            drawn = (0..cfg.samples).map(|_| sample_record(spec, &mut sample_rng)).collect();
            &drawn
        }
    };
    let v = encoder.encode(records)?;
    let dci = dci_score(&v, records, &cfg.boosting)?;
    let mig = mig_score(&v, records)?;

    Ok(MetricReport {
        factorvae: fv.score,
        dci: dci.score,
        betavae: bv,
        mig: mig.score,
        factorvae_degenerate_batches: fv.degenerate_batches,
        betavae_zero_norm: points.zero_norm,
        dci_per_column: dci.per_column,
        mig_per_factor: mig.per_factor,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::grid;
    use std::collections::HashMap;

    fn spec() -> FactorSpec {
        FactorSpec::default()
    }

    fn codebook(n_f: usize, seed: u64) -> FillerCodebook {
        FillerCodebook::random(6, n_f, 1.0, &mut SeededRng::new(seed)).unwrap()
    }

    /// The full grid repeated `copies` times: exactly balanced factors.
    fn balanced(copies: usize) -> Vec<FactorRecord> {
        let g = grid(&spec());
        (0..copies).flat_map(|_| g.iter().cloned()).collect()
    }

    fn entropy_oracle<K: core::hash::Hash + Eq>(xs: impl Iterator<Item = K>) -> f64 {
        let mut counts = HashMap::new();
        let mut n = 0.0;
        for x in xs {
            *counts.entry(x).or_insert(0.0) += 1.0;
            n += 1.0;
        }
        counts.values().map(|c: &f64| -(c / n) * (c / n).ln()).sum()
    }

    #[test]
    fn categorical_variance_matches_one_hot_variance() {
        assert_eq!(categorical_variance([0, 0, 1, 1].into_iter()), 0.5);
        assert_eq!(categorical_variance([3, 3, 3].into_iter()), 0.0);
        assert_eq!(
            categorical_variance([0, 1, 2, 2].into_iter()),
            categorical_variance([9, 4, 7, 7].into_iter())
        );
    }

    #[test]
    fn factorvae_perfect_code_scores_one() {
        let mut enc = OracleEncoder::new(codebook(4, 0), &spec()).unwrap();
        let b = factorvae_batches(&mut enc, &spec(), 200, 32, &mut SeededRng::new(1)).unwrap();
        assert_eq!(factorvae_score(&b, 3).unwrap().score, 1.0);
    }

    #[test]
    fn factorvae_two_roles_alternating() {
        let batches: Vec<_> = (0..20)
            .map(|t| {
                let k = t % 2;
                let v = (0..4)
                    .map(|s| if k == 0 { vec![1, s] } else { vec![s, 2] })
                    .collect();
                VoteBatch { fixed_factor: k, v }
            })
            .collect();
        let r = factorvae_score(&batches, 2).unwrap();
        assert_eq!(r.score, 1.0);
        assert_eq!(r.votes, vec![vec![5, 0], vec![0, 5]]);
    }

    #[test]
    fn factorvae_random_code_is_near_chance() {
        let mut enc = IndependentEncoder::new(codebook(4, 0), 3, 7);
        let b = factorvae_batches(&mut enc, &spec(), 500, 32, &mut SeededRng::new(2)).unwrap();
        let s = factorvae_score(&b, 3).unwrap().score;
        // 250 held-out batches: 3σ of a binomial at p = 1/3 is about 0.09.
        assert!((s - 1.0 / 3.0).abs() < 0.09, "{s}");
    }

    #[test]
    fn factorvae_flags_constant_batches() {
        let batches = vec![
            VoteBatch {
                fixed_factor: 0,
                v: vec![vec![1, 1], vec![1, 1]],
            };
            4
        ];
        let r = factorvae_score(&batches, 2).unwrap();
        assert_eq!(r.degenerate_batches, 4);
        assert_eq!(r.score, 1.0);
    }

    #[test]
    fn dci_one_to_one_code_is_exactly_one() {
        let records = balanced(3);
        let v: Vec<_> = records.iter().map(|a| a.0.clone()).collect();
        let r = dci_score(&v, &records, &BoostingConfig::default()).unwrap();
        assert!((r.score - 1.0).abs() < 1e-9, "{r:?}");
    }

    #[test]
    fn dci_on_copies_of_one_factor_matches_closed_form() {
        // Two factors, the second a copy of the first, and two columns that
        // both copy the first factor. All importance for both factors lands
        // on column 0, so P_0 = [1/2, 1/2] and D = 1 − ln 2 / ln 2 = 0.
        let records: Vec<_> = (0..200).map(|s| FactorRecord(vec![s % 4, s % 4])).collect();
        let v: Vec<_> = records.iter().map(|a| vec![a.0[0], a.0[0]]).collect();
        let r = dci_score(&v, &records, &BoostingConfig::default()).unwrap();
        let p: [f64; 2] = [0.5, 0.5];
        let h: f64 = p.iter().map(|x| -x * x.ln()).sum();
        let expected = 1.0 - h / 2f64.ln();
        assert!((r.score - expected).abs() < 1e-9, "{r:?}");
        assert_eq!(r.column_weight, vec![1.0, 0.0]);
    }

    #[test]
    fn dci_independent_code_is_near_zero() {
        let mut rng = SeededRng::new(4);
        let records: Vec<_> = (0..5000).map(|_| sample_record(&spec(), &mut rng)).collect();
        let mut enc = IndependentEncoder::new(codebook(4, 0), 3, 9);
        let v = enc.encode(&records).unwrap();
        let r = dci_score(&v, &records, &BoostingConfig::default()).unwrap();
        assert!(r.score < 0.1, "{r:?}");
    }

    #[test]
    fn dci_rejects_small_samples() {
        let records = grid(&spec());
        let v: Vec<_> = records.iter().map(|a| a.0.clone()).collect();
        assert!(dci_score(&v, &records, &BoostingConfig::default()).is_err());
    }

    #[test]
    fn cosine_of_identical_pair_is_all_ones() {
        let cb = codebook(5, 1);
        let (d, zero) = cosine_features(&cb, &[0, 3, 4], &[0, 3, 4]);
        assert_eq!(zero, 0);
        for x in d {
            assert!((x - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn cosine_with_zero_filler_is_zero_and_flagged() {
        let mut e = codebook(3, 1).embeddings().clone();
        for a in 0..e.rows() {
            e[(a, 2)] = 0.0;
        }
        let cb = FillerCodebook::new(e).unwrap();
        let (d, zero) = cosine_features(&cb, &[2, 0], &[1, 0]);
        assert_eq!(d[0], 0.0);
        assert_eq!(zero, 1);
    }

    #[test]
    fn betavae_perfect_code_is_separable() {
        let mut enc = OracleEncoder::new(codebook(4, 3), &spec()).unwrap();
        let pts = betavae_points(&mut enc, &spec(), 300, 32, &mut SeededRng::new(5)).unwrap();
        for (f, &k) in pts.features.iter().zip(&pts.labels) {
            assert_eq!(f[k], 1.0);
        }
        let s = betavae_score(&pts, 3, &ClassifierConfig::default()).unwrap();
        assert!(s >= 0.99, "{s}");
    }

    #[test]
    fn betavae_uninformative_features_are_near_chance() {
        let mut rng = SeededRng::new(6);
        let labels: Vec<usize> = (0..2000).map(|_| rng.below(3)).collect();
        let pts = BetaVaePoints {
            features: vec![vec![0.5, 0.5, 0.5]; 2000],
            labels,
            zero_norm: 0,
        };
        let s = betavae_score(&pts, 3, &ClassifierConfig::default()).unwrap();
        assert!((s - 1.0 / 3.0).abs() < 0.05, "{s}");
    }

    #[test]
    fn mutual_information_matches_entropy_identity() {
        let mut rng = SeededRng::new(8);
        let x: Vec<usize> = (0..500).map(|_| rng.below(4)).collect();
        let y: Vec<usize> = x.iter().map(|&a| (a + rng.below(2)) % 5).collect();
        let oracle = entropy_oracle(x.iter()) + entropy_oracle(y.iter())
            - entropy_oracle(x.iter().zip(&y));
        assert!((mutual_information(&x, &y) - oracle).abs() < 1e-12);
        assert!((entropy(&x) - entropy_oracle(x.iter())).abs() < 1e-12);
    }

    #[test]
    fn mig_perfect_code_is_exactly_one() {
        let records = balanced(3);
        let v: Vec<_> = records.iter().map(|a| a.0.clone()).collect();
        let r = mig_score(&v, &records).unwrap();
        assert!((r.score - 1.0).abs() < 1e-9, "{r:?}");
    }

    #[test]
    fn mig_duplicate_column_cancels() {
        let records = balanced(3);
        let v: Vec<_> = records.iter().map(|a| vec![a.0[0], a.0[0], a.0[1], a.0[2]]).collect();
        let r = mig_score(&v, &records).unwrap();
        assert_eq!(r.per_factor[0], Some(0.0));
        assert!((r.per_factor[1].unwrap() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn mig_independent_code_is_near_zero() {
        let mut rng = SeededRng::new(10);
        let records: Vec<_> = (0..10_000).map(|_| sample_record(&spec(), &mut rng)).collect();
        let mut enc = IndependentEncoder::new(codebook(4, 0), 3, 11);
        let v = enc.encode(&records).unwrap();
        assert!(mig_score(&v, &records).unwrap().score <= 0.05);
    }

    #[test]
    fn mig_skips_constant_factors() {
        let records: Vec<_> = (0..120).map(|s| FactorRecord(vec![s % 3, 0])).collect();
        let v: Vec<_> = records.iter().map(|a| vec![a.0[0], 1]).collect();
        let r = mig_score(&v, &records).unwrap();
        assert_eq!(r.per_factor[1], None);
        assert!((r.score - 1.0).abs() < 1e-9);
    }

    #[test]
    fn index_representation_range_check() {
        assert!(IndexRepresentation::new(vec![vec![0, 3]], 4).is_ok());
        assert!(IndexRepresentation::new(vec![vec![0, 4]], 4).is_err());
        assert!(IndexRepresentation::new(vec![vec![0], vec![0, 1]], 4).is_err());
    }
}
