//! Synthetic compositional data with known factors of variation.
//!
//! Each factor (role) takes one of a few discrete values (fillers). An
//! observation is `tanh(W · onehot(a) + b)` for a fixed seeded affine map,
//! checked to be injective over the whole factor grid.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{invalid, Result};
use crate::linalg::{sq_distance, DenseMatrix, DenseVector};
use crate::rng::SeededRng;

/// Minimum pairwise distance between rendered grid points.
pub const INJECTIVITY_MARGIN: f64 = 1e-6;
const MAX_RENDER_ATTEMPTS: u64 = 16;

#[derive(Clone, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields, default))]
pub struct FactorSpec {
    pub values_per_factor: Vec<usize>,
    pub obs_dim: usize,
    pub render_seed: u64,
}

impl Default for FactorSpec {
    fn default() -> Self {
        Self {
            values_per_factor: vec![4, 4, 4],
            obs_dim: 32,
            render_seed: 0,
        }
    }
}

impl FactorSpec {
    pub fn n_r(&self) -> usize {
        self.values_per_factor.len()
    }

    pub fn one_hot_dim(&self) -> usize {
        self.values_per_factor.iter().sum()
    }

    pub fn grid_size(&self) -> usize {
        self.values_per_factor.iter().product()
    }

    pub fn validate(&self) -> Result<()> {
        if self.values_per_factor.is_empty() {
            return Err(invalid("at least one factor is required"));
        }
        if self.values_per_factor.iter().any(|&v| v < 2) {
            return Err(invalid("every factor needs at least 2 values"));
        }
        if self.obs_dim < self.one_hot_dim() {
            return Err(invalid("obs_dim must be at least the sum of factor sizes"));
        }
        Ok(())
    }
}

/// Ground-truth value index of every factor for one observation.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(transparent))]
pub struct FactorRecord(pub Vec<usize>);

impl FactorRecord {
    pub fn validate(&self, spec: &FactorSpec) -> Result<()> {
        if self.0.len() != spec.n_r() {
            return Err(invalid("factor record length differs from number of factors"));
        }
        if self.0.iter().zip(&spec.values_per_factor).any(|(v, n)| v >= n) {
            return Err(invalid("factor value out of range"));
        }
        Ok(())
    }

    pub fn hamming(&self, other: &FactorRecord) -> usize {
        self.0.iter().zip(&other.0).filter(|(a, b)| a != b).count()
    }
}

/// Two observations that agree on every factor except `differing`.
#[derive(Clone, Debug, PartialEq)]
pub struct MatchPair {
    pub x: DenseVector,
    pub x_prime: DenseVector,
    pub a: FactorRecord,
    pub a_prime: FactorRecord,
    pub differing: usize,
}

/// The seeded rendering map of a [`FactorSpec`].
#[derive(Clone, Debug, PartialEq)]
pub struct Renderer {
    spec: FactorSpec,
    weights: DenseMatrix,
    bias: DenseVector,
    seed_used: u64,
}

impl Renderer {
    /// Draw the affine map, retrying with the next seed if two grid points
    /// render closer than [`INJECTIVITY_MARGIN`].
    pub fn new(spec: &FactorSpec) -> Result<Self> {
        spec.validate()?;
        let k = spec.one_hot_dim();
        let sd = 1.0 / libm::sqrt((spec.n_r() + 1) as f64);
        for attempt in 0..MAX_RENDER_ATTEMPTS {
            let seed = spec.render_seed.wrapping_add(attempt);
            let mut rng = SeededRng::new(seed);
            let weights = DenseMatrix::new(
                spec.obs_dim,
                k,
                (0..spec.obs_dim * k).map(|_| sd * rng.normal()).collect(),
            )?;
            let bias = DenseVector::new((0..spec.obs_dim).map(|_| sd * rng.normal()).collect())?;
            let r = Self {
                spec: spec.clone(),
                weights,
                bias,
                seed_used: seed,
            };
            if r.is_injective() {
                return Ok(r);
            }
        }
        Err(invalid("could not find an injective rendering map"))
    }

    pub fn spec(&self) -> &FactorSpec {
        &self.spec
    }

    /// Seed of the accepted map; differs from `render_seed` after collisions.
    pub fn seed_used(&self) -> u64 {
        self.seed_used
    }

    pub fn regenerations(&self) -> u64 {
        self.seed_used.wrapping_sub(self.spec.render_seed)
    }

    pub fn render(&self, a: &FactorRecord) -> Result<DenseVector> {
        a.validate(&self.spec)?;
        Ok(self.render_unchecked(a))
    }

    fn render_unchecked(&self, a: &FactorRecord) -> DenseVector {
        let mut offsets = Vec::with_capacity(a.0.len());
        let mut acc = 0;
        for (v, n) in a.0.iter().zip(&self.spec.values_per_factor) {
            offsets.push(acc + v);
            acc += n;
        }
        let mut out = self.bias.clone();
        for o in 0..self.spec.obs_dim {
            let pre = out[o] + offsets.iter().map(|&c| self.weights[(o, c)]).sum::<f64>();
            out[o] = libm::tanh(pre);
        }
        out
    }

    fn is_injective(&self) -> bool {
        let points: Vec<DenseVector> = grid(&self.spec)
            .iter()
            .map(|a| self.render_unchecked(a))
            .collect();
        let margin = INJECTIVITY_MARGIN * INJECTIVITY_MARGIN;
        for i in 0..points.len() {
            for j in i + 1..points.len() {
                if sq_distance(points[i].as_slice(), points[j].as_slice()) <= margin {
                    return false;
                }
            }
        }
        true
    }
}

/// Every factor assignment, factor 0 varying slowest.
pub fn grid(spec: &FactorSpec) -> Vec<FactorRecord> {
    let mut out = Vec::with_capacity(spec.grid_size());
    let mut cur = vec![0usize; spec.n_r()];
    if spec.n_r() == 0 {
        return out;
    }
    loop {
        out.push(FactorRecord(cur.clone()));
        let mut k = spec.n_r();
        loop {
            if k == 0 {
                return out;
            }
            k -= 1;
            cur[k] += 1;
            if cur[k] < spec.values_per_factor[k] {
                break;
            }
            cur[k] = 0;
        }
    }
}

pub fn sample_record(spec: &FactorSpec, rng: &mut SeededRng) -> FactorRecord {
    FactorRecord(spec.values_per_factor.iter().map(|&n| rng.below(n)).collect())
}

/// Resample factor `i` of `a` uniformly among its other values.
pub fn resample_factor(spec: &FactorSpec, a: &FactorRecord, i: usize, rng: &mut SeededRng) -> FactorRecord {
    let n = spec.values_per_factor[i];
    let mut v = rng.below(n - 1);
    if v >= a.0[i] {
        v += 1;
    }
    let mut b = a.clone();
    b.0[i] = v;
    b
}

/// Match pair: uniform record, uniform differing factor, uniform new value.
pub fn sample_pair(renderer: &Renderer, rng: &mut SeededRng) -> MatchPair {
    let spec = renderer.spec();
    let a = sample_record(spec, rng);
    let differing = rng.below(spec.n_r());
    let a_prime = resample_factor(spec, &a, differing, rng);
    MatchPair {
        x: renderer.render_unchecked(&a),
        x_prime: renderer.render_unchecked(&a_prime),
        a,
        a_prime,
        differing,
    }
}

/// Observations with their ground-truth factors.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub spec: FactorSpec,
    pub records: Vec<FactorRecord>,
    pub observations: Vec<DenseVector>,
}

impl Dataset {
    pub fn empty(spec: FactorSpec) -> Self {
        Self {
            spec,
            records: Vec::new(),
            observations: Vec::new(),
        }
    }

    pub fn full_grid(renderer: &Renderer) -> Self {
        let records = grid(renderer.spec());
        let observations = records.iter().map(|a| renderer.render_unchecked(a)).collect();
        Self {
            spec: renderer.spec().clone(),
            records,
            observations,
        }
    }

    pub fn sample(renderer: &Renderer, n: usize, rng: &mut SeededRng) -> Self {
        let records: Vec<_> = (0..n).map(|_| sample_record(renderer.spec(), rng)).collect();
        let observations = records.iter().map(|a| renderer.render_unchecked(a)).collect();
        Self {
            spec: renderer.spec().clone(),
            records,
            observations,
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Mean per-coordinate variance of the observations.
    pub fn observation_variance(&self) -> f64 {
        let n = self.observations.len();
        if n == 0 {
            return 0.0;
        }
        let d = self.observations[0].len();
        let mut total = 0.0;
        for c in 0..d {
            let mean = self.observations.iter().map(|x| x[c]).sum::<f64>() / n as f64;
            total += self.observations.iter().map(|x| (x[c] - mean) * (x[c] - mean)).sum::<f64>()
                / n as f64;
        }
        total / d as f64
    }
}
