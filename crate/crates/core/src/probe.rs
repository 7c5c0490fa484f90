//! Factor-regression probes on learned representations.
//!
//! An MLP regresses the factor values (rescaled to `[0, 1]`) from either the
//! soft TPR `z` or its quantized counterpart `ψ*`. Reports give held-out R²
//! per training-set size and the sample-efficiency ratio `r2(n)/r2(all)`.

use alloc::vec;
use alloc::vec::Vec;

use crate::autodiff::{adam_step, backward, AdamConfig, ParamStore, Tape};
use crate::dataset::{Dataset, FactorRecord, FactorSpec, Renderer};
use crate::error::{invalid, Result};
use crate::linalg::{DenseMatrix, DenseVector};
use crate::metrics::{evaluate, MetricReport, MetricsConfig, ModelEncoder};
use crate::model::{Mlp, SoftTprAutoencoder};
use crate::rng::SeededRng;

/// Probes below this full-data R² get no sample-efficiency ratio.
pub const EFFICIENCY_MIN_R2: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum InputKind {
    SoftTpr,
    ExplicitTpr,
}

impl InputKind {
    pub fn name(self) -> &'static str {
        match self {
            InputKind::SoftTpr => "soft_tpr",
            InputKind::ExplicitTpr => "explicit_tpr",
        }
    }
}

/// Widths of the three sampled probe layers; the two middle layers take the
/// representation's dimension.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ProbeWidths {
    pub d1: usize,
    pub d2: usize,
    pub d3: usize,
}

impl ProbeWidths {
    pub fn hidden(&self, input_dim: usize) -> [usize; 5] {
        [self.d1, self.d2, input_dim, input_dim, self.d3]
    }
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields, default))]
pub struct ProbeConfig {
    /// Inclusive range `d1` and `d2` are drawn from.
    pub d12_range: (usize, usize),
    /// Inclusive range `d3` is drawn from.
    pub d3_range: (usize, usize),
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub input_kind: InputKind,
    /// Restricted training-set sizes for the efficiency ratio.
    pub train_sizes: Vec<usize>,
    /// Size of the full training set.
    pub train_samples: usize,
    pub test_samples: usize,
    #[cfg_attr(feature = "serde", serde(skip))]
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            d12_range: (32, 64),
            d3_range: (16, 32),
            lr: 1e-4,
            epochs: 100,
            batch_size: 32,
            input_kind: InputKind::SoftTpr,
            train_sizes: vec![100, 250],
            train_samples: 1000,
            test_samples: 500,
            seed: 0,
        }
    }
}

impl ProbeConfig {
    pub fn validate(&self) -> Result<()> {
        let (a, b) = self.d12_range;
        let (c, d) = self.d3_range;
        if a == 0 || c == 0 || a > b || c > d {
            return Err(invalid("probe width ranges must be positive and ordered"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) || self.batch_size == 0 {
            return Err(invalid("probe lr and batch_size must be positive"));
        }
        if self.train_sizes.iter().any(|&n| n < 2 || n > self.train_samples) {
            return Err(invalid("probe train sizes must lie in [2, train_samples]"));
        }
        if self.test_samples < 2 {
            return Err(invalid("probe needs at least two test samples"));
        }
        Ok(())
    }

    /// The two width configurations used for this seed.
    pub fn sampled_widths(&self) -> [ProbeWidths; 2] {
        let mut rng = SeededRng::new(self.seed);
        let mut draw = |(lo, hi): (usize, usize)| lo + rng.below(hi - lo + 1);
        let mut one = || ProbeWidths {
            d1: draw(self.d12_range),
            d2: draw(self.d12_range),
            d3: draw(self.d3_range),
        };
        [one(), one()]
    }
}

/// A trained regression MLP.
#[derive(Clone, Debug, PartialEq)]
pub struct Probe {
    mlp: Mlp,
    params: ParamStore,
    input_dim: usize,
}

impl Probe {
    pub fn predict(&self, xs: &[DenseVector]) -> Result<Vec<Vec<f64>>> {
        if xs.iter().any(|x| x.len() != self.input_dim) {
            return Err(invalid("probe input dimension mismatch"));
        }
        if xs.is_empty() {
            return Ok(Vec::new());
        }
        let mut tape = Tape::new();
        let x = tape.constant(stack(xs.iter().map(|x| x.as_slice()), self.input_dim)?);
        let y = self.mlp.forward(&mut tape, &self.params, x);
        let y = tape.value(y);
        Ok((0..y.rows()).map(|r| y.row(r).to_vec()).collect())
    }
}

fn stack<'a>(rows: impl Iterator<Item = &'a [f64]>, width: usize) -> Result<DenseMatrix> {
    let mut n = 0;
    let data: Vec<f64> = rows
        .flat_map(|r| {
            n += 1;
            r.iter().copied()
        })
        .collect();
    DenseMatrix::new(n, width, data)
}

/// Fit an MLP by minibatch Adam on the mean squared error.
pub fn fit_probe(
    config: &ProbeConfig,
    widths: ProbeWidths,
    representations: &[DenseVector],
    targets: &[Vec<f64>],
) -> Result<Probe> {
    let n = representations.len();
    if n == 0 || targets.len() != n {
        return Err(invalid("probe needs matching, non-empty inputs and targets"));
    }
    let input_dim = representations[0].len();
    let k = targets[0].len();
    if k == 0
        || representations.iter().any(|x| x.len() != input_dim)
        || targets.iter().any(|t| t.len() != k)
    {
        return Err(invalid("ragged probe inputs or targets"));
    }
    let mut rng = SeededRng::new(config.seed);
    let mut params = ParamStore::new();
    let mlp = Mlp::new(&mut params, "probe", input_dim, &widths.hidden(input_dim), k, &mut rng);
    let adam = AdamConfig {
        lr: config.lr,
        ..AdamConfig::default()
    };
    let mut order: Vec<usize> = (0..n).collect();
    for _ in 0..config.epochs {
        rng.shuffle(&mut order);
        for chunk in order.chunks(config.batch_size) {
            let mut tape = Tape::new();
            let x = tape.constant(stack(chunk.iter().map(|&s| representations[s].as_slice()), input_dim)?);
            let y = tape.constant(stack(chunk.iter().map(|&s| targets[s].as_slice()), k)?);
            let pred = mlp.forward(&mut tape, &params, x);
            let err = tape.sub(pred, y);
            let sq = tape.sum_squares(err);
            let loss = tape.scale(sq, 1.0 / (chunk.len() * k) as f64);
            backward(&tape, loss, &mut params)?;
            adam_step(&mut params, &adam);
        }
    }
    Ok(Probe {
        mlp,
        params,
        input_dim,
    })
}

/// `1 − SS_res/SS_tot`, averaged over target columns.
pub fn r2(predictions: &[Vec<f64>], targets: &[Vec<f64>]) -> Result<f64> {
    let n = targets.len();
    if n < 2 || predictions.len() != n {
        return Err(invalid("r2 needs at least two matching samples"));
    }
    let k = targets[0].len();
    if k == 0 || targets.iter().chain(predictions).any(|t| t.len() != k) {
        return Err(invalid("ragged r2 inputs"));
    }
    let mut total = 0.0;
    for c in 0..k {
        let mean = targets.iter().map(|t| t[c]).sum::<f64>() / n as f64;
        let ss_tot: f64 = targets.iter().map(|t| (t[c] - mean) * (t[c] - mean)).sum();
        if ss_tot == 0.0 {
            return Err(invalid("r2 is undefined for a constant target"));
        }
        let ss_res: f64 = predictions
            .iter()
            .zip(targets)
            .map(|(p, t)| (p[c] - t[c]) * (p[c] - t[c]))
            .sum();
        total += 1.0 - ss_res / ss_tot;
    }
    Ok(total / k as f64)
}

/// Factor values rescaled so each factor spans `[0, 1]`.
pub fn factor_targets(spec: &FactorSpec, records: &[FactorRecord]) -> Vec<Vec<f64>> {
    records
        .iter()
        .map(|a| {
            a.0.iter()
                .zip(&spec.values_per_factor)
                .map(|(&x, &v)| x as f64 / (v - 1) as f64)
                .collect()
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Efficiency {
    pub train_size: usize,
    pub ratio: f64,
    /// Set when `r2(n)` was negative; the ratio is reported unchanged.
    pub negative: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProbeReport {
    pub input_kind: InputKind,
    pub seed: u64,
    pub widths: Vec<ProbeWidths>,
    /// `(n, r2)` for each restricted training size, averaged over widths.
    pub r2_by_size: Vec<(usize, f64)>,
    pub r2_all: f64,
}

impl ProbeReport {
    pub fn efficiency_withheld(&self) -> bool {
        self.r2_all < EFFICIENCY_MIN_R2
    }
}

/// `r2(n)/r2(all)` for every restricted size. Withheld (an error) when
/// `r2(all)` is below 0.5.
pub fn sample_efficiency(report: &ProbeReport) -> Result<Vec<Efficiency>> {
    if report.efficiency_withheld() {
        return Err(invalid("sample efficiency withheld: r2(all) below 0.5"));
    }
    Ok(report
        .r2_by_size
        .iter()
        .map(|&(n, r)| Efficiency {
            train_size: n,
            ratio: r / report.r2_all,
            negative: r < 0.0,
        })
        .collect())
}

/// Fit both width configurations at every training size and average the
/// held-out R².
pub fn probe_representations(
    config: &ProbeConfig,
    train_x: &[DenseVector],
    train_y: &[Vec<f64>],
    test_x: &[DenseVector],
    test_y: &[Vec<f64>],
) -> Result<ProbeReport> {
    config.validate()?;
    if train_x.len() < config.train_samples {
        return Err(invalid("fewer training samples than train_samples"));
    }
    let widths = config.sampled_widths();
    let score = |n: usize| -> Result<f64> {
        let mut sum = 0.0;
        for w in widths {
            let probe = fit_probe(config, w, &train_x[..n], &train_y[..n])?;
            sum += r2(&probe.predict(test_x)?, test_y)?;
        }
        Ok(sum / widths.len() as f64)
    };
    let r2_by_size = config
        .train_sizes
        .iter()
        .map(|&n| Ok((n, score(n)?)))
        .collect::<Result<Vec<_>>>()?;
    Ok(ProbeReport {
        input_kind: config.input_kind,
        seed: config.seed,
        widths: widths.to_vec(),
        r2_by_size,
        r2_all: score(config.train_samples)?,
    })
}

/// Representations of `data` of the requested kind.
pub fn representations(model: &SoftTprAutoencoder, data: &Dataset, kind: InputKind) -> Result<Vec<DenseVector>> {
    Ok(match kind {
        InputKind::SoftTpr => model.encode(&data.observations)?.into_iter().map(|z| z.0).collect(),
        InputKind::ExplicitTpr => model
            .quantize(&data.observations)?
            .into_iter()
            .map(|q| q.tpr.vector)
            .collect(),
    })
}

/// One row of a convergence sweep.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub iteration: usize,
    pub metrics: MetricReport,
    pub probe: ProbeReport,
}

/// Metrics plus soft- and explicit-input probes for every checkpoint. Train
/// and test sets are drawn once from the probe seed and shared.
pub fn convergence_sweep(
    checkpoints: &[&SoftTprAutoencoder],
    renderer: &Renderer,
    probe: &ProbeConfig,
    metrics: &MetricsConfig,
) -> Result<Vec<SweepRow>> {
    if checkpoints.is_empty() {
        return Err(invalid("convergence sweep needs a checkpoint"));
    }
    probe.validate()?;
    let mut rng = SeededRng::new(probe.seed);
    let train = Dataset::sample(renderer, probe.train_samples, &mut rng.fork());
    let test = Dataset::sample(renderer, probe.test_samples, &mut rng.fork());
    convergence_sweep_on(checkpoints, renderer, &train, &test, probe, metrics)
}

/// As [`convergence_sweep`] with caller-supplied train and test sets.
pub fn convergence_sweep_on(
    checkpoints: &[&SoftTprAutoencoder],
    renderer: &Renderer,
    train: &Dataset,
    test: &Dataset,
    probe: &ProbeConfig,
    metrics: &MetricsConfig,
) -> Result<Vec<SweepRow>> {
    if checkpoints.is_empty() {
        return Err(invalid("convergence sweep needs a checkpoint"));
    }
    probe.validate()?;
    let spec = renderer.spec();
    if &train.spec != spec || &test.spec != spec {
        return Err(invalid("probe datasets come from a different factor spec"));
    }
    let train_y = factor_targets(spec, &train.records);
    let test_y = factor_targets(spec, &test.records);
    let mut rows = Vec::with_capacity(2 * checkpoints.len());
    for model in checkpoints {
        let report = evaluate(&mut ModelEncoder::new(model, renderer)?, spec, metrics)?;
        for kind in [InputKind::SoftTpr, InputKind::ExplicitTpr] {
            let cfg = ProbeConfig {
                input_kind: kind,
                ..probe.clone()
            };
            let p = probe_representations(
                &cfg,
                &representations(model, train, kind)?,
                &train_y,
                &representations(model, test, kind)?,
                &test_y,
            )?;
            rows.push(SweepRow {
                iteration: model.iteration,
                metrics: report.clone(),
                probe: p,
            });
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fast() -> ProbeConfig {
        ProbeConfig {
            d12_range: (16, 24),
            d3_range: (8, 12),
            lr: 3e-3,
            epochs: 60,
            train_sizes: vec![50],
            train_samples: 200,
            test_samples: 100,
            ..ProbeConfig::default()
        }
    }

    fn linear_data(n: usize, seed: u64) -> (Vec<DenseVector>, Vec<Vec<f64>>) {
        let mut rng = SeededRng::new(seed);
        let xs: Vec<_> = (0..n)
            .map(|_| DenseVector::new((0..4).map(|_| rng.uniform()).collect()).unwrap())
            .collect();
        let ys = xs
            .iter()
            .map(|x| vec![0.5 * x[0] - 0.25 * x[2] + 0.1, x[1] + x[3]])
            .collect();
        (xs, ys)
    }

    #[test]
    fn r2_hand_values() {
        let t = vec![vec![1.0], vec![2.0], vec![3.0]];
        assert_eq!(r2(&t, &t).unwrap(), 1.0);
        let mean = vec![vec![2.0]; 3];
        assert_eq!(r2(&mean, &t).unwrap(), 0.0);
        // Predictions 3, 2, 1: SS_res = 4 + 0 + 4, SS_tot = 1 + 0 + 1.
        let anti = vec![vec![3.0], vec![2.0], vec![1.0]];
        assert_eq!(r2(&anti, &t).unwrap(), 1.0 - 8.0 / 2.0);
        assert!(r2(&t, &vec![vec![5.0]; 3]).is_err());
        assert!(r2(&t[..1], &t[..1]).is_err());
    }

    #[test]
    fn linear_targets_are_recovered() {
        let (xs, ys) = linear_data(700, 1);
        let cfg = ProbeConfig {
            epochs: 150,
            ..fast()
        };
        let probe = fit_probe(&cfg, cfg.sampled_widths()[0], &xs[..500], &ys[..500]).unwrap();
        let score = r2(&probe.predict(&xs[500..]).unwrap(), &ys[500..]).unwrap();
        assert!(score > 0.99, "{score}");
    }

    #[test]
    fn shuffled_targets_are_not_predictable() {
        let (xs, mut ys) = linear_data(700, 2);
        SeededRng::new(3).shuffle(&mut ys);
        let cfg = fast();
        let probe = fit_probe(&cfg, cfg.sampled_widths()[0], &xs[..500], &ys[..500]).unwrap();
        let score = r2(&probe.predict(&xs[500..]).unwrap(), &ys[500..]).unwrap();
        assert!(score <= 0.1, "{score}");
    }

    #[test]
    fn probe_fit_is_deterministic() {
        let (xs, ys) = linear_data(300, 4);
        let cfg = fast();
        let a = probe_representations(&cfg, &xs[..200], &ys[..200], &xs[200..], &ys[200..]).unwrap();
        let b = probe_representations(&cfg, &xs[..200], &ys[..200], &xs[200..], &ys[200..]).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.widths.len(), 2);
    }

    #[test]
    fn efficiency_arithmetic_and_exclusion() {
        let mut rep = ProbeReport {
            input_kind: InputKind::SoftTpr,
            seed: 0,
            widths: vec![],
            r2_by_size: vec![(100, 0.4), (200, 0.8), (50, -0.2)],
            r2_all: 0.8,
        };
        let e = sample_efficiency(&rep).unwrap();
        assert_eq!(e[0].ratio, 0.5);
        assert_eq!(e[1].ratio, 1.0);
        assert!(e[2].negative && e[2].ratio < 0.0);
        assert!(!e[0].negative);
        rep.r2_all = 0.49;
        assert!(rep.efficiency_withheld());
        assert!(sample_efficiency(&rep).is_err());
    }

    #[test]
    fn sampled_widths_stay_in_range() {
        let cfg = ProbeConfig {
            seed: 17,
            ..ProbeConfig::default()
        };
        for w in cfg.sampled_widths() {
            assert!((32..=64).contains(&w.d1) && (32..=64).contains(&w.d2));
            assert!((16..=32).contains(&w.d3));
        }
        assert_eq!(cfg.sampled_widths(), cfg.sampled_widths());
    }

    #[test]
    fn targets_are_rescaled_to_unit_interval() {
        let spec = FactorSpec {
            values_per_factor: vec![2, 5],
            obs_dim: 8,
            render_seed: 0,
        };
        let t = factor_targets(&spec, &[FactorRecord(vec![1, 2])]);
        assert_eq!(t, vec![vec![1.0, 0.5]]);
    }

    #[test]
    fn one_hot_oracle_is_regressed_accurately() {
        let spec = FactorSpec::default();
        let mut rng = SeededRng::new(5);
        let recs: Vec<_> = (0..800).map(|_| crate::dataset::sample_record(&spec, &mut rng)).collect();
        let xs: Vec<_> = recs
            .iter()
            .map(|a| {
                let mut v = vec![0.0; spec.one_hot_dim()];
                let mut off = 0;
                for (x, n) in a.0.iter().zip(&spec.values_per_factor) {
                    v[off + x] = 1.0;
                    off += n;
                }
                DenseVector::new(v).unwrap()
            })
            .collect();
        let ys = factor_targets(&spec, &recs);
        let cfg = ProbeConfig {
            epochs: 150,
            ..fast()
        };
        let probe = fit_probe(&cfg, cfg.sampled_widths()[0], &xs[..600], &ys[..600]).unwrap();
        let preds = probe.predict(&xs[600..]).unwrap();
        for k in 0..3 {
            let p: Vec<_> = preds.iter().map(|r| vec![r[k]]).collect();
            let t: Vec<_> = ys[600..].iter().map(|r| vec![r[k]]).collect();
            let s = r2(&p, &t).unwrap();
            assert!(s > 0.99, "factor {k}: {s}");
        }
    }
}
