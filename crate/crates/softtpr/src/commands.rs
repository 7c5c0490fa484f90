//! The subcommands, as library functions. Each takes an already validated
//! [`RunConfig`] and writes its artifacts under an output directory.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use softtpr_core::autodiff::{gradcheck as check_gradients, GradcheckConfig, GradcheckReport};
use softtpr_core::dataset::{sample_pair, Dataset, Renderer};
use softtpr_core::metrics::{evaluate_on, ModelEncoder};
use softtpr_core::model::{train as train_model, PairBatch, SoftTprAutoencoder};
use softtpr_core::probe::{convergence_sweep, convergence_sweep_on, SweepRow};
use softtpr_core::soft::{quantize_greedy, QuantizationResult, SoftTpr};
use softtpr_core::tpr::{compose, BindingSet};
use softtpr_core::{DenseVector, SeededRng};

use crate::checkpoint::Checkpoint;
use crate::config::RunConfig;
use crate::datafile::write_dataset;
use crate::error::{CliError, Result};
use crate::report::{probe_table, MetricSummary};

pub const DATASET_FILE: &str = "dataset.csv";
pub const FINAL_CHECKPOINT: &str = "checkpoint.bin";
pub const TRAIN_LOG: &str = "train_log.csv";
pub const METRICS_FILE: &str = "metrics.txt";
pub const PROBE_FILE: &str = "probe.csv";
pub const CONFIG_ECHO: &str = "config.toml";

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(CliError::io(dir))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(CliError::io(path))
}

pub fn checkpoint_name(iteration: usize) -> String {
    format!("checkpoint_{iteration:06}.bin")
}

/// Render `data.samples` random rows (the full grid when 0) to
/// `out/dataset.csv`.
pub fn generate_data(cfg: &RunConfig, out: &Path) -> Result<PathBuf> {
    let renderer = Renderer::new(&cfg.data.spec())?;
    let data = if cfg.data.samples == 0 {
        Dataset::full_grid(&renderer)
    } else {
        Dataset::sample(&renderer, cfg.data.samples, &mut SeededRng::new(cfg.seed))
    };
    create_dir(out)?;
    let path = out.join(DATASET_FILE);
    write_dataset(&path, &data)?;
    Ok(path)
}

pub struct TrainOutcome {
    pub model: SoftTprAutoencoder,
    /// Scheduled snapshots, in iteration order.
    pub checkpoints: Vec<PathBuf>,
    pub final_checkpoint: PathBuf,
}

/// Train from scratch. Writes scheduled snapshots, the final model, a
/// per-step loss log and an echo of the config.
pub fn train(cfg: &RunConfig, out: &Path) -> Result<TrainOutcome> {
    let renderer = Renderer::new(&cfg.data.spec())?;
    let mut model = SoftTprAutoencoder::new(cfg.model_config(), cfg.data.obs_dim)?;
    create_dir(out)?;
    write_text(&out.join(CONFIG_ECHO), &cfg.to_toml_string()?)?;

    let mut log = String::from("iteration,total,recon,vq,swap_recon,ce_dq,form_penalty,form_distance\n");
    let snapshots = train_model(&mut model, &renderer, &cfg.train, |it, o| {
        writeln!(
            log,
            "{it},{},{},{},{},{},{},{}",
            o.total, o.recon, o.vq, o.swap_recon, o.ce_dq, o.form_penalty, o.form_distance
        )
        .expect("writing to a String");
    })?;
    write_text(&out.join(TRAIN_LOG), &log)?;

    let mut checkpoints = Vec::with_capacity(snapshots.len());
    for s in snapshots {
        let path = out.join(checkpoint_name(s.iteration));
        Checkpoint::new(cfg.clone(), s.model).save(&path)?;
        checkpoints.push(path);
    }
    let final_checkpoint = out.join(FINAL_CHECKPOINT);
    Checkpoint::new(cfg.clone(), model.clone()).save(&final_checkpoint)?;
    Ok(TrainOutcome {
        model,
        checkpoints,
        final_checkpoint,
    })
}

/// Parse vectors, one per non-empty line, separated by commas or whitespace.
pub fn parse_vectors(text: &str) -> std::result::Result<Vec<DenseVector>, String> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'))
        .map(|(n, l)| {
            let values = l
                .split(|c: char| c == ',' || c.is_whitespace())
                .filter(|s| !s.is_empty())
                .map(|s| s.parse::<f64>().map_err(|e| format!("line {}: `{s}`: {e}", n + 1)))
                .collect::<std::result::Result<Vec<_>, _>>()?;
            DenseVector::new(values).map_err(|e| format!("line {}: {e}", n + 1))
        })
        .collect()
}

/// What the quantize input lines hold.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum QuantizeInput {
    /// Vectors in TPR space (length `d_f * d_r`).
    Tpr,
    /// Observations, encoded before quantizing.
    Observation,
}

pub fn quantize(model: &SoftTprAutoencoder, inputs: &[DenseVector], kind: QuantizeInput) -> Result<Vec<QuantizationResult>> {
    match kind {
        QuantizeInput::Observation => Ok(model.quantize(inputs)?),
        QuantizeInput::Tpr => {
            let codebook = model.codebook()?;
            let dim = model.config().tpr_dim();
            inputs
                .iter()
                .map(|v| {
                    if v.len() != dim {
                        return Err(CliError::Config(format!(
                            "input has length {}, the model's TPR space has dimension {dim}",
                            v.len()
                        )));
                    }
                    Ok(quantize_greedy(model.roles(), &codebook, &SoftTpr(v.clone()))?)
                })
                .collect()
        }
    }
}

/// The exact TPR of a 0-based matching under the model's roles and codebook.
pub fn compose_tpr(model: &SoftTprAutoencoder, matching: &[usize]) -> Result<DenseVector> {
    let m = BindingSet::new(matching.to_vec());
    let cfg = model.config();
    m.validate(cfg.n_r, cfg.n_f)?;
    Ok(compose(model.roles(), &model.codebook()?, &m)?.vector)
}

fn check_dataset(cfg: &RunConfig, data: &Dataset) -> Result<()> {
    if data.spec != cfg.data.spec() {
        return Err(CliError::Config("dataset spec differs from the run's data section".into()));
    }
    Ok(())
}

/// Metrics of one checkpoint. Given a dataset, DCI and MIG use its rows and
/// the reconstruction error on it is reported as well.
pub fn eval_metrics(cfg: &RunConfig, model: &SoftTprAutoencoder, data: Option<&Dataset>) -> Result<MetricSummary> {
    let spec = cfg.data.spec();
    let renderer = Renderer::new(&spec)?;
    let mut encoder = ModelEncoder::new(model, &renderer)?;
    let (records, recon) = match data {
        Some(d) => {
            check_dataset(cfg, d)?;
            if d.len() < 2 {
                return Err(CliError::Config("dataset needs at least two rows".into()));
            }
            (Some(d.records.as_slice()), Some((model.reconstruction_mse(d)?, d.observation_variance())))
        }
        None => (None, None),
    };
    let metrics = evaluate_on(&mut encoder, &spec, &cfg.metrics_config(), records)?;
    Ok(MetricSummary {
        iteration: model.iteration,
        metrics,
        reconstruction_mse: recon.map(|r| r.0),
        observation_variance: recon.map(|r| r.1),
    })
}

/// Probe every checkpoint with soft and explicit TPR inputs. A dataset, if
/// given, supplies the probe rows: the first `probe.train_samples` train,
/// the rest test.
pub fn eval_probe(cfg: &RunConfig, models: &[&SoftTprAutoencoder], data: Option<&Dataset>) -> Result<Vec<SweepRow>> {
    let renderer = Renderer::new(&cfg.data.spec())?;
    let probe = cfg.probe_config();
    let metrics = cfg.metrics_config();
    let rows = match data {
        None => convergence_sweep(models, &renderer, &probe, &metrics)?,
        Some(d) => {
            check_dataset(cfg, d)?;
            let n = probe.train_samples;
            if d.len() < n + 2 {
                return Err(CliError::Config(format!(
                    "dataset has {} rows; the probe needs {n} train rows plus at least 2 test rows",
                    d.len()
                )));
            }
            let split = |range: std::ops::Range<usize>| Dataset {
                spec: d.spec.clone(),
                records: d.records[range.clone()].to_vec(),
                observations: d.observations[range].to_vec(),
            };
            let train = split(0..n);
            let test = split(n..d.len());
            convergence_sweep_on(models, &renderer, &train, &test, &probe, &metrics)?
        }
    };
    Ok(rows)
}

/// Finite-difference check of the full weakly supervised objective on one
/// batch drawn from the run seed, at a freshly initialized model.
pub fn gradcheck(cfg: &RunConfig, check: &GradcheckConfig) -> Result<GradcheckReport> {
    let renderer = Renderer::new(&cfg.data.spec())?;
    let mut model = SoftTprAutoencoder::new(cfg.model_config(), cfg.data.obs_dim)?;
    let mut rng = SeededRng::new(cfg.seed);
    let pairs: Vec<_> = (0..cfg.train.batch_size)
        .map(|_| sample_pair(&renderer, &mut rng))
        .collect();
    let batch = PairBatch::from_pairs(&pairs)?;
    let arch = &model.arch;
    let report = check_gradients(
        |tape, store| Ok(arch.weakly_supervised_objective(tape, store, &batch)?.total),
        &mut model.params,
        &GradcheckConfig {
            seed: cfg.seed,
            ..*check
        },
    )?;
    Ok(report)
}

pub fn gradcheck_text(report: &GradcheckReport) -> String {
    let mut out = format!(
        "checked={}\nexcluded={}\nfailures={}\n",
        report.checked,
        report.excluded,
        report.failures.len()
    );
    if let Some(w) = &report.worst {
        writeln!(
            out,
            "worst={}[{}] analytic={} numeric={} rel_error={}",
            w.param, w.index, w.analytic, w.numeric, w.rel_error
        )
        .expect("writing to a String");
    }
    for c in &report.coverage {
        writeln!(out, "param={} size={} checked={} excluded={}", c.param, c.size, c.checked, c.excluded)
            .expect("writing to a String");
    }
    out
}

pub fn write_metrics(out: &Path, summary: &MetricSummary) -> Result<PathBuf> {
    create_dir(out)?;
    let path = out.join(METRICS_FILE);
    write_text(&path, &summary.to_kv())?;
    Ok(path)
}

pub fn write_probe(out: &Path, rows: &[SweepRow]) -> Result<PathBuf> {
    create_dir(out)?;
    let path = out.join(PROBE_FILE);
    write_text(&path, &probe_table(rows))?;
    Ok(path)
}
