use alloc::string::String;
use alloc::vec::Vec;

use super::tape::{backward, NodeId, ParamStore, Tape};
use crate::error::Result;
use crate::rng::SeededRng;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradcheckConfig {
    /// Initial finite-difference step.
    pub h: f64,
    /// Times the step is divided by 10 when a ReLU crosses its kink inside
    /// the stencil, before the coordinate is excluded.
    pub refinements: usize,
    /// Largest accepted relative error.
    pub tol: f64,
    /// Coordinates checked per parameter. Excluded coordinates do not count;
    /// sampling continues until this many are checked or none remain.
    pub samples_per_param: usize,
    /// Relative errors are taken against `max(|analytic|, |numeric|, floor)`.
    pub floor: f64,
    pub seed: u64,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self {
            h: 1e-4,
            refinements: 2,
            tol: 1e-4,
            samples_per_param: 64,
            floor: 1e-6,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CoordinateCheck {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamCoverage {
    pub param: String,
    pub size: usize,
    pub checked: usize,
    pub excluded: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradcheckReport {
    pub checked: usize,
    /// Coordinates skipped because a ReLU input sat on, or crossed, the kink.
    pub excluded: usize,
    pub worst: Option<CoordinateCheck>,
    pub failures: Vec<CoordinateCheck>,
    pub coverage: Vec<ParamCoverage>,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty() && self.checked > 0
    }
}

/// Compare reverse-mode gradients with finite differences.
///
/// `loss_fn` builds the objective on the tape it is given. The first call
/// records every stop-gradient value, straight-through offset and frozen
/// index set; the finite-difference evaluations replay them, so the numeric
/// derivative is that of the objective with stopped values held constant.
///
/// The numeric derivative is `2 D(h) - D(2h)` with `D` the central
/// difference. A norm that is exactly zero at the base point (a pair whose
/// fillers quantize identically) contributes an `O(h)` term to `D`; the
/// combination cancels it and leaves `O(h²)`.
///
/// If the ReLU activation pattern at any stencil point differs from the
/// base point, the step is refined; a coordinate still crossing at the
/// smallest step is excluded (this covers inputs exactly at 0).
///
/// Leaves the analytic gradients in the store's accumulators.
pub fn gradcheck<F>(mut loss_fn: F, store: &mut ParamStore, cfg: &GradcheckConfig) -> Result<GradcheckReport>
where
    F: FnMut(&mut Tape, &ParamStore) -> Result<NodeId>,
{
    store.zero_grad();
    let mut tape = Tape::recording();
    let loss = loss_fn(&mut tape, store)?;
    backward(&tape, loss, store)?;
    let frozen = tape.frozen().cloned().unwrap_or_default();
    let (base_pattern, _) = tape.relu_pattern();
    drop(tape);

    let mut eval = |store: &ParamStore| -> Result<(f64, Vec<bool>)> {
        let mut t = Tape::replaying(frozen.clone());
        let l = loss_fn(&mut t, store)?;
        Ok((t.scalar(l), t.relu_pattern().0))
    };

    let mut rng = SeededRng::new(cfg.seed);
    let mut report = GradcheckReport {
        checked: 0,
        excluded: 0,
        worst: None,
        failures: Vec::new(),
        coverage: Vec::new(),
    };
    let ids: Vec<_> = (0..store.len()).map(super::ParamId).collect();
    for id in ids {
        let n = store.value(id).as_slice().len();
        let mut coords: Vec<usize> = (0..n).collect();
        rng.shuffle(&mut coords);
        let mut cov = ParamCoverage {
            param: store.get(id).name.clone(),
            size: n,
            checked: 0,
            excluded: 0,
        };
        for k in coords {
            if cov.checked == cfg.samples_per_param {
                break;
            }
            let original = store.value(id).as_slice()[k];
            let mut numeric = None;
            let mut h = cfg.h;
            for _ in 0..=cfg.refinements {
                let mut at = |offset: f64| -> Result<Option<f64>> {
                    store.get_mut(id).value.as_mut_slice()[k] = original + offset;
                    let (v, pattern) = eval(store)?;
                    Ok((pattern == base_pattern).then_some(v))
                };
                let points = [at(h)?, at(-h)?, at(2.0 * h)?, at(-2.0 * h)?];
                store.get_mut(id).value.as_mut_slice()[k] = original;
                if let [Some(p1), Some(m1), Some(p2), Some(m2)] = points {
                    let d1 = (p1 - m1) / (2.0 * h);
                    let d2 = (p2 - m2) / (4.0 * h);
                    numeric = Some(2.0 * d1 - d2);
                    break;
                }
                h /= 10.0;
            }
            let Some(numeric) = numeric else {
                report.excluded += 1;
                cov.excluded += 1;
                continue;
            };
            let analytic = store.grad(id).as_slice()[k];
            let denom = analytic.abs().max(numeric.abs()).max(cfg.floor);
            let check = CoordinateCheck {
                param: store.get(id).name.clone(),
                index: k,
                analytic,
                numeric,
                rel_error: (analytic - numeric).abs() / denom,
            };
            report.checked += 1;
            cov.checked += 1;
            if report.worst.as_ref().is_none_or(|w| check.rel_error > w.rel_error) {
                report.worst = Some(check.clone());
            }
            if check.rel_error >= cfg.tol {
                report.failures.push(check);
            }
        }
        report.coverage.push(cov);
    }
    Ok(report)
}
