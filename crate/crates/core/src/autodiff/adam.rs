use super::tape::ParamStore;
use crate::linalg::FloatExt;

#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields, default))]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One bias-corrected Adam update of every parameter, then zero the
/// gradient accumulators.
pub fn adam_step(store: &mut ParamStore, cfg: &AdamConfig) {
    for p in store.iter_mut() {
        p.step += 1;
        let t = p.step as f64;
        let c1 = 1.0 - libm::pow(cfg.beta1, t);
        let c2 = 1.0 - libm::pow(cfg.beta2, t);
        let values = p.value.as_mut_slice().iter_mut();
        let moments = p
            .first_moment
            .as_mut_slice()
            .iter_mut()
            .zip(p.second_moment.as_mut_slice().iter_mut());
        for ((w, g), (m, v)) in values.zip(p.grad.as_slice()).zip(moments) {
            *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
            *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *w -= cfg.lr * m_hat / (v_hat.sqrt_libm() + cfg.eps);
        }
        p.zero_grad();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{backward, Tape};
    use crate::linalg::DenseMatrix;

    #[test]
    fn zero_gradient_leaves_value() {
        let mut store = ParamStore::new();
        let w = store.add("w", DenseMatrix::new(1, 3, alloc::vec![1.0, -2.0, 0.5]).unwrap());
        adam_step(&mut store, &AdamConfig::default());
        assert_eq!(store.value(w).as_slice(), &[1.0, -2.0, 0.5]);
    }

    #[test]
    fn first_step_moves_by_lr_against_sign() {
        let mut store = ParamStore::new();
        let w = store.add("w", DenseMatrix::zeros(1, 3));
        store.get_mut(w).grad = DenseMatrix::new(1, 3, alloc::vec![0.3, -7.0, 1e-3]).unwrap();
        let cfg = AdamConfig::default();
        adam_step(&mut store, &cfg);
        // m̂/√v̂ = g/|g| at t = 1, up to eps.
        let expected = [-cfg.lr, cfg.lr, -cfg.lr];
        for (got, want) in store.value(w).as_slice().iter().zip(expected) {
            assert!((got - want).abs() < 1e-9, "{got} vs {want}");
        }
        assert!(store.grad(w).as_slice().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn two_steps_decrease_square() {
        let mut store = ParamStore::new();
        let w = store.add("w", DenseMatrix::new(1, 1, alloc::vec![1.0]).unwrap());
        let cfg = AdamConfig {
            lr: 0.1,
            ..AdamConfig::default()
        };
        let mut last = 1.0;
        for _ in 0..2 {
            let mut tape = Tape::new();
            let wn = tape.param(&store, w);
            let loss = tape.sum_squares(wn);
            backward(&tape, loss, &mut store).unwrap();
            adam_step(&mut store, &cfg);
            let f = store.value(w).as_slice()[0].powi(2);
            assert!(f < last);
            last = f;
        }
    }
}
