//! Soft TPRs: arbitrary points of the TPR space, read through their nearest
//! explicit TPR.

use alloc::vec::Vec;

use crate::error::{invalid, Error, Result};
use crate::linalg::{DenseMatrix, DenseVector};
use crate::tpr::{compose, unbind, BindingSet, ExplicitTpr, FillerCodebook, RoleSpace};

/// Largest `n_f^n_r` the exhaustive search will enumerate.
pub const BRUTE_FORCE_LIMIT: u128 = 1_000_000;

#[derive(Clone, Debug, PartialEq)]
pub struct SoftTpr(pub DenseVector);

impl SoftTpr {
    pub fn as_vector(&self) -> &DenseVector {
        &self.0
    }
}

impl From<DenseVector> for SoftTpr {
    fn from(v: DenseVector) -> Self {
        SoftTpr(v)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct QuantizationResult {
    /// `ψ*_tpr`
    pub tpr: ExplicitTpr,
    /// `f̃_i = Ψ u_i`, one per role.
    pub soft_fillers: Vec<DenseVector>,
    /// `‖z − ψ*_tpr‖₂`
    pub residual: f64,
    /// `‖ε_i‖₂ = ‖f̃_i − ξ_F(f_m(i))‖₂`
    pub per_role_errors: Vec<f64>,
}

fn check_dims(roles: &RoleSpace, fillers: &FillerCodebook, z: &SoftTpr) -> Result<()> {
    if z.0.len() != fillers.d_f() * roles.d_r() {
        return Err(invalid("soft TPR length differs from d_f * d_r"));
    }
    Ok(())
}

/// Greedy quantization: unbind every role, snap each soft filler to its
/// nearest codebook entry (ties to the lowest index) and rebuild the TPR.
pub fn quantize_greedy(
    roles: &RoleSpace,
    fillers: &FillerCodebook,
    z: &SoftTpr,
) -> Result<QuantizationResult> {
    check_dims(roles, fillers, z)?;
    let soft_fillers = (0..roles.n_r())
        .map(|i| unbind(roles, &z.0, i))
        .collect::<Result<Vec<_>>>()?;
    let matching = BindingSet::new(soft_fillers.iter().map(|f| fillers.nearest(f)).collect());
    let per_role_errors = soft_fillers
        .iter()
        .zip(matching.as_slice())
        .map(|(f, &j)| f.distance(&fillers.filler(j)))
        .collect();
    let tpr = compose(roles, fillers, &matching)?;
    let residual = z.0.distance(&tpr.vector);
    Ok(QuantizationResult {
        tpr,
        soft_fillers,
        residual,
        per_role_errors,
    })
}

/// Exhaustive minimizer of `‖z − compose(m)‖` over all `n_f^n_r` matchings.
/// Ties go to the lexicographically smallest matching.
pub fn quantize_global_bruteforce(
    roles: &RoleSpace,
    fillers: &FillerCodebook,
    z: &SoftTpr,
) -> Result<ExplicitTpr> {
    check_dims(roles, fillers, z)?;
    let (n_r, n_f) = (roles.n_r(), fillers.n_f());
    let mut required: u128 = 1;
    for _ in 0..n_r {
        required = required.saturating_mul(n_f as u128);
        if required > BRUTE_FORCE_LIMIT {
            return Err(Error::Capacity {
                required,
                limit: BRUTE_FORCE_LIMIT,
            });
        }
    }
    let mut current = alloc::vec![0usize; n_r];
    let mut best: Option<(f64, ExplicitTpr)> = None;
    loop {
        let t = compose(roles, fillers, &BindingSet::new(current.clone()))?;
        let obj = crate::linalg::sq_distance(z.0.as_slice(), t.vector.as_slice());
        if best.as_ref().is_none_or(|(b, _)| obj < *b) {
            best = Some((obj, t));
        }
        // Odometer with role 0 as the most significant digit.
        let mut k = n_r;
        loop {
            if k == 0 {
                return Ok(best.expect("at least one matching enumerated").1);
            }
            k -= 1;
            current[k] += 1;
            if current[k] < n_f {
                break;
            }
            current[k] = 0;
        }
    }
}

/// Value and gradient routing of the VQ codebook/commitment loss
/// `(1/n_r) Σ_i ‖sg(e_i) − f̃_i‖² + β‖e_i − sg(f̃_i)‖²` with `e_i = ξ_F(f_m(i))`.
#[derive(Clone, Debug, PartialEq)]
pub struct VqLoss {
    pub value: f64,
    /// Gradient of the first term; reaches the encoder through `f̃_i`.
    pub grad_soft_fillers: Vec<DenseVector>,
    /// Gradient of the commitment term; reaches only the codebook
    /// (shape `d_f x n_f`, like the codebook).
    pub grad_codebook: DenseMatrix,
}

pub fn vq_loss(
    fillers: &FillerCodebook,
    soft_fillers: &[DenseVector],
    matching: &BindingSet,
    beta: f64,
) -> Result<VqLoss> {
    if beta < 0.0 {
        return Err(invalid("beta must be non-negative"));
    }
    let n_r = soft_fillers.len();
    matching.validate(n_r, fillers.n_f())?;
    if soft_fillers.iter().any(|f| f.len() != fillers.d_f()) {
        return Err(invalid("soft filler length differs from d_f"));
    }
    let scale = 1.0 / n_r as f64;
    let mut value = 0.0;
    let mut grad_soft_fillers = Vec::with_capacity(n_r);
    let mut grad_codebook = DenseMatrix::zeros(fillers.d_f(), fillers.n_f());
    for (f, &j) in soft_fillers.iter().zip(matching.as_slice()) {
        let e = fillers.filler(j);
        let diff = f.sub(&e);
        let sq = diff.dot(&diff);
        value += scale * (sq + beta * sq);
        grad_soft_fillers.push(diff.scale(2.0 * scale));
        for a in 0..fillers.d_f() {
            grad_codebook[(a, j)] -= 2.0 * beta * scale * diff[a];
        }
    }
    Ok(VqLoss {
        value,
        grad_soft_fillers,
        grad_codebook,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeededRng;
    use alloc::vec;

    fn v(xs: &[f64]) -> DenseVector {
        DenseVector::from_slice(xs).unwrap()
    }

    #[test]
    fn exact_tpr_is_a_fixed_point() {
        let mut rng = SeededRng::new(2);
        let roles = RoleSpace::semi_orthogonal(5, 3, &mut rng).unwrap();
        let fillers = FillerCodebook::random(4, 6, 1.0, &mut rng).unwrap();
        let t = compose(&roles, &fillers, &BindingSet::new(vec![5, 0, 3])).unwrap();
        let q = quantize_greedy(&roles, &fillers, &SoftTpr(t.vector.clone())).unwrap();
        assert_eq!(q.tpr.matching, t.matching);
        assert!(q.residual < 1e-12);
        assert!(q.per_role_errors.iter().all(|&e| e < 1e-12));
        let g = quantize_global_bruteforce(&roles, &fillers, &SoftTpr(t.vector.clone())).unwrap();
        assert_eq!(g.matching, t.matching);
    }

    #[test]
    fn vq_loss_hand_value_and_gradient() {
        let fillers = FillerCodebook::from_fillers(&[v(&[3.0, 4.0])]).unwrap();
        let soft = [v(&[0.0, 0.0])];
        let out = vq_loss(&fillers, &soft, &BindingSet::new(vec![0]), 0.5).unwrap();
        assert_eq!(out.value, 37.5);
        assert_eq!(out.grad_soft_fillers[0].as_slice(), &[-6.0, -8.0]);
        // Commitment gradient wrt the codebook entry: 2β(e − f̃) = [3, 4].
        assert_eq!(out.grad_codebook.column(0).as_slice(), &[3.0, 4.0]);
    }

    #[test]
    fn vq_gradient_matches_central_differences() {
        // Stop-gradients are constants in the finite-difference objective:
        // wrt f̃ only the first term varies, wrt e only the second.
        let e = v(&[3.0, 4.0]);
        let f = v(&[0.0, 0.0]);
        let fillers = FillerCodebook::from_fillers(core::slice::from_ref(&e)).unwrap();
        let out = vq_loss(&fillers, core::slice::from_ref(&f), &BindingSet::new(vec![0]), 0.5).unwrap();
        let h = 1e-5;
        for a in 0..2 {
            let term1 = |x: &DenseVector| x.sub(&e).dot(&x.sub(&e));
            let mut fp = f.clone();
            fp[a] += h;
            let mut fm = f.clone();
            fm[a] -= h;
            let fd = (term1(&fp) - term1(&fm)) / (2.0 * h);
            assert!((fd - out.grad_soft_fillers[0][a]).abs() < 1e-6);

            let term2 = |y: &DenseVector| 0.5 * y.sub(&f).dot(&y.sub(&f));
            let mut ep = e.clone();
            ep[a] += h;
            let mut em = e.clone();
            em[a] -= h;
            let fd = (term2(&ep) - term2(&em)) / (2.0 * h);
            assert!((fd - out.grad_codebook[(a, 0)]).abs() < 1e-6);
        }
    }

    #[test]
    fn vq_loss_zero_at_codebook() {
        let fillers = FillerCodebook::from_fillers(&[v(&[1.0, 2.0]), v(&[0.5, -1.0])]).unwrap();
        let soft = [fillers.filler(1), fillers.filler(0)];
        let out = vq_loss(&fillers, &soft, &BindingSet::new(vec![1, 0]), 0.5).unwrap();
        assert_eq!(out.value, 0.0);
    }

    #[test]
    fn negative_beta_rejected() {
        let fillers = FillerCodebook::from_fillers(&[v(&[1.0])]).unwrap();
        assert!(vq_loss(&fillers, &[v(&[0.0])], &BindingSet::new(vec![0]), -1.0).is_err());
    }

    #[test]
    fn brute_force_guard() {
        let roles = RoleSpace::identity(7).unwrap();
        let fillers = FillerCodebook::random(1, 8, 1.0, &mut SeededRng::new(0)).unwrap();
        let z = SoftTpr(DenseVector::zeros(7));
        assert!(matches!(
            quantize_global_bruteforce(&roles, &fillers, &z),
            Err(Error::Capacity { .. })
        ));
    }

    #[test]
    fn identity_roles_quantize_blockwise() {
        let mut rng = SeededRng::new(4);
        let roles = RoleSpace::identity(2).unwrap();
        let fillers = FillerCodebook::random(3, 5, 1.0, &mut rng).unwrap();
        let z: Vec<f64> = (0..6).map(|_| rng.normal()).collect();
        let g = quantize_global_bruteforce(&roles, &fillers, &SoftTpr(v(&z))).unwrap();
        // Block-wise nearest neighbour by direct search.
        for (b, block) in z.chunks(3).enumerate() {
            let mut best = (f64::INFINITY, 0);
            for j in 0..5 {
                let d: f64 = (0..3).map(|a| (block[a] - fillers.filler(j)[a]).powi(2)).sum();
                if d < best.0 {
                    best = (d, j);
                }
            }
            assert_eq!(g.matching.filler_of(b), best.1);
        }
    }
}
