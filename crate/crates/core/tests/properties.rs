use proptest::prelude::*;
use softtpr_core::dataset::FactorRecord;
use softtpr_core::linalg::{outer_flatten, DenseMatrix, DenseVector};
use softtpr_core::metrics::{dci_score, factorvae_score, mig_score, BoostingConfig, VoteBatch};
use softtpr_core::soft::{quantize_global_bruteforce, quantize_greedy, SoftTpr};
use softtpr_core::tpr::{compose, swap_tprs, unbind, BindingSet, FillerCodebook, RoleMode, RoleSpace};
use softtpr_core::SeededRng;

fn vector(len: usize) -> impl Strategy<Value = DenseVector> {
    prop::collection::vec(-3.0f64..3.0, len).prop_map(|v| DenseVector::new(v).unwrap())
}

/// A random instance: roles of the given mode, a codebook and a matching.
fn instance(seed: u64, mode: u8) -> (RoleSpace, FillerCodebook, BindingSet) {
    let mut rng = SeededRng::new(seed);
    let n_r = 1 + rng.below(4);
    let d_f = 1 + rng.below(5);
    let n_f = 1 + rng.below(6);
    let roles = match mode {
        0 => RoleSpace::semi_orthogonal(n_r + rng.below(3), n_r, &mut rng).unwrap(),
        1 => RoleSpace::identity(n_r).unwrap(),
        _ => {
            let d_r = n_r + rng.below(3);
            let m = DenseMatrix::new(d_r, n_r, (0..d_r * n_r).map(|_| rng.normal()).collect()).unwrap();
            RoleSpace::general(m).unwrap()
        }
    };
    let fillers = FillerCodebook::random(d_f, n_f, 1.0, &mut rng).unwrap();
    let m = BindingSet::new((0..n_r).map(|_| rng.below(n_f)).collect());
    (roles, fillers, m)
}

proptest! {
    #[test]
    fn outer_product_is_bilinear(f1 in vector(3), f2 in vector(3), r in vector(4), a in -2.0f64..2.0, b in -2.0f64..2.0) {
        let lhs = outer_flatten(&f1.scale(a).add(&f2.scale(b)), &r).unwrap();
        let rhs = outer_flatten(&f1, &r).unwrap().scale(a).add(&outer_flatten(&f2, &r).unwrap().scale(b));
        prop_assert!(lhs.sub(&rhs).norm_inf() < 1e-12);
        let r2 = r.scale(0.5);
        let lhs = outer_flatten(&f1, &r.add(&r2)).unwrap();
        let rhs = outer_flatten(&f1, &r).unwrap().add(&outer_flatten(&f1, &r2).unwrap());
        prop_assert!(lhs.sub(&rhs).norm_inf() < 1e-12);
    }

    #[test]
    fn unbinders_are_dual_to_roles(seed in any::<u64>(), mode in 0u8..3) {
        let (roles, _, _) = instance(seed, mode);
        let g = roles.unbinders().transpose().matmul(roles.embeddings()).unwrap();
        prop_assert!(g.max_abs_diff(&DenseMatrix::identity(roles.n_r())) < 1e-8);
    }

    #[test]
    fn unbinding_recovers_every_filler(seed in any::<u64>(), mode in 0u8..3) {
        let (roles, fillers, m) = instance(seed, mode);
        let t = compose(&roles, &fillers, &m).unwrap();
        for i in 0..roles.n_r() {
            let f = unbind(&roles, &t.vector, i).unwrap();
            prop_assert!(f.sub(&fillers.filler(m.filler_of(i))).norm_inf() < 1e-8);
        }
    }

    #[test]
    fn semi_orthogonal_unbinders_equal_roles(seed in any::<u64>()) {
        let (roles, _, _) = instance(seed, 0);
        prop_assert_eq!(roles.mode(), RoleMode::SemiOrthogonal);
        prop_assert_eq!(roles.unbinders(), roles.embeddings());
    }

    #[test]
    fn swapping_twice_restores_both(seed in any::<u64>()) {
        let (roles, fillers, m) = instance(seed, 0);
        let mut rng = SeededRng::new(seed ^ 1);
        let m2 = BindingSet::new((0..roles.n_r()).map(|_| rng.below(fillers.n_f())).collect());
        let i = rng.below(roles.n_r());
        let (a, b) = swap_tprs(&roles, &fillers, &m, &m2, i).unwrap();
        let (c, d) = swap_tprs(&roles, &fillers, &a.matching, &b.matching, i).unwrap();
        prop_assert_eq!(c.matching, m);
        prop_assert_eq!(d.matching, m2);
    }

    #[test]
    fn greedy_matches_global_on_semi_orthogonal_roles(seed in any::<u64>(), noise in 0.0f64..2.0) {
        let (roles, fillers, _) = instance(seed, 0);
        let mut rng = SeededRng::new(seed ^ 2);
        let dim = fillers.d_f() * roles.d_r();
        let z = SoftTpr(DenseVector::new((0..dim).map(|_| noise * rng.normal()).collect()).unwrap());
        let greedy = quantize_greedy(&roles, &fillers, &z).unwrap();
        let global = quantize_global_bruteforce(&roles, &fillers, &z).unwrap();
        prop_assert_eq!(greedy.tpr.matching, global.matching);
    }

    #[test]
    fn exact_tpr_quantizes_to_itself(seed in any::<u64>(), mode in 0u8..3) {
        let (roles, fillers, m) = instance(seed, mode);
        let t = compose(&roles, &fillers, &m).unwrap();
        let q = quantize_greedy(&roles, &fillers, &SoftTpr(t.vector.clone())).unwrap();
        prop_assert_eq!(&q.tpr.matching, &m);
        prop_assert!(q.residual < 1e-8);
    }

    #[test]
    fn identity_roles_give_concatenated_fillers(seed in any::<u64>()) {
        let (roles, fillers, m) = instance(seed, 1);
        let t = compose(&roles, &fillers, &m).unwrap();
        let concat: Vec<f64> = (0..roles.n_r())
            .flat_map(|i| fillers.filler(m.filler_of(i)).into_vec())
            .collect();
        prop_assert_eq!(t.vector.as_slice(), &concat[..]);
    }
}

/// Relabel filler indices role by role with the given permutations.
fn relabel(v: &[Vec<usize>], perms: &[Vec<usize>]) -> Vec<Vec<usize>> {
    v.iter()
        .map(|row| row.iter().enumerate().map(|(i, &j)| perms[i][j]).collect())
        .collect()
}

fn permutation(n: usize, rng: &mut SeededRng) -> Vec<usize> {
    let mut p: Vec<usize> = (0..n).collect();
    rng.shuffle(&mut p);
    p
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn index_metrics_ignore_filler_relabeling(seed in any::<u64>()) {
        let mut rng = SeededRng::new(seed);
        let n_f = 6;
        // A noisy code: each column copies a factor, sometimes replaced by noise.
        let records: Vec<FactorRecord> = (0..150)
            .map(|_| FactorRecord((0..3).map(|_| rng.below(4)).collect()))
            .collect();
        let v: Vec<Vec<usize>> = records
            .iter()
            .map(|a| (0..3).map(|i| if rng.uniform() < 0.3 { rng.below(n_f) } else { a.0[(i + 1) % 3] }).collect())
            .collect();
        let perms: Vec<_> = (0..3).map(|_| permutation(n_f, &mut rng)).collect();
        let w = relabel(&v, &perms);

        let cfg = BoostingConfig::default();
        prop_assert_eq!(dci_score(&v, &records, &cfg).unwrap().score, dci_score(&w, &records, &cfg).unwrap().score);
        prop_assert_eq!(mig_score(&v, &records).unwrap().score, mig_score(&w, &records).unwrap().score);

        let batches: Vec<VoteBatch> = (0..30)
            .map(|b| VoteBatch { fixed_factor: b % 3, v: v[b * 5..b * 5 + 5].to_vec() })
            .collect();
        let relabeled: Vec<VoteBatch> = batches
            .iter()
            .map(|b| VoteBatch { fixed_factor: b.fixed_factor, v: relabel(&b.v, &perms) })
            .collect();
        prop_assert_eq!(factorvae_score(&batches, 3).unwrap(), factorvae_score(&relabeled, 3).unwrap());
    }
}
