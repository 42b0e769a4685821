use nalgebra::{DMatrix, DVector, SymmetricEigen};
use proptest::prelude::*;

use nlfeat::basis::{build_index_set, Family, FeatureBasis, PNorm};
use nlfeat::benchmarks::{format_samples_csv, parse_samples_csv};
use nlfeat::deviation::empirical_quantile;
use nlfeat::geometry::{orthogonal_projector, project_complement, smallest_singular_value, split_w_v, DEFAULT_RANK_TOL};
use nlfeat::regression::{fold_indices, krr_fit};
use nlfeat::surrogate::{
    assemble_h, estimate_j, estimate_l1, estimate_lmj, format_coeffs, orthonormalize, parse_coeffs, SampleJacobians,
    SampleSet,
};

fn vec_strategy(d: usize) -> impl Strategy<Value = DVector<f64>> {
    prop::collection::vec(-10.0f64..10.0, d).prop_map(DVector::from_vec)
}

fn mat_strategy(d: usize, m: usize) -> impl Strategy<Value = DMatrix<f64>> {
    prop::collection::vec(-3.0f64..3.0, d * m).prop_map(move |v| DMatrix::from_vec(d, m, v))
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
}

fn perp(v: &DVector<f64>, x: &DVector<f64>) -> DVector<f64> {
    project_complement(&DMatrix::from_column_slice(v.len(), 1, v.as_slice()), x, DEFAULT_RANK_TOL).unwrap()
}

/// Random points on `(-1,1)^3` with random gradients, basis of total degree 3.
fn random_data(seed: u64, n: usize) -> (FeatureBasis, SampleJacobians) {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let d = 3;
    let x = DMatrix::from_fn(n, d, |_, _| rng.random_range(-1.0..1.0));
    let du = DMatrix::from_fn(n, d, |_, _| rng.random_range(-1.0..1.0));
    let u = DVector::zeros(n);
    let samples = SampleSet::new(x, u, du, seed).unwrap();
    let basis = FeatureBasis::new(
        build_index_set(d, PNorm::Finite(1.0), 3.0).unwrap(),
        vec![Family::Legendre { a: -1.0, b: 1.0 }],
    )
    .unwrap();
    let data = SampleJacobians::new(&basis, &samples).unwrap();
    (basis, data)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn norm_projection_identity((v, w) in (2usize..16).prop_flat_map(|d| (vec_strategy(d), vec_strategy(d)))) {
        prop_assume!(v.norm() > 1e-6 && w.norm() > 1e-6);
        let lhs = w.norm_squared() * perp(&w, &v).norm_squared();
        let rhs = v.norm_squared() * perp(&v, &w).norm_squared();
        prop_assert!((lhs - rhs).abs() <= 1e-10 * v.norm_squared() * w.norm_squared());
    }

    #[test]
    fn splitting_identity(
        (wm, w, v) in (2usize..10).prop_flat_map(|d| (1usize..d.min(4)).prop_flat_map(move |m| {
            (mat_strategy(d, m - 1), vec_strategy(d), vec_strategy(d))
        }))
    ) {
        let d = w.len();
        let mut full = wm.clone().insert_column(wm.ncols(), 0.0);
        full.set_column(wm.ncols(), &w);
        prop_assume!(smallest_singular_value(&full).unwrap() > 1e-3);
        let direct = project_complement(&full, &v, DEFAULT_RANK_TOL).unwrap();
        let pw = project_complement(&wm, &w, DEFAULT_RANK_TOL).unwrap();
        let pv = project_complement(&wm, &v, DEFAULT_RANK_TOL).unwrap();
        let nested = perp(&pw, &pv);
        let (ws, vs) = split_w_v(&full, &v, wm.ncols(), DEFAULT_RANK_TOL).unwrap();
        let via_split = perp(&ws, &vs);
        let scale = v.norm().max(1e-300);
        prop_assert_eq!(direct.len(), d);
        prop_assert!((&direct - &nested).norm() <= 1e-9 * scale);
        prop_assert!((&direct - &via_split).norm() <= 1e-9 * scale);
    }

    #[test]
    fn w_norm_sandwich(jac in (2usize..10).prop_flat_map(|d| (1usize..=d.min(4)).prop_flat_map(move |m| mat_strategy(d, m)))) {
        let smin = smallest_singular_value(&jac).unwrap();
        prop_assume!(smin > 1e-3);
        let u = DVector::zeros(jac.nrows());
        for j in 0..jac.ncols() {
            let (w, _) = split_w_v(&jac, &u, j, DEFAULT_RANK_TOL).unwrap();
            let ww = w.norm_squared();
            let col = jac.column(j).norm_squared();
            prop_assert!(smin * smin <= ww * (1.0 + 1e-12));
            prop_assert!(ww <= col * (1.0 + 1e-12));
        }
    }

    #[test]
    fn projector_properties(m in (1usize..12).prop_flat_map(|d| (0usize..=d).prop_flat_map(move |k| mat_strategy(d, k))), x in vec_strategy(12)) {
        let p = orthogonal_projector(&m, DEFAULT_RANK_TOL).unwrap();
        let pm = p.matrix();
        let norm = pm.norm().max(1.0);
        prop_assert!((&pm - pm.transpose()).norm() <= 1e-12 * norm);
        prop_assert!((&pm * &pm - &pm).norm() <= 1e-10 * norm);
        prop_assert!((pm.trace() - p.rank() as f64).abs() <= 1e-8);
        let x = x.rows(0, m.nrows()).into_owned();
        let a = p.apply(&x).norm_squared();
        let b = p.apply_complement(&x).norm_squared();
        prop_assert!((a + b - x.norm_squared()).abs() <= 1e-10 * x.norm_squared().max(1e-300));
    }

    #[test]
    fn index_set_invariants(d in 1usize..5, pi in 0usize..5, k in 1u32..5) {
        let p = [PNorm::Finite(0.5), PNorm::Finite(0.8), PNorm::Finite(1.0), PNorm::Finite(2.0), PNorm::Inf][pi];
        let set = build_index_set(d, p, k as f64).unwrap();
        let idx = set.indices();
        for a in idx {
            prop_assert!(a.iter().any(|&v| v > 0));
            let norm = match p {
                PNorm::Inf => *a.iter().max().unwrap() as f64,
                PNorm::Finite(q) => a.iter().map(|&v| (v as f64).powf(q)).sum::<f64>().powf(1.0 / q),
            };
            prop_assert!(norm <= k as f64 + 1e-12);
        }
        for i in 0..d {
            let mut e = vec![0; d];
            e[i] = 1;
            prop_assert!(set.position(&e).is_some());
        }
        for w in idx.windows(2) {
            let (s0, s1): (usize, usize) = (w[0].iter().sum(), w[1].iter().sum());
            prop_assert!(s0 < s1 || (s0 == s1 && w[0] > w[1]));
        }
    }

    #[test]
    fn quantiles_are_monotone(v in prop::collection::vec(-1e3f64..1e3, 1..200)) {
        let q50 = empirical_quantile(&v, 0.5).unwrap();
        let q90 = empirical_quantile(&v, 0.9).unwrap();
        let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(q50 <= q90 && q90 <= max);
        prop_assert!(v.contains(&q50));
    }

    #[test]
    fn folds_partition(n in 2usize..300, folds in 2usize..12, seed in any::<u64>()) {
        prop_assume!(n >= folds);
        let f = fold_indices(n, folds, seed).unwrap();
        prop_assert_eq!(f.len(), folds);
        let mut all: Vec<usize> = f.iter().flatten().copied().collect();
        all.sort();
        prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        let sizes: Vec<usize> = f.iter().map(|b| b.len()).collect();
        prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        prop_assert_eq!(f, fold_indices(n, folds, seed).unwrap());
    }

    #[test]
    fn krr_residual_when_well_conditioned(
        z in prop::collection::vec(-2.0f64..2.0, 2..60),
        lg in -2.0f64..1.0,
        lr in -4.0f64..0.0,
    ) {
        let n = z.len();
        let zm = DMatrix::from_column_slice(n, 1, &z);
        let u = DVector::from_iterator(n, z.iter().map(|v| v.sin()));
        let (gamma, ridge) = (10f64.powf(lg), 10f64.powf(lr));
        let model = krr_fit(&zm, &u, gamma, ridge).unwrap();
        let mut k = nlfeat::regression::kernel_matrix(&zm, &zm, gamma);
        for i in 0..n {
            k[(i, i)] += ridge;
        }
        prop_assert!((k * &model.dual_coeffs - &u).norm() <= 1e-8 * u.norm().max(1e-300));
    }

    #[test]
    fn coefficient_text_round_trip(g in (1usize..20).prop_flat_map(|k| (1usize..4).prop_flat_map(move |m| mat_strategy(k, m)))) {
        prop_assert_eq!(parse_coeffs(&format_coeffs(&g)).unwrap(), g);
    }

    #[test]
    fn sample_csv_round_trip(x in (1usize..5).prop_flat_map(|d| (1usize..8).prop_flat_map(move |n| mat_strategy(n, 2 * d + 1)))) {
        let d = (x.ncols() - 1) / 2;
        let s = SampleSet::new(
            x.columns(0, d).into_owned(),
            x.column(d).into_owned(),
            x.columns(d + 1, d).into_owned(),
            7,
        ).unwrap();
        prop_assert_eq!(parse_samples_csv(&format_samples_csv(&s), 7).unwrap(), s);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn j_is_invariant_under_reparametrization(seed in 0u64..1000, a in mat_strategy(2, 2)) {
        prop_assume!(a.determinant().abs() > 1e-2);
        let (_, data) = random_data(seed, 40);
        let g = DMatrix::from_fn(data.n_features(), 2, |i, j| ((i * 7 + j * 3 + seed as usize) % 11) as f64 - 5.0);
        let j1 = estimate_j(&data, &g, DEFAULT_RANK_TOL).unwrap();
        let j2 = estimate_j(&data, &(&g * &a), DEFAULT_RANK_TOL).unwrap();
        prop_assert!(rel(j1, j2) <= 1e-10);
    }

    #[test]
    fn l1_scales_quadratically(seed in 0u64..1000, c in -5.0f64..5.0) {
        prop_assume!(c.abs() > 1e-3);
        let (_, data) = random_data(seed, 30);
        let g = DMatrix::from_fn(data.n_features(), 1, |i, _| ((i * 5 + seed as usize) % 7) as f64 - 3.0);
        let l = estimate_l1(&data, &g).unwrap();
        let lc = estimate_l1(&data, &(&g * c)).unwrap();
        prop_assert!(rel(lc, c * c * l) <= 1e-12);
    }

    #[test]
    fn alternative_expressions_of_j(seed in 0u64..1000) {
        let (_, data) = random_data(seed, 30);
        // single feature: J = mean ||grad g||^-2 ||grad u||^2 ||perp_{grad u} grad g||^2
        let g1 = DMatrix::from_fn(data.n_features(), 1, |i, _| ((i * 3 + seed as usize) % 5) as f64 - 2.0);
        let mut alt = 0.0;
        for i in 0..data.len() {
            let dg = &data.jacobians()[i] * g1.column(0);
            let du = &data.gradients()[i];
            prop_assume!(dg.norm() > 1e-8);
            alt += du.norm_squared() * perp(du, &dg).norm_squared() / dg.norm_squared();
        }
        alt /= data.len() as f64;
        prop_assert!(rel(estimate_j(&data, &g1, DEFAULT_RANK_TOL).unwrap(), alt) <= 1e-9);
        // several features: J = mean ||perp_w v||^2 for every j
        let g = DMatrix::from_fn(data.n_features(), 2, |i, j| ((i * 7 + j * 5 + seed as usize) % 9) as f64 - 4.0);
        let j = estimate_j(&data, &g, DEFAULT_RANK_TOL).unwrap();
        for col in 0..2 {
            let mut s = 0.0;
            for i in 0..data.len() {
                let jac = &data.jacobians()[i] * &g;
                let (w, v) = split_w_v(&jac, &data.gradients()[i], col, DEFAULT_RANK_TOL).unwrap();
                s += perp(&w, &v).norm_squared();
            }
            prop_assert!(rel(j, s / data.len() as f64) <= 1e-9);
            prop_assert!(estimate_lmj(&data, &g, col, DEFAULT_RANK_TOL).unwrap() >= 0.0);
        }
    }

    #[test]
    fn surrogate_matrix_is_psd_and_orthonormalization_holds(seed in 0u64..1000) {
        let (_, data) = random_data(seed, 50);
        let mats = assemble_h(&data).unwrap();
        for m in [&mats.h, &mats.h1, &mats.h2] {
            prop_assert!((m - m.transpose()).norm() <= 1e-10 * m.norm().max(1e-300));
        }
        let eig = SymmetricEigen::new(mats.h.clone()).eigenvalues;
        let top = eig.iter().map(|v| v.abs()).fold(0.0, f64::max);
        prop_assert!(eig.min() >= -1e-8 * top);
        let r = data.gram().unwrap();
        let g = DMatrix::from_fn(data.n_features(), 2, |i, j| ((i * 3 + j * 11 + seed as usize) % 13) as f64 - 6.0);
        let gn = orthonormalize(&g, &r).unwrap();
        prop_assert!((gn.transpose() * r.matrix() * &gn - DMatrix::identity(2, 2)).norm() <= 1e-8);
    }
}
