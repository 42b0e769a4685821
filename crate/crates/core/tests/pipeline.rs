use nlfeat::basis::PNorm;
use nlfeat::benchmarks::{run_experiment, Benchmark, BenchmarkId, ExperimentConfig};
use nlfeat::grassmann::{Method, OptimizerConfig};
use nlfeat::regression::CvGrid;

fn small(benchmark: BenchmarkId, methods: Vec<Method>, ntrain: usize, reps: usize) -> ExperimentConfig {
    ExperimentConfig {
        benchmark,
        methods,
        ntrain: vec![ntrain],
        n_test: 200,
        n_realizations: reps,
        basis: Some((PNorm::Finite(1.0), 2.0)),
        optimizer: OptimizerConfig { max_iters: 50, ..Default::default() },
        ..Default::default()
    }
}

#[test]
fn single_realization_quantiles_coincide() {
    let rep = run_experiment(&small(BenchmarkId::U3, vec![Method::Sur], 60, 1)).unwrap();
    assert_eq!(rep.rows.len(), 3);
    let first = &rep.rows[0];
    for r in &rep.rows {
        assert_eq!(r.n_ok, 1);
        assert_eq!((r.j_train, r.j_test, r.err_train, r.err_test), (first.j_train, first.j_test, first.err_train, first.err_test));
    }
    assert_eq!(rep.raw[0].j_train, first.j_train);
}

#[test]
fn u1_surrogate_recovers_exactly() {
    let rep = run_experiment(&small(BenchmarkId::U1, vec![Method::Sur], 250, 1)).unwrap();
    let raw = &rep.raw[0];
    let train = Benchmark::new(BenchmarkId::U1).sample_set(250, raw.train_seed).unwrap();
    assert!(raw.j_train.unwrap() <= 1e-10 * train.mean_grad_sq());
}

#[test]
fn quantiles_ordered_and_bounded_by_gradient_energy() {
    let rep = run_experiment(&small(BenchmarkId::U2, vec![Method::Gli, Method::Sur, Method::Gsi], 50, 3)).unwrap();
    for cell in rep.rows.chunks(3) {
        for w in cell.windows(2) {
            assert!(w[0].j_test <= w[1].j_test && w[0].err_test <= w[1].err_test);
        }
    }
    let bench = Benchmark::new(BenchmarkId::U2);
    for r in &rep.raw {
        assert!(r.error.is_none(), "{:?}", r.error);
        let test = bench.sample_set(200, r.test_seed).unwrap();
        assert!(r.j_test.unwrap() <= test.mean_grad_sq() * (1.0 + 1e-12));
        let rms_u = (test.values().norm_squared() / 200.0).sqrt();
        assert!(r.err_test.unwrap() >= 0.0 && r.err_test.unwrap().is_finite());
        assert!(r.err_train.unwrap() <= 10.0 * rms_u);
    }
}

#[test]
fn failing_cells_are_recorded_not_fatal() {
    let mut cfg = small(BenchmarkId::U3, vec![Method::Sur], 40, 2);
    cfg.cv = CvGrid { log10_ridge: vec![-400.0], ..CvGrid::default() };
    let rep = run_experiment(&cfg).unwrap();
    assert!(rep.raw.iter().all(|r| r.error.is_some()));
    assert!(rep.rows.iter().all(|r| r.n_ok == 0 && r.j_test.is_none()));
    assert!(rep.to_csv().unwrap().contains(",nan,"));
}

#[test]
fn gsi_never_worse_than_its_start() {
    let rep = run_experiment(&small(BenchmarkId::U3, vec![Method::Sur, Method::Gsi], 60, 3)).unwrap();
    let (sur, gsi): (Vec<_>, Vec<_>) = rep.raw.iter().partition(|r| r.method == Method::Sur);
    for (s, g) in sur.iter().zip(gsi) {
        assert_eq!(s.train_seed, g.train_seed);
        assert!(g.j_train.unwrap() <= s.j_train.unwrap() + 1e-12);
    }
}
