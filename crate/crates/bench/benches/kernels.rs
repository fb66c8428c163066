//! Numeric kernel benchmarks: the matrix exponential, the Kronecker-solve
//! Lyapunov path, the LDL^T semidefinite check, and the frequency sweep.

use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use proofblocks_core::certificates::{
    bounded_real_certificate, hinf_norm_estimate, solve_lyapunov_continuous,
};
use proofblocks_core::extraction::{StateSpace, TimeDomain};
use proofblocks_core::numkernel::{expm, semidefinite_check, Matrix};

fn random_hurwitz(seed: u64, n: usize) -> Matrix {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut m = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            m[(i, j)] = rng.gen_range(-1.0..1.0);
        }
    }
    let shift = m.inf_norm() + 0.5;
    for i in 0..n {
        m[(i, i)] -= shift;
    }
    m
}

fn di_ss() -> StateSpace {
    StateSpace {
        a: Matrix::from_rows(&[vec![0.0, 1.0], vec![-1.0, -1.0]]).unwrap(),
        b: Matrix::from_rows(&[vec![0.0], vec![1.0]]).unwrap(),
        c: Matrix::from_rows(&[vec![1.0, 0.0]]).unwrap(),
        d: Matrix::zeros(1, 1),
        state_names: vec!["x1".into(), "x2".into()],
        input_bindings: vec!["w".into()],
        output_bindings: vec!["y".into()],
        initial_state: vec![0.0, 0.0],
        time: TimeDomain::Continuous,
    }
}

fn bench_expm(c: &mut Criterion) {
    let mut group = c.benchmark_group("expm");
    for n in [2usize, 4, 8] {
        let a = random_hurwitz(3, n);
        group.bench_with_input(BenchmarkId::from_parameter(n), &a, |b, a| {
            b.iter(|| expm(black_box(a)).unwrap())
        });
    }
    group.finish();
}

fn bench_lyapunov(c: &mut Criterion) {
    let mut group = c.benchmark_group("lyapunov_continuous");
    for n in [2usize, 4, 8] {
        let a = random_hurwitz(5, n);
        let q = Matrix::identity(n);
        group.bench_with_input(BenchmarkId::from_parameter(n), &(a, q), |b, (a, q)| {
            b.iter(|| solve_lyapunov_continuous(black_box(a), black_box(q)).unwrap())
        });
    }
    group.finish();
}

fn bench_semidefinite(c: &mut Criterion) {
    let n = 8;
    let a = random_hurwitz(7, n);
    let p = solve_lyapunov_continuous(&a, &Matrix::identity(n))
        .unwrap()
        .p;
    c.bench_function("semidefinite_check_8", |b| {
        b.iter(|| semidefinite_check(black_box(&p), 1e-8).unwrap())
    });
}

fn bench_hinf(c: &mut Criterion) {
    let ss = di_ss();
    c.bench_function("hinf_norm_estimate_di", |b| {
        b.iter(|| hinf_norm_estimate(black_box(&ss)).unwrap())
    });
}

fn bench_bounded_real(c: &mut Criterion) {
    let ss = di_ss();
    c.bench_function("bounded_real_di", |b| {
        b.iter(|| bounded_real_certificate(black_box(&ss), 1.2).unwrap())
    });
}

criterion_group!(
    benches,
    bench_expm,
    bench_lyapunov,
    bench_semidefinite,
    bench_hinf,
    bench_bounded_real
);
criterion_main!(benches);
