//! Data-parallel kernels against their sequential fallback, plus one full
//! solver step. The `auto` rows follow the `parallel` feature (rayon when
//! enabled); `sequential` forces the in-order path. Both produce bitwise
//! identical results, so the comparison is purely about throughput.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use ndarray::Array2;

use eulerkv::parallel::{grid_sum_mode, matmul_mode, zip_rows_mode, ExecMode};
use eulerkv::{MaterialParams, Scenario, Solver, StoredEnergy, StoredEnergyKind};

const MODES_OF: [(&str, ExecMode); 2] = [
    ("auto", ExecMode::Auto),
    ("sequential", ExecMode::Sequential),
];

/// Smooth deterministic filler in [lo, hi].
fn smooth(shape: (usize, usize), lo: f64, hi: f64, phase: f64) -> Array2<f64> {
    Array2::from_shape_fn(shape, |(i, j)| {
        let s = ((i as f64 * 0.37 + phase).sin() * (j as f64 * 0.23 - phase).cos() + 1.0) / 2.0;
        lo + (hi - lo) * s
    })
}

/// Spectral-transform shaped products: synthesis multiplies an (m, n) table
/// by (n, m) coefficients, at the 3/2-dealiased grid ratio m = 3n/2.
fn bench_matmul(c: &mut Criterion) {
    let mut group = c.benchmark_group("matmul");
    for &n in &[32usize, 64, 128] {
        let m = 3 * n / 2;
        let table = smooth((m, n), -1.0, 1.0, 0.1);
        let coeff = smooth((n, m), -1.0, 1.0, 0.7);
        for (label, mode) in MODES_OF {
            group.bench_with_input(BenchmarkId::new(label, n), &n, |b, _| {
                b.iter(|| matmul_mode(mode, black_box(table.view()), black_box(coeff.view())))
            });
        }
    }
    group.finish();
}

/// The pointwise stress map over four deformation grids, the hottest
/// elementwise kernel of a step.
fn bench_stress_kernel(c: &mut Criterion) {
    let params = MaterialParams::reference();
    let energy = StoredEnergy::new(StoredEnergyKind::RegularizedSvk, &params);
    let mut group = c.benchmark_group("stress_kernel");
    for &m in &[48usize, 96] {
        let fg = [
            smooth((m, m), 0.9, 1.1, 0.0),
            smooth((m, m), -0.1, 0.1, 0.3),
            smooth((m, m), -0.1, 0.1, 0.6),
            smooth((m, m), 0.9, 1.1, 0.9),
        ];
        for (label, mode) in MODES_OF {
            group.bench_with_input(BenchmarkId::new(label, m), &m, |b, _| {
                b.iter(|| {
                    let mut t11 = Array2::zeros((m, m));
                    let mut t12 = Array2::zeros((m, m));
                    let mut t22 = Array2::zeros((m, m));
                    let mut phi = Array2::zeros((m, m));
                    let outs = vec![
                        t11.view_mut(),
                        t12.view_mut(),
                        t22.view_mut(),
                        phi.view_mut(),
                    ];
                    let ins = vec![fg[0].view(), fg[1].view(), fg[2].view(), fg[3].view()];
                    zip_rows_mode(mode, outs, ins, |outs, ins| {
                        for r in 0..ins[0].nrows() {
                            for q in 0..ins[0].ncols() {
                                let f = [
                                    [ins[0][[r, q]], ins[1][[r, q]]],
                                    [ins[2][[r, q]], ins[3][[r, q]]],
                                ];
                                let (p, t) = energy.phi_and_cauchy(f);
                                outs[0][[r, q]] = t[0][0];
                                outs[1][[r, q]] = (t[0][1] + t[1][0]) / 2.0;
                                outs[2][[r, q]] = t[1][1];
                                outs[3][[r, q]] = p;
                            }
                        }
                    });
                    (t11, t12, t22, phi)
                })
            });
        }
    }
    group.finish();
}

fn bench_grid_sum(c: &mut Criterion) {
    let g = smooth((144, 144), -1.0, 1.0, 0.2);
    let mut group = c.benchmark_group("grid_sum");
    for (label, mode) in MODES_OF {
        group.bench_function(label, |b| b.iter(|| grid_sum_mode(mode, black_box(&g))));
    }
    group.finish();
}

/// One IMEX step of the reference scenario (feature-selected execution; build
/// with --no-default-features for the sequential variant).
fn bench_solver_step(c: &mut Criterion) {
    let mut group = c.benchmark_group("solver_step");
    group.sample_size(20);
    for &n in &[16usize, 32] {
        let solver = Solver::new(Scenario::reference(n, 1e-3)).unwrap();
        let s = solver.initial_state().unwrap();
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| {
            b.iter(|| solver.step(black_box(&s)).unwrap())
        });
    }
    group.finish();
}

criterion_group!(
    kernels,
    bench_matmul,
    bench_stress_kernel,
    bench_grid_sum,
    bench_solver_step
);
criterion_main!(kernels);
