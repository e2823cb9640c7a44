use std::hint::black_box;
use std::path::PathBuf;

use ccmpc::contraction::{synthesize, verify, ContractionCertificate, SynthesisProblem, VerificationGrid};
use ccmpc::model::{BoxBounds, CoupledTank};
use ccmpc::par::Execution;
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

const MODES: [(&str, Execution); 2] = [
    ("sequential", Execution::Sequential),
    ("parallel", Execution::Parallel),
];

fn shipped_certificate() -> ContractionCertificate {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs/certs/tank_tau1.toml");
    ContractionCertificate::load(&path).expect("shipped certificate")
}

fn verification(c: &mut Criterion) {
    let tank = CoupledTank::default();
    let cert = shipped_certificate();
    let grid = VerificationGrid::dense(&cert, &tank);
    let mut group = c.benchmark_group("verify_41x41x9");
    for (name, mode) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| black_box(verify(&cert, &tank, &grid, 1e-4, mode)))
        });
    }
    group.finish();
}

fn synthesis(c: &mut Criterion) {
    let tank = CoupledTank::default();
    let region = BoxBounds::from_intervals(&[[2.0, 10.0], [2.0, 10.0]]).unwrap();
    let mut group = c.benchmark_group("synthesize_tau10_small");
    group.sample_size(10);
    for (name, mode) in MODES {
        let mut problem = SynthesisProblem::new(&tank, 10.0, 0.3)
            .with_region(region.clone())
            .with_execution(mode);
        problem.state_points = 9;
        problem.input_points = 3;
        problem.random_starts = 3;
        problem.restarts = 1;
        problem.max_iters = 600;
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| black_box(synthesize(&problem)))
        });
    }
    group.finish();
}

criterion_group!(benches, verification, synthesis);
criterion_main!(benches);
