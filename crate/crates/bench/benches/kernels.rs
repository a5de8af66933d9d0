use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use dbm_edge::dbm::{drift, Integrator, NoiseStream, ParticleSystem, Scheme};
use dbm_edge::freeconv::FreeConvolution;
use dbm_edge::stieltjes::stieltjes;
use dbm_edge::{ComplexPoint, FiniteMeasure};

fn spread_system(n: usize) -> ParticleSystem {
    let xs: Vec<f64> = (0..n).map(|k| 2.0 - 4.0 * (k as f64 + 0.5) / n as f64).collect();
    ParticleSystem::new(&xs, 2.0).unwrap()
}

fn kernels(c: &mut Criterion) {
    let sys = spread_system(400);
    c.bench_function("drift_n400", |b| b.iter(|| drift(black_box(&sys)).unwrap()));

    let uniform = FiniteMeasure::atomize_uniform_gauss(-1.0, 0.0, 1.0, 1000).unwrap();
    let z = ComplexPoint::new(-0.3, 0.01);
    c.bench_function("stieltjes_8000_atoms", |b| b.iter(|| stieltjes(black_box(&uniform), black_box(z)).unwrap()));

    let fc = FreeConvolution::new(&uniform, 0.05).unwrap();
    c.bench_function("density_uniform_t005", |b| b.iter(|| fc.density(black_box(-0.5))));
    c.bench_function("stieltjes_fc_near_edge", |b| {
        b.iter(|| fc.stieltjes_fc(black_box(ComplexPoint::new(fc.edge_right() + 1e-3, 1e-3))).unwrap())
    });

    for (name, scheme) in [
        ("step_explicit_n400", Scheme::Explicit),
        ("step_semi_implicit_n400", Scheme::SemiImplicit { h_max: 1.0 / 400.0 }),
    ] {
        let noise = NoiseStream::new(1, 0);
        c.bench_function(name, |b| {
            b.iter_batched(
                || (sys.clone(), Integrator::new(scheme)),
                |(mut s, mut integ)| integ.step(&mut s, 0.01, &noise).unwrap(),
                criterion::BatchSize::SmallInput,
            )
        });
    }
}

criterion_group!(benches, kernels);
criterion_main!(benches);
