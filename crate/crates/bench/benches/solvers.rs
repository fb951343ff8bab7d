use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use shir_core::local::{fit_local_lasso, lambda_max, LocalFit};
use shir_core::sim::{gen_study, Mechanism, SimSetting};
use shir_core::transport::{decode, encode};
use shir_core::{degrees_of_freedom, solve_shir, summarize, LocalSummary, LossFamily, PenaltyConfig, StudyData};

fn desk_studies(p: usize) -> Vec<StudyData> {
    let s = SimSetting {
        p,
        ..SimSetting::desk(Mechanism::Strong)
    };
    (1..=s.sites).map(|m| gen_study(&s, m, 3).unwrap()).collect()
}

fn summaries(studies: &[StudyData]) -> Vec<LocalSummary> {
    let f = LossFamily::Logistic;
    studies
        .iter()
        .map(|s| {
            let lam = 0.1 * lambda_max(s, f).unwrap();
            summarize(s, &LocalFit::fixed(fit_local_lasso(s, f, lam).unwrap(), lam), f).unwrap()
        })
        .collect()
}

fn bench_solver(c: &mut Criterion) {
    let sums = summaries(&desk_studies(100));
    let cfg = PenaltyConfig::new(0.04, 0.5);
    c.bench_function("solve_shir/m4_p100", |b| b.iter(|| solve_shir(black_box(&sums), &cfg).unwrap()));
    let bundle = solve_shir(&sums, &cfg).unwrap();
    c.bench_function("degrees_of_freedom/m4_p100", |b| {
        b.iter(|| degrees_of_freedom(black_box(&sums), &bundle, &cfg).unwrap())
    });
}

fn bench_local(c: &mut Criterion) {
    let study = desk_studies(100).remove(0);
    let lam = 0.05 * lambda_max(&study, LossFamily::Logistic).unwrap();
    c.bench_function("local_lasso/logistic_n400_p100", |b| {
        b.iter(|| fit_local_lasso(black_box(&study), LossFamily::Logistic, lam).unwrap())
    });
}

fn bench_envelope(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let p = 101;
    let a = DMatrix::from_fn(p, p, |_, _| rng.random_range(-1.0..1.0));
    let s = LocalSummary {
        site_id: "site1".into(),
        n: 400,
        p,
        h: &a * a.transpose(),
        g: DVector::from_fn(p, |_, _| rng.random_range(-1.0..1.0)),
        family: LossFamily::Logistic,
        lambda_m: 0.01,
        schema_version: shir_core::local::SCHEMA_VERSION,
    };
    c.bench_function("envelope/encode_p101", |b| b.iter(|| encode(black_box(&s)).unwrap()));
    let bytes = encode(&s).unwrap();
    c.bench_function("envelope/decode_p101", |b| {
        b.iter_batched(|| bytes.clone(), |v| decode(&v).unwrap(), BatchSize::SmallInput)
    });
}

criterion_group!(benches, bench_solver, bench_local, bench_envelope);
criterion_main!(benches);
