use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use srghn::env::{CartPoleConfig, EnvConfig, SwitchMode};
use srghn::evolution::{evaluate_policy, mean_pairwise_distance};
use srghn::ghn::{generate_policy_params, BasisRef};
use srghn::{init_ghn, make_offspring, FixedBasis, GhnConfig, GhnModel, Purpose, RngStream};

fn setup() -> (std::sync::Arc<GhnModel>, FixedBasis, srghn::Ghn) {
    let model = GhnModel::new(GhnConfig::cartpole()).unwrap();
    let basis = FixedBasis::draw(&model, 0);
    let ghn = init_ghn(&model, BasisRef(basis.digest()), &RngStream::new(0, 0, 0, Purpose::Init));
    (model, basis, ghn)
}

fn hot_paths(c: &mut Criterion) {
    let (model, basis, ghn) = setup();

    c.bench_function("generate_policy_params", |b| {
        b.iter(|| generate_policy_params(black_box(&ghn), model.policy_graph()).unwrap())
    });

    let mut id = 1;
    c.bench_function("make_offspring", |b| {
        b.iter(|| {
            id += 1;
            make_offspring(black_box(&ghn), &basis, &RngStream::new(0, 1, id, Purpose::Mutation), id, 1).unwrap()
        })
    });

    let factory = EnvConfig::Cartpole(CartPoleConfig::default()).factory().unwrap();
    let policy = ghn.policy();
    c.bench_function("cartpole_rollout", |b| {
        b.iter(|| evaluate_policy(black_box(&policy), &factory, SwitchMode::Normal, 0, 0, 0, 1))
    });

    let genomes: Vec<Vec<f64>> = (0..30)
        .map(|i| {
            let (kid, _) = make_offspring(&ghn, &basis, &RngStream::new(0, 1, i, Purpose::Mutation), i, 1).unwrap();
            kid.flat().values().to_vec()
        })
        .collect();
    c.bench_function("mean_pairwise_distance_30", |b| {
        b.iter(|| mean_pairwise_distance(black_box(&genomes)).unwrap())
    });
}

criterion_group!(benches, hot_paths);
criterion_main!(benches);
