use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use odetwin::analogue::{map_weights, noise_sweep, NoiseSweepSpec};
use odetwin::dynamics::generate_reference;
use odetwin::experiment::{sweep_metric, ExperimentConfig};
use odetwin::nn::init_params;
use odetwin::par::{map_range, Parallelism};
use odetwin::training::{train_hp_twin, HpTwinSetup, TrainConfig};

const MODES: [(&str, Parallelism); 2] = [("sequential", Parallelism::Sequential), ("parallel", Parallelism::Parallel)];

fn hp_noise_sweep(c: &mut Criterion) {
    let cfg = ExperimentConfig::hp_default();
    let reference = generate_reference(&cfg.system, &cfg.reference).unwrap();
    let params = init_params(&cfg.shape, 1).unwrap();
    let base = cfg.hardware.spec(3);
    let sweep = NoiseSweepSpec { repeats: 4, ..NoiseSweepSpec::default() };
    let mut group = c.benchmark_group("hp_noise_sweep");
    group.sample_size(10);
    for (name, mode) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| {
                noise_sweep(&base, &sweep, mode, |s| map_weights(&params, s), |p, seed| {
                    sweep_metric(&cfg, &reference, p, seed)
                })
                .unwrap()
            })
        });
    }
    group.finish();
}

fn hp_multi_seed_training(c: &mut Criterion) {
    let cfg = ExperimentConfig::hp_default();
    let reference = generate_reference(&cfg.system, &cfg.reference).unwrap();
    let odetwin::dynamics::System::Hp { drive, .. } = cfg.system else { unreachable!() };
    let setup = HpTwinSetup { shape: cfg.shape.clone(), drive };
    let train = TrainConfig { epochs: 20, ..cfg.train };
    let mut group = c.benchmark_group("hp_multi_seed_training");
    group.sample_size(10);
    for (name, mode) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| {
                map_range(4, mode, |seed| {
                    train_hp_twin(&reference, &setup, &TrainConfig { seed: seed as u64, ..train }).unwrap().params
                })
            })
        });
    }
    group.finish();
}

criterion_group!(benches, hp_noise_sweep, hp_multi_seed_training);
criterion_main!(benches);
