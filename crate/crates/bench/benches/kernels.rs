use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use cropstage_core::hmm::{HmmConfig, HmmEnsemble};
use cropstage_core::layers::Mode;
use cropstage_core::preprocess::{build_dataset, sg_linear, Dataset, SgParams};
use cropstage_core::sim::{make_benchmark, SimConfig};
use cropstage_core::{Arch, Batch, Model, Sample, StageEstimator, Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small_dataset() -> Dataset {
    let cfg = SimConfig {
        years: (2010..2016).collect(),
        test_years: vec![2015],
        fields_per_asd: vec![4; 3],
        ..SimConfig::default()
    };
    let bench = make_benchmark(&cfg).expect("simulate");
    build_dataset(&bench.inputs(), &bench.split, &SgParams::default()).expect("dataset")
}

fn matmul(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let a = Tensor::from_fn(32 * 39, 128, |_, _| rng.random_range(-1.0..1.0));
    let b = Tensor::from_fn(128, 512, |_, _| rng.random_range(-1.0..1.0));
    c.bench_function("matmul 1248x128x512 fwd+bwd", |bch| {
        bch.iter(|| {
            let mut t = Tape::new();
            let x = t.variable(a.clone());
            let w = t.variable(b.clone());
            let y = t.matmul(x, w).unwrap();
            let s = t.sum(y);
            t.backward(s).unwrap();
        })
    });
}

fn networks(c: &mut Criterion) {
    let ds = small_dataset();
    let items: Vec<&Sample> = ds.samples.iter().take(32).collect();
    let batch = Batch::from_samples(&items).unwrap();
    let mut g = c.benchmark_group("batch of 32");
    g.sample_size(10);
    for arch in [Arch::Dense, Arch::Sequential, Arch::Dgnn] {
        let model = Model::build(arch, 3).unwrap();
        g.bench_function(format!("{} predict", arch.name()), |b| b.iter(|| model.predict(&batch).unwrap()));
        g.bench_function(format!("{} loss+grad", arch.name()), |b| {
            b.iter(|| model.loss_and_grads(&batch, Mode::Train, 5, 32).unwrap())
        });
    }
    g.finish();
}

fn preprocessing(c: &mut Criterion) {
    let y: Vec<f64> = (0..300).map(|i| (i as f64 / 30.0).sin()).collect();
    c.bench_function("sg_linear n=300", |b| b.iter(|| sg_linear(&y, 5)));

    let cfg = SimConfig { years: vec![2012], test_years: vec![], fields_per_asd: vec![6; 3], ..SimConfig::default() };
    let bench = make_benchmark(&cfg).unwrap();
    let mut g = c.benchmark_group("dataset");
    g.sample_size(10);
    g.bench_function("build one year, 3 districts", |b| {
        b.iter_batched(|| bench.inputs(), |inp| build_dataset(&inp, &bench.split, &SgParams::default()).unwrap(), BatchSize::LargeInput)
    });
    g.finish();
}

fn hmm(c: &mut Criterion) {
    let ds = small_dataset();
    let cfg = HmmConfig { runs: 4, ensemble: 2, validation_years: 1, ..HmmConfig::default() };
    let model = HmmEnsemble::fit_dataset(&ds, &ds.split.train_years, &cfg).unwrap();
    let items: Vec<&Sample> = ds.samples_for_years(&ds.split.test_years);
    let mut g = c.benchmark_group("hmm");
    g.sample_size(10);
    g.bench_function("estimate test year", |b| b.iter(|| StageEstimator::estimate(&model, &items).unwrap()));
    g.finish();
}

criterion_group!(benches, matmul, networks, preprocessing, hmm);
criterion_main!(benches);
