use criterion::{black_box, criterion_group, criterion_main, Criterion};
use maskseg_bench::{phantoms, wave};
use maskseg_core::dice::dice_loss_and_grad;
use maskseg_core::model::build_network;
use maskseg_core::pipeline::{infer_two_stage, train_proposal};
use maskseg_core::{FcnModel, NetworkConfig, PipelineConfig, Tensor};

fn model_step(c: &mut Criterion) {
    let mut model: FcnModel = build_network(NetworkConfig::default()).unwrap();
    let x = wave(&[1, 1, 32, 32, 32]);
    let t = Tensor::from_fn(vec![1, 1, 32, 32, 32], |i| if i % 7 == 0 { 1.0 } else { 0.0 }).unwrap();
    let mut group = c.benchmark_group("model_32");
    group.bench_function("predict", |bench| bench.iter(|| black_box(model.predict(&x).unwrap())));
    group.bench_function("forward_backward", |bench| {
        bench.iter(|| {
            let y = model.forward(&x, true).unwrap();
            let (_, g) = dice_loss_and_grad(&y, &t).unwrap();
            model.backward(&g).unwrap();
        })
    });
    group.finish();
}

fn pipeline(c: &mut Criterion) {
    let data = phantoms(2);
    let config = PipelineConfig { proposal_iterations: 10, ..PipelineConfig::default() };
    let mut group = c.benchmark_group("pipeline");
    group.sample_size(10);
    group.bench_function("train_proposal_10_steps", |bench| {
        bench.iter(|| black_box(train_proposal(&data, &[], &config).unwrap()))
    });
    let model: FcnModel = build_network(NetworkConfig::default()).unwrap();
    group.bench_function("infer_two_stage_96", |bench| {
        // an untrained proposal can come back empty; the timing covers the chain either way
        bench.iter(|| black_box(infer_two_stage(&model, &model, &data[0].volume, &config).ok()))
    });
    group.finish();
}

criterion_group!(benches, model_step, pipeline);
criterion_main!(benches);
