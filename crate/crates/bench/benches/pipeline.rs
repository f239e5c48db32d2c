//! Throughput benchmarks for the hot pipeline stages: flow assembly,
//! feature extraction, sequence grouping, and model inference.

use criterion::{criterion_group, criterion_main, BatchSize, Criterion, Throughput};
use rand::Rng;

use snids_core::features::extract_features;
use snids_core::flow::{FlowConfig, FlowTable};
use snids_core::model::{BiAlstm, ModelConfig, SequenceSample};
use snids_core::pipeline::{extract_labeled_flows, sequences_of};
use snids_core::rng::substream;
use snids_core::sequence::SequenceConfig;
use snids_core::synth::{generate, Corpus, DomainPreset, ScenarioSpec};

fn corpus() -> Corpus {
    generate(&ScenarioSpec::small(11, DomainPreset::Base)).unwrap()
}

fn bench_flow_assembly(c: &mut Criterion) {
    let corpus = corpus();
    let config = FlowConfig::default();
    let mut g = c.benchmark_group("flow_assembly");
    g.throughput(Throughput::Elements(corpus.packets.len() as u64));
    g.bench_function("replay_small_corpus", |b| {
        b.iter(|| FlowTable::replay(config, &corpus.packets))
    });
    g.finish();
}

fn bench_feature_extraction(c: &mut Criterion) {
    let corpus = corpus();
    let config = FlowConfig::default();
    let flows = FlowTable::replay(config, &corpus.packets);
    let mut g = c.benchmark_group("feature_extraction");
    g.throughput(Throughput::Elements(flows.len() as u64));
    g.bench_function("all_small_corpus_flows", |b| {
        b.iter(|| {
            flows
                .iter()
                .map(|f| extract_features(f, &config).unwrap())
                .count()
        })
    });
    g.finish();
}

fn bench_sequence_grouping(c: &mut Criterion) {
    let corpus = corpus();
    let flows =
        extract_labeled_flows(&corpus.packets, &corpus.rules, FlowConfig::default()).unwrap();
    let mut g = c.benchmark_group("sequence_grouping");
    g.throughput(Throughput::Elements(flows.len() as u64));
    g.bench_function("replay_small_corpus", |b| {
        b.iter_batched(
            || flows.clone(),
            |f| sequences_of(f, SequenceConfig::default()),
            BatchSize::LargeInput,
        )
    });
    g.finish();
}

fn bench_model(c: &mut Criterion) {
    let config = ModelConfig::paper();
    let model = BiAlstm::init(config.clone(), &mut substream(11, "init"));
    let mut rng = substream(11, "bench-data");
    let samples: Vec<SequenceSample> = (0..32)
        .map(|_| SequenceSample {
            rows: (0..10)
                .map(|_| (0..config.input_dim).map(|_| rng.gen::<f64>()).collect())
                .collect(),
            labels: (0..10).map(|_| rng.gen_range(0..config.num_classes)).collect(),
        })
        .collect();
    let batch: Vec<&SequenceSample> = samples.iter().collect();

    let mut g = c.benchmark_group("model");
    g.throughput(Throughput::Elements(samples.len() as u64));
    g.bench_function("forward_batch32", |b| {
        b.iter(|| samples.iter().map(|s| model.predict(&s.rows)).count())
    });
    g.bench_function("forward_backward_batch32", |b| {
        b.iter(|| model.loss_and_grads(&batch, 0.5).unwrap())
    });
    g.finish();
}

criterion_group!(
    benches,
    bench_flow_assembly,
    bench_feature_extraction,
    bench_sequence_grouping,
    bench_model
);
criterion_main!(benches);
