use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use tabletop_icl::harness::{run_eval, DemoPolicy, Harness, RunConfig};
use tabletop_icl::keyframe::extract_keyframes;
use tabletop_icl::model::WorkspaceBounds;
use tabletop_icl::prompt::parse_response;
use tabletop_icl::sim::{SimConfig, Simulator, TaskId};

fn keyframes(c: &mut Criterion) {
    let sim = Simulator::new(SimConfig::default(), WorkspaceBounds::default()).unwrap();
    let r = sim.reset(TaskId::StackCube, 3).unwrap();
    let ep = sim
        .scripted_expert(TaskId::StackCube, &r.world, &r.variation, &r.instruction)
        .unwrap();
    c.bench_function("extract_keyframes", |b| {
        b.iter(|| extract_keyframes(black_box(&ep), 0.01).unwrap())
    });
    c.bench_function("scripted_expert", |b| {
        b.iter(|| {
            sim.scripted_expert(TaskId::StackCube, &r.world, &r.variation, &r.instruction)
                .unwrap()
        })
    });
}

fn prompts(c: &mut Criterion) {
    let config = RunConfig {
        task: TaskId::PushMultipleButtons,
        n_demos: 10,
        ..RunConfig::default()
    };
    let h = Harness::new(config).unwrap();
    let demos = h.demo_pool().unwrap();
    c.bench_function("prepare_10_demos", |b| b.iter(|| h.prepare(black_box(&demos)).unwrap()));

    let output = h.prepare(&demos).unwrap().examples[0].output.clone();
    let reply = format!("Here you go: {output}");
    c.bench_function("parse_response", |b| b.iter(|| parse_response(black_box(&reply)).unwrap()));
}

fn eval(c: &mut Criterion) {
    let config = RunConfig {
        task: TaskId::StackCube,
        n_demos: 10,
        n_eval: 10,
        demo_policy: DemoPolicy::ReuseDemoSeeds,
        parallel: false,
        ..RunConfig::default()
    };
    c.bench_function("run_eval_mock_10", |b| b.iter(|| run_eval(black_box(&config)).unwrap()));
}

criterion_group!(benches, keyframes, prompts, eval);
criterion_main!(benches);
