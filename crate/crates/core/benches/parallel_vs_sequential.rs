use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use eit_cs::experiments::{compare_cases, Case, Problem, RunOptions, VariantLambdas};
use eit_cs::forward::DEFAULT_CONTACT_IMPEDANCE;
use eit_cs::phantom::{generate_phantom, PhantomConfig};
use eit_cs::{DiskMeshSpec, Execution, ForwardContext, ForwardModel, PotentialOrder, Protocol, ProtocolKind, Variant};

fn bench(c: &mut Criterion) {
    let mesh = DiskMeshSpec::desk().build().unwrap();
    let model = ForwardModel::new(&mesh, PotentialOrder::Linear, DEFAULT_CONTACT_IMPEDANCE).unwrap();
    let protocol = Protocol::full(ProtocolKind::OppositeAdjacent, mesh.n_electrodes()).unwrap();
    let sigma = generate_phantom(&mesh, &PhantomConfig::default(), 1).unwrap().sigma;

    let mut group = c.benchmark_group("jacobian");
    group.sample_size(10);
    for exec in [Execution::Sequential, Execution::Parallel] {
        group.bench_with_input(BenchmarkId::from_parameter(format!("{exec:?}")), &exec, |b, &exec| {
            b.iter(|| model.jacobian(black_box(&sigma), &protocol, exec).unwrap())
        });
    }
    group.finish();

    let problem = Problem::new(&model, &protocol);
    let ctx = ForwardContext::new(&model, &protocol, Execution::Sequential);
    let cases: Vec<Case> = (0..4)
        .map(|id| {
            let truth = generate_phantom(&mesh, &PhantomConfig::default(), 10 + id as u64).unwrap().sigma;
            let mask = problem.ideal_mask(&truth).unwrap();
            Case {
                id,
                data: ctx.phi(&truth).unwrap(),
                truth,
                mask: Some(mask.clone()),
                ideal: Some(mask),
            }
        })
        .collect();
    let mut group = c.benchmark_group("compare");
    group.sample_size(10);
    for exec in [Execution::Sequential, Execution::Parallel] {
        let run = RunOptions {
            exec,
            ..RunOptions::new(10, 0.0)
        };
        group.bench_with_input(BenchmarkId::from_parameter(format!("{exec:?}")), &run, |b, run| {
            b.iter(|| compare_cases(&problem, &cases, &Variant::ALL, &VariantLambdas::default(), run).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, bench);
criterion_main!(benches);
