//! Compares sequential and rayon execution of the verification trials.
//!
//! Run with `cargo bench -p marginlab-core`; the parallel rows disappear
//! when the crate is built with `--no-default-features`.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use marginlab_core::exec::Parallelism;
use marginlab_core::verify::{run_check, CheckKind, FaultInjection, SuiteConfig};

fn modes() -> Vec<(&'static str, Parallelism)> {
    let mut m = vec![("sequential", Parallelism::Sequential)];
    #[cfg(feature = "parallel")]
    m.push(("rayon", Parallelism::Rayon));
    m
}

fn config(mode: Parallelism) -> SuiteConfig {
    SuiteConfig {
        seed: 7,
        trials: 200,
        parallelism: mode,
        fault: FaultInjection::None,
        auc_specs: 2,
        auc_total_samples: 100_000,
        gen_eval_size: 5_000,
    }
}

fn bench_checks(c: &mut Criterion) {
    let kinds = [
        CheckKind::VarianceIdentity,
        CheckKind::PullBound,
        CheckKind::PushBound,
        CheckKind::VarianceChain,
        CheckKind::AucClosedVsMc,
        CheckKind::GenBound,
    ];
    for kind in kinds {
        let mut group = c.benchmark_group(kind.name());
        group.sample_size(10);
        for (label, mode) in modes() {
            group.bench_with_input(BenchmarkId::from_parameter(label), &mode, |b, &mode| {
                let cfg = config(mode);
                b.iter(|| run_check(kind, &cfg).expect("check runs"));
            });
        }
        group.finish();
    }
}

criterion_group!(benches, bench_checks);
criterion_main!(benches);
