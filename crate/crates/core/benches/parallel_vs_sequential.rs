//! Rayon fan-out vs the sequential fallback on the two hot loops:
//! independent timestep solves and per-user trajectory generation.
//!
//! Both paths produce identical output (jobs own their seeds), so the
//! comparison is purely about throughput.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use corrdp::correlation::{prior_distribution, propagate_all};
use corrdp::exec;
use corrdp::mechanism::{release_stream, RandomSeed};
use corrdp::model::{LocationDistribution, PriorPolicy, PrivacyParams, TransitionMatrix};
use corrdp::posterior::ObjectiveSpec;
use corrdp::seed::fnv1a64_words;
use corrdp::solver::{solve_timestep, SolverConfig};
use corrdp::synth::generate_counts;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn fixture_spec(t_len: usize) -> ObjectiveSpec {
    let tm = TransitionMatrix::new(vec![
        vec![0.0, 0.0, 1.0],
        vec![0.5, 0.0, 0.5],
        vec![0.0, 1.0, 0.0],
    ])
    .unwrap();
    let initial = LocationDistribution::uniform(3);
    let truth = generate_counts(&initial, &tm, 100, t_len, RandomSeed(7)).unwrap();
    let params = PrivacyParams::plain(1.0, 0.5).unwrap();
    let noisy = release_stream(&truth, &params, RandomSeed(8)).unwrap();
    let prior = prior_distribution(PriorPolicy::Frequency, noisy.row(0), 100).unwrap();
    let probs = propagate_all(&prior, &tm, t_len).unwrap();
    ObjectiveSpec::new(2.0, probs, noisy, 100).unwrap()
}

fn bench_timestep_solves(c: &mut Criterion) {
    let t_len = 64;
    let spec = fixture_spec(t_len);
    let config = SolverConfig { max_iters: 300, restarts: 1, ..SolverConfig::default() };

    let mut group = c.benchmark_group("timestep_solves");
    group.sample_size(10);
    group.bench_function(BenchmarkId::new("parallel", t_len), |b| {
        b.iter(|| {
            exec::map_indexed(t_len, |t| solve_timestep(&spec, t, &config).unwrap().1.objective)
        })
    });
    group.bench_function(BenchmarkId::new("sequential", t_len), |b| {
        b.iter(|| {
            exec::map_indexed_seq(t_len, |t| solve_timestep(&spec, t, &config).unwrap().1.objective)
        })
    });
    group.finish();
}

fn bench_trajectories(c: &mut Criterion) {
    let tm = TransitionMatrix::new(vec![
        vec![0.1, 0.6, 0.3],
        vec![0.3, 0.1, 0.6],
        vec![0.6, 0.3, 0.1],
    ])
    .unwrap();
    let initial = LocationDistribution::uniform(3);
    let n_users = 20_000usize;
    let t_len = 128;

    // The same per-user walk generate_trajectories fans out internally.
    let walk = |u: usize| -> Vec<usize> {
        let mut rng = ChaCha8Rng::seed_from_u64(fnv1a64_words(&[1, u as u64]));
        let mut path = Vec::with_capacity(t_len);
        let mut draw_from = initial.probs();
        for step in 0..t_len {
            let r = rng.gen::<f64>();
            let mut cum = 0.0;
            let mut loc = draw_from.len() - 1;
            for (idx, &p) in draw_from.iter().enumerate() {
                cum += p;
                if r < cum {
                    loc = idx;
                    break;
                }
            }
            path.push(loc);
            if step + 1 < t_len {
                draw_from = tm.row(loc);
            }
        }
        path
    };

    let mut group = c.benchmark_group("trajectory_generation");
    group.sample_size(10);
    group.bench_function(BenchmarkId::new("parallel", n_users), |b| {
        b.iter(|| exec::map_indexed(n_users, walk))
    });
    group.bench_function(BenchmarkId::new("sequential", n_users), |b| {
        b.iter(|| exec::map_indexed_seq(n_users, walk))
    });
    group.finish();
}

criterion_group!(benches, bench_timestep_solves, bench_trajectories);
criterion_main!(benches);
