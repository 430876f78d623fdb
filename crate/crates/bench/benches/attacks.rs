use criterion::{criterion_group, criterion_main, Criterion};
use pgnkit_bench::{pgn, states, victim};
use pgnkit_core::environments::EnvKind;
use pgnkit_core::numerics::seeded_rng;
use pgnkit_core::{Attack, AttackKind, AttackSpec, PgnVariant};

fn attack_latency(c: &mut Criterion) {
    let env = EnvKind::MiniPong;
    let q = victim(env);
    let xs = states(env, 16);
    let mut attacks: Vec<Attack> = [AttackKind::Fgsm, AttackKind::Pgd, AttackKind::Cw]
        .into_iter()
        .map(|k| Attack::from_spec(&AttackSpec::of(k), None).unwrap())
        .collect();
    for v in [PgnVariant::Autoencoder, PgnVariant::Generator] {
        attacks.push(Attack::Pgn(Box::new(pgn(env, v))));
    }

    let mut group = c.benchmark_group("attack");
    for attack in &attacks {
        if attack.kind() == AttackKind::Cw {
            group.sample_size(10);
        }
        let mut rng = seeded_rng(0);
        let mut i = 0;
        group.bench_function(attack.label(), |b| {
            b.iter(|| {
                i = (i + 1) % xs.len();
                attack.perturb(&q, &xs[i], &mut rng).unwrap()
            })
        });
    }
    group.finish();
}

criterion_group!(benches, attack_latency);
criterion_main!(benches);
