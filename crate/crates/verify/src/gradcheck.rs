//! Analytic gradients against central finite differences.

use pgnkit_core::agent::QNetwork;
use pgnkit_core::attacks::attack_loss;
use pgnkit_core::numerics::{seeded_rng, Activation, DenseNetwork, Matrix, SeededRng};
use pgnkit_core::pgn::{
    total_loss, total_loss_with_gradient, PgnConfig, PgnModel, PgnObjective, PgnVariant,
};
use rand::Rng;

pub const H: f64 = 1e-6;
pub const TOL: f64 = 1e-4;

fn rel_error(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / na.max(nb).max(1e-10)
}

fn interior(rng: &mut SeededRng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(0.3..0.7)).collect()
}

/// Scalar objective `sum_ij w_ij * net(x)_ij` for a batch.
fn weighted_output(net: &DenseNetwork, xs: &Matrix, w: &Matrix) -> f64 {
    let out = net.forward_batch(xs).unwrap();
    out.as_slice().iter().zip(w.as_slice()).map(|(a, b)| a * b).sum()
}


/// One analytic-versus-numeric comparison.
pub struct GradCheck {
    pub label: String,
    pub error: f64,
}

impl GradCheck {
    pub fn passed(&self) -> bool {
        self.error < TOL
    }
}

/// Parameter and input gradients of 16 small dense networks.
pub fn dense_network_checks() -> Vec<GradCheck> {
    let acts = [Activation::Relu, Activation::Tanh, Activation::Sigmoid, Activation::Identity];
    let mut checks = Vec::new();
    for (i, dims) in [vec![4, 6, 3], vec![5, 7, 7, 2], vec![3, 4], vec![6, 5, 4, 3]]
        .iter()
        .enumerate()
    {
        for (j, &hidden) in acts.iter().enumerate() {
            let out_act = acts[(i + j) % acts.len()];
            let mut rng = seeded_rng(100 + (i * 10 + j) as u64);
            let mut net = DenseNetwork::xavier(dims, hidden, out_act, &mut rng).unwrap();
            let batch = 3;
            let xs = Matrix::from_rows(
                &(0..batch).map(|_| interior(&mut rng, dims[0])).collect::<Vec<_>>(),
            )
            .unwrap();
            let out_dim = *dims.last().unwrap();
            let w = Matrix::from_rows(
                &(0..batch)
                    .map(|_| (0..out_dim).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<f64>>())
                    .collect::<Vec<_>>(),
            )
            .unwrap();

            let pass = net.forward_pass(&xs).unwrap();
            let back = net.backward(&pass, &w, true, true).unwrap();
            let analytic_params = back.params.unwrap().flatten();
            let analytic_input = back.input.unwrap().into_vec();

            let mut numeric_params = Vec::new();
            let n_slices = net.parameters().len();
            for s in 0..n_slices {
                let len = net.parameters()[s].len();
                for k in 0..len {
                    let orig = net.parameters()[s][k];
                    net.parameters_mut()[s][k] = orig + H;
                    let up = weighted_output(&net, &xs, &w);
                    net.parameters_mut()[s][k] = orig - H;
                    let down = weighted_output(&net, &xs, &w);
                    net.parameters_mut()[s][k] = orig;
                    numeric_params.push((up - down) / (2.0 * H));
                }
            }
            let mut numeric_input = Vec::new();
            for k in 0..xs.as_slice().len() {
                let mut plus = xs.clone();
                plus.as_mut_slice()[k] += H;
                let mut minus = xs.clone();
                minus.as_mut_slice()[k] -= H;
                numeric_input.push(
                    (weighted_output(&net, &plus, &w) - weighted_output(&net, &minus, &w)) / (2.0 * H),
                );
            }
            let label = format!("dense {dims:?} {hidden}/{out_act}");
            let ep = rel_error(&analytic_params, &numeric_params);
            let ei = rel_error(&analytic_input, &numeric_input);
            checks.push(GradCheck {
                label,
                error: ep.max(ei),
            });
        }
    }
    checks
}

/// Input gradient of the attack cross-entropy on six victims.
pub fn attack_loss_checks() -> Vec<GradCheck> {
    (0..6u64)
        .map(|seed| {
            let mut rng = seeded_rng(200 + seed);
            let q = QNetwork::xavier(8, &[10, 6], 3 + seed as usize % 3, &mut rng).unwrap();
            let x = interior(&mut rng, 8);
            let label = q.act_greedy(&x).unwrap();
            let (_, g) = attack_loss(&q, &x, label).unwrap();
            let numeric: Vec<f64> = (0..x.len())
                .map(|k| {
                    let mut p = x.clone();
                    p[k] += H;
                    let mut m = x.clone();
                    m[k] -= H;
                    (attack_loss(&q, &p, label).unwrap().0 - attack_loss(&q, &m, label).unwrap().0)
                        / (2.0 * H)
                })
                .collect();
            GradCheck {
                label: format!("attack loss seed {seed}"),
                error: rel_error(&g, &numeric),
            }
        })
        .collect()
}

/// Numeric gradient of the total PGN loss over every generator parameter.
fn numeric_pgn_gradient(model: &mut PgnModel, q: &QNetwork, x: &[f64], z: &[f64], cfg: &PgnConfig) -> Vec<f64> {
    let mut numeric = Vec::new();
    for s in 0..model.parameters().len() {
        for k in 0..model.parameters()[s].len() {
            let orig = model.parameters()[s][k];
            model.parameters_mut()[s][k] = orig + H;
            let up = total_loss(model, q, x, z, cfg).unwrap().total;
            model.parameters_mut()[s][k] = orig - H;
            let down = total_loss(model, q, x, z, cfg).unwrap().total;
            model.parameters_mut()[s][k] = orig;
            numeric.push((up - down) / (2.0 * H));
        }
    }
    numeric
}

/// End-to-end PGN gradients through a frozen victim: 2 variants x 2
/// objectives x 3 (C, kappa, alpha) settings, with the hinge active and
/// inactive.
pub fn pgn_end_to_end_checks() -> Vec<GradCheck> {
    let mut settings = Vec::new();
    for variant in [PgnVariant::Autoencoder, PgnVariant::Generator] {
        for objective in [PgnObjective::Targeted, PgnObjective::Untargeted] {
            for (c, kappa, alpha) in [(1e-3, 10.0, 1e-2), (50.0, 3.0, 1.0), (0.05, 25.0, 0.5)] {
                settings.push((variant, objective, c, kappa, alpha));
            }
        }
    }
    settings
        .into_iter()
        .enumerate()
        .map(|(i, (variant, objective, c, kappa, alpha))| {
            let mut rng = seeded_rng(300 + i as u64);
            let obs = 9;
            let q = QNetwork::xavier(obs, &[7], 4, &mut rng).unwrap();
            let cfg = PgnConfig {
                variant,
                objective,
                c,
                kappa,
                alpha,
                hidden_dim: 6,
                latent_dim: 3,
                noise_dim: 2,
                ..PgnConfig::default()
            };
            let mut model = PgnModel::new(obs, &cfg, &mut rng).unwrap();
            // Shrink the output layer so x + delta stays inside the clip box.
            for p in model.networks_mut().last_mut().unwrap().layers_mut().last_mut().unwrap().weights_mut() {
                *p *= 0.2;
            }
            let x = interior(&mut rng, obs);
            let z = model.sample_noise(&mut rng);
            let (loss, analytic) = total_loss_with_gradient(&model, &q, &x, &z, &cfg).unwrap();
            let hinge_as_expected = if c < 0.01 {
                loss.l_c > 0.0
            } else {
                c <= 1.0 || loss.l_c == 0.0
            };
            let numeric = numeric_pgn_gradient(&mut model, &q, &x, &z, &cfg);
            GradCheck {
                label: format!("pgn {variant}/{objective} C={c} kappa={kappa} alpha={alpha}"),
                error: if hinge_as_expected { rel_error(&analytic, &numeric) } else { f64::INFINITY },
            }
        })
        .collect()
}

/// Each loss term in isolation, by zeroing the other weights.
pub fn pgn_component_checks() -> Vec<GradCheck> {
    let mut rng = seeded_rng(400);
    let obs = 7;
    let q = QNetwork::xavier(obs, &[6], 3, &mut rng).unwrap();
    let base = PgnConfig {
        hidden_dim: 5,
        latent_dim: 3,
        c: 1e-3,
        ..PgnConfig::default()
    };
    let mut model = PgnModel::new(obs, &base, &mut rng).unwrap();
    for p in model.networks_mut()[1].layers_mut().last_mut().unwrap().weights_mut() {
        *p *= 0.2;
    }
    let x = interior(&mut rng, obs);
    [(1.0, 0.0), (0.0, 1.0), (0.0, 0.0)]
        .into_iter()
        .map(|(alpha, beta)| {
            let cfg = PgnConfig {
                alpha,
                beta,
                ..base.clone()
            };
            let (_, analytic) = total_loss_with_gradient(&model, &q, &x, &[], &cfg).unwrap();
            let numeric = numeric_pgn_gradient(&mut model, &q, &x, &[], &cfg);
            GradCheck {
                label: format!("pgn terms alpha={alpha} beta={beta}"),
                error: rel_error(&analytic, &numeric),
            }
        })
        .collect()
}
