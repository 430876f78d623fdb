//! Observation attacks against a clear-box Q-network.
//!
//! Gradient baselines use the cross-entropy of `softmax(Q(x))` against the
//! clean greedy action. CW-L2 minimises `||delta||^2 + c * margin` in tanh
//! space. Every attack returns pixels inside `[0, 1]`.

use std::fmt;
use std::io::Write;
use std::path::PathBuf;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::agent::QNetwork;
use crate::error::{check_dim, Error, Result};
use crate::numerics::{argmax, l2_distance, sign, softmax, Matrix, Optimizer, SeededRng};
use crate::pgn::{PgnModel, PgnObjective, PgnVariant};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackKind {
    None,
    Fgsm,
    Pgd,
    Cw,
    PgnTargeted,
    PgnUntargeted,
}

impl fmt::Display for AttackKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AttackKind::None => "none",
            AttackKind::Fgsm => "fgsm",
            AttackKind::Pgd => "pgd",
            AttackKind::Cw => "cw",
            AttackKind::PgnTargeted => "pgn_targeted",
            AttackKind::PgnUntargeted => "pgn_untargeted",
        })
    }
}

impl FromStr for AttackKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(AttackKind::None),
            "fgsm" => Ok(AttackKind::Fgsm),
            "pgd" => Ok(AttackKind::Pgd),
            "cw" => Ok(AttackKind::Cw),
            "pgn_targeted" => Ok(AttackKind::PgnTargeted),
            "pgn_untargeted" => Ok(AttackKind::PgnUntargeted),
            other => Err(Error::InvalidArgument(format!("unknown attack kind `{other}`"))),
        }
    }
}

/// Serializable description of an attack run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AttackSpec {
    pub kind: AttackKind,
    /// L-infinity budget for FGSM and PGD.
    pub epsilon: f64,
    pub iterations: usize,
    /// PGD step; `None` means `epsilon / 10`.
    pub step_size: Option<f64>,
    pub cw_c: f64,
    pub cw_lr: f64,
    /// Rounds of the search over `c`; each round runs `iterations` steps.
    pub cw_search_steps: usize,
    pub pgn_checkpoint: Option<PathBuf>,
}

impl Default for AttackSpec {
    fn default() -> Self {
        Self {
            kind: AttackKind::None,
            epsilon: 0.1,
            iterations: 50,
            step_size: None,
            cw_c: 1.0,
            cw_lr: 0.01,
            cw_search_steps: 5,
            pgn_checkpoint: None,
        }
    }
}

impl AttackSpec {
    pub fn of(kind: AttackKind) -> Self {
        Self {
            kind,
            ..Self::default()
        }
    }

    pub fn pgd_step(&self) -> f64 {
        self.step_size.unwrap_or(self.epsilon / 10.0)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return Err(Error::InvalidArgument("epsilon must be finite and >= 0".into()));
        }
        let iterative = matches!(self.kind, AttackKind::Pgd | AttackKind::Cw);
        if iterative && self.iterations == 0 {
            return Err(Error::InvalidArgument("iterative attacks need iterations >= 1".into()));
        }
        if self.kind == AttackKind::Cw && (self.cw_search_steps == 0 || !(self.cw_c >= 0.0)) {
            return Err(Error::InvalidArgument("cw needs c >= 0 and at least one search step".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdversarialExample {
    pub x: Vec<f64>,
    pub x_adv: Vec<f64>,
    /// Perturbation proposed by the attack; `x_adv = clip(x + delta)`.
    pub delta: Vec<f64>,
    /// Greedy action on `x_adv` differs from the greedy action on `x`.
    pub success: bool,
    pub gen_time_seconds: f64,
}

impl AdversarialExample {
    fn finish(qnet: &QNetwork, x: &[f64], delta: Vec<f64>, started: Instant) -> Result<Self> {
        let x_adv: Vec<f64> = clip_observation(&x.iter().zip(&delta).map(|(a, d)| a + d).collect::<Vec<_>>());
        let gen_time_seconds = started.elapsed().as_secs_f64();
        let success = qnet.act_greedy(x)? != qnet.act_greedy(&x_adv)?;
        Ok(Self {
            x: x.to_vec(),
            x_adv,
            delta,
            success,
            gen_time_seconds,
        })
    }

    pub fn l2(&self) -> f64 {
        l2_distance(&self.x, &self.x_adv).expect("equal lengths")
    }

    /// Writes `x`, `delta`, `x_adv` as three comma-separated rows.
    pub fn write_dump<W: Write>(&self, out: &mut W) -> Result<()> {
        for (name, row) in [("x", &self.x), ("delta", &self.delta), ("x_adv", &self.x_adv)] {
            let values: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
            writeln!(out, "{name},{}", values.join(","))?;
        }
        Ok(())
    }
}

/// Entrywise clamp into `[0, 1]`.
pub fn clip_observation(v: &[f64]) -> Vec<f64> {
    v.iter()
        .map(|x| if x.is_nan() { 0.0 } else { x.clamp(0.0, 1.0) })
        .collect()
}

/// Cross-entropy of `softmax(Q(x))` against `label`, with its gradient with
/// respect to `x`.
pub fn attack_loss(qnet: &QNetwork, x: &[f64], label: usize) -> Result<(f64, Vec<f64>)> {
    check_dim("attack input", qnet.input_dim(), x.len())?;
    if label >= qnet.action_count() {
        return Err(Error::InvalidArgument(format!("label {label} out of range")));
    }
    let net = qnet.network();
    let pass = net.forward_pass(&Matrix::from_vec(1, x.len(), x.to_vec())?)?;
    let q = pass.output().row(0);
    let max = q.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let log_sum = max + q.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    let loss = log_sum - q[label];
    let mut dq = softmax(q);
    dq[label] -= 1.0;
    let up = Matrix::from_vec(1, dq.len(), dq)?;
    let grad = net.backward(&pass, &up, false, true)?.input.unwrap().into_vec();
    Ok((loss, grad))
}

/// Single signed-gradient step of size `epsilon`.
pub fn fgsm(qnet: &QNetwork, x: &[f64], epsilon: f64) -> Result<AdversarialExample> {
    let started = Instant::now();
    let label = qnet.act_greedy(x)?;
    let (_, grad) = attack_loss(qnet, x, label)?;
    let delta = grad.iter().map(|g| epsilon * sign(*g)).collect();
    AdversarialExample::finish(qnet, x, delta, started)
}

/// Iterated signed-gradient ascent, projected onto the L-infinity ball of
/// radius `epsilon` around `x` and onto `[0, 1]` after every step. Starts at
/// `x` (no random start).
pub fn pgd(
    qnet: &QNetwork,
    x: &[f64],
    epsilon: f64,
    iterations: usize,
    step_size: f64,
) -> Result<AdversarialExample> {
    let started = Instant::now();
    let label = qnet.act_greedy(x)?;
    let mut adv = x.to_vec();
    for _ in 0..iterations {
        let (_, grad) = attack_loss(qnet, &adv, label)?;
        for ((a, g), x0) in adv.iter_mut().zip(&grad).zip(x) {
            let stepped = *a + step_size * sign(*g);
            *a = stepped.clamp(x0 - epsilon, x0 + epsilon).clamp(0.0, 1.0);
        }
    }
    let delta = adv.iter().zip(x).map(|(a, b)| a - b).collect();
    AdversarialExample::finish(qnet, x, delta, started)
}

/// Keeps `atanh` finite on saturated pixels.
const TANH_BOX: f64 = 0.999_999;

/// CW-L2 with confidence 0. Each search round restarts from `x` and runs
/// `iterations` Adam steps at the current `c`; `c` shrinks after a
/// successful round and grows tenfold (or bisects) after a failed one.
/// Returns the smallest successful perturbation found, otherwise the final
/// iterate.
pub fn cw_l2(
    qnet: &QNetwork,
    x: &[f64],
    iterations: usize,
    c: f64,
    lr: f64,
    search_steps: usize,
) -> Result<AdversarialExample> {
    let started = Instant::now();
    check_dim("attack input", qnet.input_dim(), x.len())?;
    let label = qnet.act_greedy(x)?;
    let net = qnet.network();
    let w0: Vec<f64> = x.iter().map(|v| ((2.0 * v - 1.0) * TANH_BOX).atanh()).collect();
    let to_image = |w: &[f64]| -> Vec<f64> { w.iter().map(|wi| 0.5 * (wi.tanh() + 1.0)).collect() };
    // Distance gradient is taken against the boxed start so that w0 is stationary.
    let x_box = to_image(&w0);

    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut last = x.to_vec();
    let (mut lower, mut upper) = (0.0f64, f64::INFINITY);
    let mut c = c;
    for _ in 0..search_steps.max(1) {
        let mut w = w0.clone();
        let mut adam = Optimizer::adam(lr)?;
        let mut round_success = false;
        for it in 0..=iterations {
            let img = to_image(&w);
            let pass = net.forward_pass(&Matrix::from_vec(1, img.len(), img.clone())?)?;
            let q = pass.output().row(0);
            if argmax(q) != label {
                round_success = true;
                let dist = l2_distance(&img, x)?;
                if best.as_ref().is_none_or(|(d, _)| dist < *d) {
                    best = Some((dist, img.clone()));
                }
            }
            if it == iterations {
                last = img;
                break;
            }
            let runner_up = (0..q.len())
                .filter(|&a| a != label)
                .max_by(|&a, &b| q[a].total_cmp(&q[b]).then(b.cmp(&a)))
                .expect("at least two actions");
            let margin = q[label] - q[runner_up];
            let mut dq = vec![0.0; q.len()];
            if margin > 0.0 {
                dq[label] = c;
                dq[runner_up] = -c;
            }
            let up = Matrix::from_vec(1, dq.len(), dq)?;
            let g_img = net.backward(&pass, &up, false, true)?.input.unwrap().into_vec();
            let g_w: Vec<f64> = g_img
                .iter()
                .zip(&img)
                .zip(&x_box)
                .zip(&w)
                .map(|(((g, a), x0), wi)| {
                    let t = wi.tanh();
                    (g + 2.0 * (a - x0)) * 0.5 * (1.0 - t * t)
                })
                .collect();
            adam.step(vec![&mut w], &[&g_w])?;
        }
        if round_success {
            upper = upper.min(c);
            c = 0.5 * (lower + upper);
        } else {
            lower = lower.max(c);
            c = if upper.is_finite() {
                0.5 * (lower + upper)
            } else {
                c * 10.0
            };
        }
    }
    let adv = best.map_or(last, |(_, img)| img);
    let delta = adv.iter().zip(x).map(|(a, b)| a - b).collect();
    AdversarialExample::finish(qnet, x, delta, started)
}

/// A ready-to-run attack.
#[derive(Debug, Clone)]
pub enum Attack {
    None,
    Fgsm { epsilon: f64 },
    Pgd { epsilon: f64, iterations: usize, step_size: f64 },
    Cw { iterations: usize, c: f64, lr: f64, search_steps: usize },
    Pgn(Box<PgnModel>),
}

impl Attack {
    /// Builds the attack for a spec. PGN kinds need the loaded model.
    pub fn from_spec(spec: &AttackSpec, pgn: Option<PgnModel>) -> Result<Self> {
        spec.validate()?;
        Ok(match spec.kind {
            AttackKind::None => Attack::None,
            AttackKind::Fgsm => Attack::Fgsm {
                epsilon: spec.epsilon,
            },
            AttackKind::Pgd => Attack::Pgd {
                epsilon: spec.epsilon,
                iterations: spec.iterations,
                step_size: spec.pgd_step(),
            },
            AttackKind::Cw => Attack::Cw {
                iterations: spec.iterations,
                c: spec.cw_c,
                lr: spec.cw_lr,
                search_steps: spec.cw_search_steps,
            },
            AttackKind::PgnTargeted | AttackKind::PgnUntargeted => {
                let model = pgn.ok_or_else(|| {
                    Error::InvalidArgument(format!("{} attack needs a PGN model", spec.kind))
                })?;
                let wanted = if spec.kind == AttackKind::PgnTargeted {
                    PgnObjective::Targeted
                } else {
                    PgnObjective::Untargeted
                };
                if model.objective() != wanted {
                    return Err(Error::InvalidArgument(format!(
                        "{} attack given a {} model",
                        spec.kind,
                        model.objective()
                    )));
                }
                Attack::Pgn(Box::new(model))
            }
        })
    }

    pub fn kind(&self) -> AttackKind {
        match self {
            Attack::None => AttackKind::None,
            Attack::Fgsm { .. } => AttackKind::Fgsm,
            Attack::Pgd { .. } => AttackKind::Pgd,
            Attack::Cw { .. } => AttackKind::Cw,
            Attack::Pgn(m) => match m.objective() {
                PgnObjective::Targeted => AttackKind::PgnTargeted,
                PgnObjective::Untargeted => AttackKind::PgnUntargeted,
            },
        }
    }

    /// Short method label as used in report tables (`t-pgna`, `cw`, ...).
    pub fn label(&self) -> String {
        match self {
            Attack::Pgn(m) => method_label(m.objective(), m.variant()).to_string(),
            other => other.kind().to_string(),
        }
    }

    /// Perturbs one observation. `rng` feeds the generator variant's noise.
    pub fn perturb(
        &self,
        qnet: &QNetwork,
        x: &[f64],
        rng: &mut SeededRng,
    ) -> Result<AdversarialExample> {
        match self {
            Attack::None => {
                let started = Instant::now();
                check_dim("attack input", qnet.input_dim(), x.len())?;
                AdversarialExample::finish(qnet, x, vec![0.0; x.len()], started)
            }
            Attack::Fgsm { epsilon } => fgsm(qnet, x, *epsilon),
            Attack::Pgd {
                epsilon,
                iterations,
                step_size,
            } => pgd(qnet, x, *epsilon, *iterations, *step_size),
            Attack::Cw {
                iterations,
                c,
                lr,
                search_steps,
            } => cw_l2(qnet, x, *iterations, *c, *lr, *search_steps),
            Attack::Pgn(model) => {
                let started = Instant::now();
                let z = model.sample_noise(rng);
                let (delta, _) = model.generate(x, &z)?;
                AdversarialExample::finish(qnet, x, delta, started)
            }
        }
    }
}

pub fn method_label(objective: PgnObjective, variant: PgnVariant) -> &'static str {
    match (objective, variant) {
        (PgnObjective::Targeted, PgnVariant::Autoencoder) => "t-pgna",
        (PgnObjective::Targeted, PgnVariant::Generator) => "t-pgng",
        (PgnObjective::Untargeted, PgnVariant::Autoencoder) => "u-pgna",
        (PgnObjective::Untargeted, PgnVariant::Generator) => "u-pgng",
    }
}
