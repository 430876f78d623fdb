//! Perturbation generation networks.
//!
//! A model maps an observation `x` (and, for the generator variant, a noise
//! vector `z`) to a perturbation `delta = 0.5 * tanh(net(..))`; the attacked
//! frame is `h(x) = clip(x + delta)`. Training minimises
//!
//! ```text
//! L = alpha * ||x - h(x)||_2 + L_y + beta * max(||delta||_2 - C, 0)
//! ```
//!
//! against a frozen victim, where `L_y` is either the targeted re-ranking
//! loss or the untargeted log-distance loss.

use std::fmt;
use std::io::{BufRead, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::agent::QNetwork;
use crate::attacks::clip_observation;
use crate::environments::EnvKind;
use crate::error::{check_dim, Error, Result};
use crate::numerics::{
    argmax, argmin, l2_norm, max_value, mse, seeded_rng, softmax, softmax_backward, Activation,
    Checkpoint, DenseNetwork, Gradients, Matrix, Optimizer, OptimizerKind, SeededRng,
};

/// Raw perturbations lie in `[-OUTPUT_SCALE, OUTPUT_SCALE]` before clipping.
pub const OUTPUT_SCALE: f64 = 0.5;
/// Floor applied inside the untargeted loss logarithm.
pub const LOG_FLOOR: f64 = 1e-12;
/// Offset of the untargeted loss.
pub const UNTARGETED_OFFSET: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PgnVariant {
    Autoencoder,
    Generator,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PgnObjective {
    Targeted,
    Untargeted,
}

impl fmt::Display for PgnVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PgnVariant::Autoencoder => "autoencoder",
            PgnVariant::Generator => "generator",
        })
    }
}

impl FromStr for PgnVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "autoencoder" | "ae" => Ok(PgnVariant::Autoencoder),
            "generator" | "gen" => Ok(PgnVariant::Generator),
            other => Err(Error::InvalidArgument(format!("unknown PGN variant `{other}`"))),
        }
    }
}

impl fmt::Display for PgnObjective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PgnObjective::Targeted => "targeted",
            PgnObjective::Untargeted => "untargeted",
        })
    }
}

impl FromStr for PgnObjective {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "targeted" => Ok(PgnObjective::Targeted),
            "untargeted" => Ok(PgnObjective::Untargeted),
            other => Err(Error::InvalidArgument(format!("unknown PGN objective `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PgnConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Greedy victim rollouts used to build the offline dataset.
    pub collect_episodes: usize,
    /// Weight of the similarity term.
    pub alpha: f64,
    /// Weight of the hinge term.
    pub beta: f64,
    /// Re-ranking boost factor.
    pub kappa: f64,
    /// Hinge threshold on `||delta||_2`.
    pub c: f64,
    pub variant: PgnVariant,
    pub objective: PgnObjective,
    pub noise_dim: usize,
    pub latent_dim: usize,
    pub hidden_dim: usize,
    pub optimizer: OptimizerKind,
}

impl Default for PgnConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            batch_size: 128,
            epochs: 40,
            collect_episodes: 20,
            alpha: 1e-2,
            beta: 1.0,
            kappa: 10.0,
            c: 0.1,
            variant: PgnVariant::Autoencoder,
            objective: PgnObjective::Targeted,
            noise_dim: 16,
            latent_dim: 32,
            hidden_dim: 128,
            optimizer: OptimizerKind::Adam,
        }
    }
}

impl PgnConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(format!("pgn config: {m}")));
        if !(self.kappa > 1.0) {
            return bad("kappa must exceed 1");
        }
        if !(self.c > 0.0) {
            return bad("C must be positive");
        }
        if !(self.alpha >= 0.0 && self.beta >= 0.0) {
            return bad("alpha and beta must be non-negative");
        }
        if self.batch_size == 0 || self.latent_dim == 0 || self.hidden_dim == 0 {
            return bad("batch, latent and hidden sizes must be positive");
        }
        if self.variant == PgnVariant::Generator && self.noise_dim == 0 {
            return bad("generator variant needs noise_dim > 0");
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad("learning rate must be finite and non-negative");
        }
        Ok(())
    }
}

/// Per-term loss values; `total = alpha * l_x + l_y + beta * l_c`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossBreakdown {
    pub l_x: f64,
    pub l_y: f64,
    pub l_c: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn compose(l_x: f64, l_y: f64, l_c: f64, alpha: f64, beta: f64) -> Self {
        Self {
            l_x,
            l_y,
            l_c,
            total: alpha * l_x + l_y + beta * l_c,
        }
    }

    fn first_non_finite(&self) -> Option<&'static str> {
        [
            ("l_x", self.l_x),
            ("l_y", self.l_y),
            ("l_c", self.l_c),
            ("total", self.total),
        ]
        .into_iter()
        .find(|(_, v)| !v.is_finite())
        .map(|(n, _)| n)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PgnModel {
    variant: PgnVariant,
    objective: PgnObjective,
    obs_dim: usize,
    noise_dim: usize,
    /// Autoencoder: `[encoder, decoder]`; generator: `[generator]`.
    nets: Vec<DenseNetwork>,
}

impl PgnModel {
    /// Xavier-initialised model for observations of length `obs_dim`.
    pub fn new<R: Rng + ?Sized>(obs_dim: usize, config: &PgnConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let (h, l) = (config.hidden_dim, config.latent_dim);
        let nets = match config.variant {
            PgnVariant::Autoencoder => vec![
                DenseNetwork::xavier(&[obs_dim, h, l], Activation::Relu, Activation::Identity, rng)?,
                DenseNetwork::xavier(&[l, h, obs_dim], Activation::Relu, Activation::Tanh, rng)?,
            ],
            PgnVariant::Generator => vec![DenseNetwork::xavier(
                &[obs_dim + config.noise_dim, h, h, obs_dim],
                Activation::Relu,
                Activation::Tanh,
                rng,
            )?],
        };
        Self::from_networks(config.variant, config.objective, config.noise_dim, nets)
    }

    pub fn from_networks(
        variant: PgnVariant,
        objective: PgnObjective,
        noise_dim: usize,
        nets: Vec<DenseNetwork>,
    ) -> Result<Self> {
        let (obs_dim, noise_dim) = match variant {
            PgnVariant::Autoencoder => {
                check_dim("autoencoder networks", 2, nets.len())?;
                check_dim("latent width", nets[0].output_dim(), nets[1].input_dim())?;
                check_dim("autoencoder output", nets[0].input_dim(), nets[1].output_dim())?;
                (nets[0].input_dim(), 0)
            }
            PgnVariant::Generator => {
                check_dim("generator networks", 1, nets.len())?;
                let obs = nets[0].output_dim();
                check_dim("generator input", obs + noise_dim, nets[0].input_dim())?;
                (obs, noise_dim)
            }
        };
        Ok(Self {
            variant,
            objective,
            obs_dim,
            noise_dim,
            nets,
        })
    }

    pub fn variant(&self) -> PgnVariant {
        self.variant
    }

    pub fn objective(&self) -> PgnObjective {
        self.objective
    }

    pub fn obs_dim(&self) -> usize {
        self.obs_dim
    }

    /// Zero for the autoencoder, which ignores noise.
    pub fn noise_dim(&self) -> usize {
        self.noise_dim
    }

    pub fn networks(&self) -> &[DenseNetwork] {
        &self.nets
    }

    pub fn networks_mut(&mut self) -> &mut [DenseNetwork] {
        &mut self.nets
    }

    pub fn parameters(&self) -> Vec<&[f64]> {
        self.nets.iter().flat_map(|n| n.parameters()).collect()
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut [f64]> {
        self.nets.iter_mut().flat_map(|n| n.parameters_mut()).collect()
    }

    /// Standard-normal noise of the right length (empty for the autoencoder).
    pub fn sample_noise<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        (0..self.noise_dim).map(|_| rng.sample(StandardNormal)).collect()
    }

    /// Returns `(delta, h(x))` for one observation.
    pub fn generate(&self, x: &[f64], z: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        check_dim("pgn observation", self.obs_dim, x.len())?;
        if self.variant == PgnVariant::Generator {
            check_dim("pgn noise", self.noise_dim, z.len())?;
        }
        let input = self.input_batch(&[x], &[z])?;
        let delta: Vec<f64> = self
            .forward(&input)?
            .into_vec()
            .into_iter()
            .map(|v| OUTPUT_SCALE * v)
            .collect();
        let h = clip_observation(&x.iter().zip(&delta).map(|(a, d)| a + d).collect::<Vec<_>>());
        Ok((delta, h))
    }

    fn input_batch(&self, xs: &[&[f64]], zs: &[&[f64]]) -> Result<Matrix> {
        match self.variant {
            PgnVariant::Autoencoder => Matrix::from_rows(xs),
            PgnVariant::Generator => {
                let rows: Vec<Vec<f64>> = xs
                    .iter()
                    .zip(zs)
                    .map(|(x, z)| [*x, *z].concat())
                    .collect();
                Matrix::from_rows(&rows)
            }
        }
    }

    fn forward(&self, input: &Matrix) -> Result<Matrix> {
        let mut cur = self.nets[0].forward_batch(input)?;
        for net in &self.nets[1..] {
            cur = net.forward_batch(&cur)?;
        }
        Ok(cur)
    }
}

/// Similarity term: Euclidean distance between `x` and `h(x)`.
pub fn loss_lx(x: &[f64], h_x: &[f64]) -> Result<f64> {
    crate::numerics::l2_distance(x, h_x)
}

/// Hinge on the perturbation norm.
pub fn hinge(delta: &[f64], c: f64) -> f64 {
    (l2_norm(delta) - c).max(0.0)
}

/// Value written into the target slot: `kappa * max(q)`. When `max(q)` is not
/// positive that product would not exceed the maximum, so the slot becomes
/// `max(q) + (kappa - 1) * |max(q)|` (with `|max(q)|` read as 1 at zero).
pub fn boosted_target_value(q: &[f64], kappa: f64) -> f64 {
    let m = max_value(q);
    if m > 0.0 {
        kappa * m
    } else {
        let scale = if m == 0.0 { 1.0 } else { m.abs() };
        m + (kappa - 1.0) * scale
    }
}

/// Re-ranked target distribution: the target action's Q-value is boosted
/// above the current maximum, the others are kept, and the result is passed
/// through softmax.
pub fn rerank(q: &[f64], a_target: usize, kappa: f64) -> Result<Vec<f64>> {
    if a_target >= q.len() {
        return Err(Error::InvalidArgument(format!(
            "target action {a_target} out of range for {} actions",
            q.len()
        )));
    }
    if !(kappa > 1.0) {
        return Err(Error::InvalidArgument("kappa must exceed 1".into()));
    }
    let mut boosted = q.to_vec();
    boosted[a_target] = boosted_target_value(q, kappa);
    Ok(softmax(&boosted))
}

/// Targeted effectiveness loss from Q-vectors, with its gradient with respect
/// to `q_adv`.
fn targeted_from_q(q_clean: &[f64], q_adv: &[f64], kappa: f64) -> Result<(f64, Vec<f64>)> {
    let a_target = argmin(q_clean);
    let target = rerank(q_clean, a_target, kappa)?;
    let p = softmax(q_adv);
    let loss = mse(&p, &target)?;
    let n = p.len() as f64;
    let dp: Vec<f64> = p.iter().zip(&target).map(|(a, t)| 2.0 * (a - t) / n).collect();
    Ok((loss, softmax_backward(&p, &dp)))
}

/// Untargeted effectiveness loss from Q-vectors, with its gradient with
/// respect to `q_adv`.
fn untargeted_from_q(q_clean: &[f64], q_adv: &[f64]) -> (f64, Vec<f64>) {
    let best = argmax(q_clean);
    let diff = q_clean[best] - q_adv[best];
    let d = diff * diff;
    let mut grad = vec![0.0; q_adv.len()];
    if d < LOG_FLOOR {
        return (UNTARGETED_OFFSET - LOG_FLOOR.ln(), grad);
    }
    grad[best] = 2.0 * diff / d;
    (UNTARGETED_OFFSET - d.ln(), grad)
}

/// `mse(softmax(Q(h(x))), rerank(Q(x), argmin Q(x), kappa))`.
pub fn loss_targeted(qnet: &QNetwork, x: &[f64], h_x: &[f64], kappa: f64) -> Result<f64> {
    Ok(targeted_from_q(&qnet.q_values(x)?, &qnet.q_values(h_x)?, kappa)?.0)
}

/// `10 - ln(max(d, 1e-12))` with `d = (Q(x, a*) - Q(h(x), a*))^2` and
/// `a* = argmax Q(x)`.
pub fn loss_untargeted(qnet: &QNetwork, x: &[f64], h_x: &[f64]) -> Result<f64> {
    Ok(untargeted_from_q(&qnet.q_values(x)?, &qnet.q_values(h_x)?).0)
}

/// Loss terms for one `(x, z)` pair.
pub fn total_loss(
    model: &PgnModel,
    qnet: &QNetwork,
    x: &[f64],
    z: &[f64],
    config: &PgnConfig,
) -> Result<LossBreakdown> {
    let q_clean = Matrix::from_rows(&[qnet.q_values(x)?])?;
    let zs = Matrix::from_rows(&[z])?;
    let (loss, _) = batch_objective(model, qnet, &[x], &q_clean, &zs, config, false)?;
    Ok(loss)
}

/// Loss terms for one `(x, z)` pair together with the gradient of `total`
/// with respect to every model parameter, flattened in
/// [`PgnModel::parameters`] order.
pub fn total_loss_with_gradient(
    model: &PgnModel,
    qnet: &QNetwork,
    x: &[f64],
    z: &[f64],
    config: &PgnConfig,
) -> Result<(LossBreakdown, Vec<f64>)> {
    let q_clean = Matrix::from_rows(&[qnet.q_values(x)?])?;
    let zs = Matrix::from_rows(&[z])?;
    let (loss, grads) = batch_objective(model, qnet, &[x], &q_clean, &zs, config, true)?;
    let flat = grads
        .expect("gradients requested")
        .iter()
        .flat_map(|g| g.flatten())
        .collect();
    Ok((loss, flat))
}

/// Batch-mean loss terms and, on request, parameter gradients of the mean
/// total. `q_clean` holds `Q(x)` for each row of `xs`.
fn batch_objective(
    model: &PgnModel,
    qnet: &QNetwork,
    xs: &[&[f64]],
    q_clean: &Matrix,
    zs: &Matrix,
    config: &PgnConfig,
    want_grads: bool,
) -> Result<(LossBreakdown, Option<Vec<Gradients>>)> {
    let batch = xs.len();
    if batch == 0 {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    check_dim("q-network input", qnet.input_dim(), model.obs_dim)?;
    check_dim("noise rows", batch, zs.rows())?;
    let z_rows: Vec<&[f64]> = (0..batch).map(|r| zs.row(r)).collect();
    let input = model.input_batch(xs, &z_rows)?;

    let mut passes = Vec::with_capacity(model.nets.len());
    let mut cur = input;
    for net in &model.nets {
        let pass = net.forward_pass(&cur)?;
        cur = pass.output().clone();
        passes.push(pass);
    }
    let raw = cur;

    let n = model.obs_dim;
    let mut delta = Matrix::zeros(batch, n);
    let mut h = Matrix::zeros(batch, n);
    let mut inside = vec![true; batch * n];
    for r in 0..batch {
        for j in 0..n {
            let d = OUTPUT_SCALE * raw.row(r)[j];
            let v = xs[r][j] + d;
            delta.row_mut(r)[j] = d;
            h.row_mut(r)[j] = v.clamp(0.0, 1.0);
            inside[r * n + j] = (0.0..=1.0).contains(&v);
        }
    }

    let q_pass = qnet.network().forward_pass(&h)?;
    let q_adv = q_pass.output();
    let mut dq = Matrix::zeros(batch, q_adv.cols());
    let mut sums = LossBreakdown::default();
    let mut d_delta = Matrix::zeros(batch, n);
    let inv_b = 1.0 / batch as f64;
    for r in 0..batch {
        let (l_y, g_q) = match model.objective {
            PgnObjective::Targeted => targeted_from_q(q_clean.row(r), q_adv.row(r), config.kappa)?,
            PgnObjective::Untargeted => untargeted_from_q(q_clean.row(r), q_adv.row(r)),
        };
        for (o, g) in dq.row_mut(r).iter_mut().zip(&g_q) {
            *o = g * inv_b;
        }
        let l_x = loss_lx(xs[r], h.row(r))?;
        let norm = l2_norm(delta.row(r));
        let l_c = (norm - config.c).max(0.0);
        sums.l_x += l_x;
        sums.l_y += l_y;
        sums.l_c += l_c;
        if want_grads {
            let g = d_delta.row_mut(r);
            if l_x > 0.0 {
                for j in 0..n {
                    if inside[r * n + j] {
                        g[j] += config.alpha * (h.row(r)[j] - xs[r][j]) / l_x * inv_b;
                    }
                }
            }
            if l_c > 0.0 {
                for j in 0..n {
                    g[j] += config.beta * delta.row(r)[j] / norm * inv_b;
                }
            }
        }
    }
    let mean = LossBreakdown::compose(
        sums.l_x * inv_b,
        sums.l_y * inv_b,
        sums.l_c * inv_b,
        config.alpha,
        config.beta,
    );
    if !want_grads {
        return Ok((mean, None));
    }

    let dh = qnet
        .network()
        .backward(&q_pass, &dq, false, true)?
        .input
        .expect("input gradient requested");
    let mut upstream = Matrix::zeros(batch, n);
    for r in 0..batch {
        for j in 0..n {
            let through_clip = if inside[r * n + j] { dh.row(r)[j] } else { 0.0 };
            upstream.row_mut(r)[j] = OUTPUT_SCALE * (d_delta.row(r)[j] + through_clip);
        }
    }

    let mut grads = vec![None; model.nets.len()];
    for (i, (net, pass)) in model.nets.iter().zip(&passes).enumerate().rev() {
        let back = net.backward(pass, &upstream, true, i > 0)?;
        grads[i] = back.params;
        if let Some(inp) = back.input {
            upstream = inp;
        }
    }
    Ok((mean, Some(grads.into_iter().map(|g| g.unwrap()).collect())))
}

/// Greedy rollouts of the frozen victim on seeds `seed..seed + episodes`;
/// every observation the victim acted on, in order.
pub fn collect_dataset(
    qnet: &QNetwork,
    env: EnvKind,
    episodes: usize,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    check_dim("q-network input", env.descriptor().observation_len(), qnet.input_dim())?;
    let mut game = env.make();
    let mut data = Vec::new();
    for i in 0..episodes as u64 {
        let mut obs = game.reset(seed + i).into_pixels();
        loop {
            let step = game.step(qnet.act_greedy(&obs)?)?;
            data.push(obs);
            if step.done {
                break;
            }
            obs = step.observation.into_pixels();
        }
    }
    Ok(data)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLoss {
    pub epoch: usize,
    pub loss: LossBreakdown,
}

#[derive(Debug, Clone)]
pub struct TrainedPgn {
    pub model: PgnModel,
    pub config: PgnConfig,
    pub curve: Vec<EpochLoss>,
}

/// Minibatch training against a frozen victim.
pub fn train_pgn(
    dataset: &[Vec<f64>],
    qnet: &QNetwork,
    config: &PgnConfig,
    seed: u64,
) -> Result<TrainedPgn> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(Error::InvalidArgument("cannot train a PGN on an empty dataset".into()));
    }
    let obs_dim = qnet.input_dim();
    for x in dataset {
        check_dim("dataset observation", obs_dim, x.len())?;
    }
    let mut rng = seeded_rng(seed);
    let mut model = PgnModel::new(obs_dim, config, &mut rng)?;
    let mut optimizer = Optimizer::new(config.optimizer, config.learning_rate)?;
    let q_clean = qnet
        .network()
        .forward_batch(&Matrix::from_rows(dataset)?)?;
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut curve = Vec::with_capacity(config.epochs);

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut sum = LossBreakdown::default();
        for chunk in order.chunks(config.batch_size) {
            let xs: Vec<&[f64]> = chunk.iter().map(|&i| dataset[i].as_slice()).collect();
            let qc = Matrix::from_rows(&chunk.iter().map(|&i| q_clean.row(i)).collect::<Vec<_>>())?;
            let noise: Vec<Vec<f64>> = chunk.iter().map(|_| model.sample_noise(&mut rng)).collect();
            let zs = Matrix::from_rows(&noise)?;
            let (loss, grads) = batch_objective(&model, qnet, &xs, &qc, &zs, config, true)?;
            if let Some(part) = loss.first_non_finite() {
                return Err(Error::Divergence(format!(
                    "PGN loss term {part} became non-finite in epoch {epoch}"
                )));
            }
            let grads = grads.expect("gradients requested");
            if !grads.iter().all(Gradients::is_finite) {
                return Err(Error::Divergence(format!(
                    "PGN gradients became non-finite in epoch {epoch}"
                )));
            }
            let slices: Vec<&[f64]> = grads.iter().flat_map(|g| g.slices()).collect();
            optimizer.step(model.parameters_mut(), &slices)?;
            let w = chunk.len() as f64;
            sum.l_x += loss.l_x * w;
            sum.l_y += loss.l_y * w;
            sum.l_c += loss.l_c * w;
        }
        let n = dataset.len() as f64;
        curve.push(EpochLoss {
            epoch,
            loss: LossBreakdown::compose(
                sum.l_x / n,
                sum.l_y / n,
                sum.l_c / n,
                config.alpha,
                config.beta,
            ),
        });
    }
    Ok(TrainedPgn {
        model,
        config: config.clone(),
        curve,
    })
}

pub const LOSS_CURVE_HEADER: &str = "epoch,l_x,l_y,l_c,total";

pub fn write_loss_curve_csv<W: Write>(out: &mut W, curve: &[EpochLoss]) -> Result<()> {
    writeln!(out, "{LOSS_CURVE_HEADER}")?;
    for e in curve {
        let l = e.loss;
        writeln!(out, "{},{:?},{:?},{:?},{:?}", e.epoch, l.l_x, l.l_y, l.l_c, l.total)?;
    }
    Ok(())
}

const PGN_KIND: &str = "pgn";
const DATASET_MAGIC: &str = "pgnkit-dataset v1";

impl TrainedPgn {
    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut c = Checkpoint::new(PGN_KIND);
        let cfg = &self.config;
        c.push_meta("variant", self.model.variant);
        c.push_meta("objective", self.model.objective);
        c.push_meta("noise_dim", self.model.noise_dim);
        c.push_meta("obs_dim", self.model.obs_dim);
        c.push_meta("pgn.learning_rate", format!("{:?}", cfg.learning_rate));
        c.push_meta("pgn.batch_size", cfg.batch_size);
        c.push_meta("pgn.epochs", cfg.epochs);
        c.push_meta("pgn.collect_episodes", cfg.collect_episodes);
        c.push_meta("pgn.alpha", format!("{:?}", cfg.alpha));
        c.push_meta("pgn.beta", format!("{:?}", cfg.beta));
        c.push_meta("pgn.kappa", format!("{:?}", cfg.kappa));
        c.push_meta("pgn.c", format!("{:?}", cfg.c));
        c.push_meta("pgn.noise_dim", cfg.noise_dim);
        c.push_meta("pgn.latent_dim", cfg.latent_dim);
        c.push_meta("pgn.hidden_dim", cfg.hidden_dim);
        let names: &[&str] = match self.model.variant {
            PgnVariant::Autoencoder => &["encoder", "decoder"],
            PgnVariant::Generator => &["generator"],
        };
        for (name, net) in names.iter().zip(&self.model.nets) {
            c.push_network(*name, net.clone());
        }
        c
    }

    /// Restores a model; the loss curve is not stored in checkpoints.
    pub fn from_checkpoint(c: &Checkpoint) -> Result<Self> {
        c.expect_kind(PGN_KIND)?;
        let variant: PgnVariant = c.meta_parse("variant")?;
        let objective: PgnObjective = c.meta_parse("objective")?;
        let noise_dim: usize = c.meta_parse("noise_dim")?;
        let nets = match variant {
            PgnVariant::Autoencoder => vec![
                c.require_network("encoder")?.clone(),
                c.require_network("decoder")?.clone(),
            ],
            PgnVariant::Generator => vec![c.require_network("generator")?.clone()],
        };
        let model = PgnModel::from_networks(variant, objective, noise_dim, nets)?;
        let config = PgnConfig {
            learning_rate: c.meta_parse("pgn.learning_rate")?,
            batch_size: c.meta_parse("pgn.batch_size")?,
            epochs: c.meta_parse("pgn.epochs")?,
            collect_episodes: c.meta_parse("pgn.collect_episodes")?,
            alpha: c.meta_parse("pgn.alpha")?,
            beta: c.meta_parse("pgn.beta")?,
            kappa: c.meta_parse("pgn.kappa")?,
            c: c.meta_parse("pgn.c")?,
            variant,
            objective,
            noise_dim: c.meta_parse("pgn.noise_dim")?,
            latent_dim: c.meta_parse("pgn.latent_dim")?,
            hidden_dim: c.meta_parse("pgn.hidden_dim")?,
            optimizer: OptimizerKind::Adam,
        };
        Ok(Self {
            model,
            config,
            curve: Vec::new(),
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_checkpoint().save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}

/// Writes a dataset: a header line, the observation length, then one
/// comma-separated observation per line.
pub fn write_dataset<W: Write>(out: &mut W, data: &[Vec<f64>]) -> Result<()> {
    writeln!(out, "{DATASET_MAGIC}")?;
    writeln!(out, "dim {}", data.first().map_or(0, Vec::len))?;
    for row in data {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
        writeln!(out, "{}", cells.join(","))?;
    }
    Ok(())
}

pub fn read_dataset<R: BufRead>(input: R) -> Result<Vec<Vec<f64>>> {
    let mut lines = input.lines();
    let header = lines.next().transpose()?.unwrap_or_default();
    if header.trim() != DATASET_MAGIC {
        return Err(Error::Format(format!("not a dataset file (header `{header}`)")));
    }
    let dim_line = lines.next().transpose()?.unwrap_or_default();
    let dim: usize = dim_line
        .strip_prefix("dim ")
        .and_then(|d| d.trim().parse().ok())
        .ok_or_else(|| Error::Format(format!("bad dimension line `{dim_line}`")))?;
    let mut data = Vec::new();
    for line in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let row = line
            .split(',')
            .map(|t| {
                t.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::Format(format!("bad number `{t}`")))
            })
            .collect::<Result<Vec<f64>>>()?;
        check_dim("dataset row", dim, row.len())?;
        data.push(row);
    }
    Ok(data)
}

/// Noise stream for attack-time generation, separate from training noise.
pub fn noise_rng(seed: u64) -> SeededRng {
    seeded_rng(seed ^ 0x5851_F42D_4C95_7F2D)
}
