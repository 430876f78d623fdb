//! Attack evaluation protocol and latency benchmarking.
//!
//! Every step of an attacked episode perturbs the observation, lets the
//! victim act on the perturbed frame and records the clean action alongside
//! for ACR bookkeeping.

use std::fs;
use std::io::{BufRead, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::agent::{QNetwork, TrainedAgent};
use crate::attacks::{Attack, AttackKind, AttackSpec};
use crate::environments::EnvKind;
use crate::error::{check_dim, Error, Result};
use crate::metrics::{self, ArWeights, MetricsReport};
use crate::numerics::SeededRng;
use crate::pgn::{noise_rng, TrainedPgn};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub step_index: usize,
    pub clean_action: usize,
    pub attacked_action: usize,
    pub executed_action: usize,
    pub reward: f64,
    /// Infinite when the frame was left untouched.
    pub psnr: f64,
    pub gen_time_seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeTrace {
    pub seed: u64,
    pub records: Vec<StepRecord>,
    pub episode_return: f64,
}

impl EpisodeTrace {
    pub fn steps(&self) -> usize {
        self.records.len()
    }

    pub fn n_same(&self) -> usize {
        self.records
            .iter()
            .filter(|r| r.clean_action == r.attacked_action)
            .count()
    }

    /// Mean PSNR over the attacked steps of this episode.
    pub fn mean_psnr(&self) -> f64 {
        metrics::mean_psnr(&self.records.iter().map(|r| r.psnr).collect::<Vec<_>>())
    }
}

/// Plays one attacked episode on `seed`; generator noise comes from a stream
/// derived from the same seed.
pub fn run_episode(qnet: &QNetwork, env: EnvKind, attack: &Attack, seed: u64) -> Result<EpisodeTrace> {
    check_dim(
        "agent input vs environment frame",
        env.descriptor().observation_len(),
        qnet.input_dim(),
    )?;
    let mut game = env.make();
    let mut rng = noise_rng(seed);
    let mut obs = game.reset(seed).into_pixels();
    let mut records = Vec::new();
    let mut episode_return = 0.0;
    loop {
        let record = attacked_step(qnet, attack, &obs, &mut rng, records.len())?;
        let step = game.step(record.executed_action)?;
        episode_return += step.reward;
        records.push(StepRecord {
            reward: step.reward,
            ..record
        });
        if step.done {
            break;
        }
        obs = step.observation.into_pixels();
    }
    Ok(EpisodeTrace {
        seed,
        records,
        episode_return,
    })
}

fn attacked_step(
    qnet: &QNetwork,
    attack: &Attack,
    obs: &[f64],
    rng: &mut SeededRng,
    step_index: usize,
) -> Result<StepRecord> {
    let clean_action = qnet.act_greedy(obs)?;
    let (attacked_action, psnr, gen_time_seconds) = match attack {
        Attack::None => (clean_action, f64::INFINITY, 0.0),
        _ => {
            let ex = attack.perturb(qnet, obs, rng)?;
            (
                qnet.act_greedy(&ex.x_adv)?,
                metrics::psnr(obs, &ex.x_adv, 1.0)?,
                ex.gen_time_seconds,
            )
        }
    };
    Ok(StepRecord {
        step_index,
        clean_action,
        attacked_action,
        executed_action: attacked_action,
        reward: 0.0,
        psnr,
        gen_time_seconds,
    })
}

/// Pooled `(n_same, n_total)` over all episodes.
pub fn acr_components(traces: &[EpisodeTrace]) -> (usize, usize) {
    traces
        .iter()
        .fold((0, 0), |(s, t), e| (s + e.n_same(), t + e.steps()))
}

pub const TRACE_HEADER: &str =
    "step_index,clean_action,attacked_action,executed_action,reward,psnr,gen_time_seconds";

pub fn write_trace_csv<W: Write>(out: &mut W, trace: &EpisodeTrace) -> Result<()> {
    writeln!(out, "{TRACE_HEADER}")?;
    for r in &trace.records {
        writeln!(
            out,
            "{},{},{},{},{:?},{:?},{:?}",
            r.step_index,
            r.clean_action,
            r.attacked_action,
            r.executed_action,
            r.reward,
            r.psnr,
            r.gen_time_seconds
        )?;
    }
    Ok(())
}

/// Reads the step records of a trace file.
pub fn read_trace_csv<R: BufRead>(input: R) -> Result<Vec<StepRecord>> {
    let mut lines = input.lines();
    match lines.next().transpose()? {
        Some(h) if h.trim_end() == TRACE_HEADER => {}
        other => {
            return Err(Error::Format(format!(
                "unexpected trace header {:?}",
                other.unwrap_or_default()
            )))
        }
    }
    let mut out = Vec::new();
    for line in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let c: Vec<&str> = line.split(',').collect();
        if c.len() != 7 {
            return Err(Error::Format(format!("bad trace row `{line}`")));
        }
        let bad = |s: &str| Error::Format(format!("bad trace value `{s}`"));
        let int = |s: &str| s.parse::<usize>().map_err(|_| bad(s));
        let num = |s: &str| s.parse::<f64>().map_err(|_| bad(s));
        out.push(StepRecord {
            step_index: int(c[0])?,
            clean_action: int(c[1])?,
            attacked_action: int(c[2])?,
            executed_action: int(c[3])?,
            reward: num(c[4])?,
            psnr: num(c[5])?,
            gen_time_seconds: num(c[6])?,
        });
    }
    Ok(out)
}

/// Run-level evaluation of attacks against one victim. The no-attack
/// baseline is computed once on the same seeds and reused.
pub struct Evaluator<'a> {
    qnet: &'a QNetwork,
    env: EnvKind,
    episodes: usize,
    base_seed: u64,
    weights: ArWeights,
    baseline: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub report: MetricsReport,
    pub traces: Vec<EpisodeTrace>,
}

impl<'a> Evaluator<'a> {
    pub fn new(qnet: &'a QNetwork, env: EnvKind, episodes: usize, base_seed: u64) -> Result<Self> {
        if episodes == 0 {
            return Err(Error::InvalidArgument("evaluation needs at least one episode".into()));
        }
        Ok(Self {
            qnet,
            env,
            episodes,
            base_seed,
            weights: ArWeights::default(),
            baseline: None,
        })
    }

    pub fn with_weights(mut self, weights: ArWeights) -> Result<Self> {
        weights.validate()?;
        self.weights = weights;
        Ok(self)
    }

    /// Attaches a known no-attack mean return instead of recomputing it.
    pub fn with_baseline(mut self, mean_return: f64) -> Self {
        self.baseline = Some(mean_return);
        self
    }

    fn traces(&self, attack: &Attack) -> Result<Vec<EpisodeTrace>> {
        (0..self.episodes as u64)
            .map(|i| run_episode(self.qnet, self.env, attack, self.base_seed + i))
            .collect()
    }

    pub fn baseline(&mut self) -> Result<f64> {
        if let Some(b) = self.baseline {
            return Ok(b);
        }
        let traces = self.traces(&Attack::None)?;
        let b = mean_return(&traces);
        self.baseline = Some(b);
        Ok(b)
    }

    pub fn evaluate(&mut self, attack: &Attack) -> Result<RunOutcome> {
        let r_normal = self.baseline()?;
        let traces = self.traces(attack)?;
        let mean_reward = mean_return(&traces);
        let (n_same, n_total) = acr_components(&traces);
        let acr = metrics::acr(n_same, n_total)?;
        let episode_psnr: Vec<f64> = traces.iter().map(EpisodeTrace::mean_psnr).collect();
        let mean_psnr = metrics::mean_psnr(&episode_psnr);
        let delta_r = if attack.kind() == AttackKind::None {
            0.0
        } else {
            metrics::delta_r(r_normal, mean_reward, self.env.descriptor().min_return)?
        };
        let ar = metrics::ar(delta_r, acr, mean_psnr, &self.weights)?;
        let weak_attack = attack.kind() != AttackKind::None && metrics::classify_weak(acr, delta_r);
        let gen_time_mean = traces
            .iter()
            .flat_map(|t| t.records.iter().map(|r| r.gen_time_seconds))
            .sum::<f64>()
            / n_total as f64;
        Ok(RunOutcome {
            report: MetricsReport {
                method: attack.label(),
                env: self.env.to_string(),
                mean_reward,
                acr,
                mean_psnr,
                delta_r,
                ar,
                weak_attack,
                gen_time_mean,
            },
            traces,
        })
    }
}

fn mean_return(traces: &[EpisodeTrace]) -> f64 {
    traces.iter().map(|t| t.episode_return).sum::<f64>() / traces.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub env: EnvKind,
    pub agent_path: PathBuf,
    pub attack: AttackSpec,
    pub episodes: usize,
    pub base_seed: u64,
    #[serde(default)]
    pub weights: ArWeights,
    /// Directory receiving `report.csv` and per-episode trace files.
    pub output: Option<PathBuf>,
}

impl RunConfig {
    pub fn new(env: EnvKind, agent_path: impl Into<PathBuf>, attack: AttackSpec) -> Self {
        Self {
            env,
            agent_path: agent_path.into(),
            attack,
            episodes: 10,
            base_seed: 0,
            weights: ArWeights::default(),
            output: None,
        }
    }
}

/// Loads the victim (and PGN model if needed), runs the attack and, when an
/// output directory is configured, writes the report and traces there.
pub fn run_evaluation(config: &RunConfig) -> Result<MetricsReport> {
    let agent = TrainedAgent::load(&config.agent_path)?;
    if agent.env != config.env {
        return Err(Error::InvalidArgument(format!(
            "agent was trained on {} but the run targets {}",
            agent.env, config.env
        )));
    }
    let pgn = match config.attack.kind {
        AttackKind::PgnTargeted | AttackKind::PgnUntargeted => {
            let path = config.attack.pgn_checkpoint.as_ref().ok_or_else(|| {
                Error::InvalidArgument(format!("{} needs a PGN checkpoint", config.attack.kind))
            })?;
            Some(TrainedPgn::load(path)?.model)
        }
        _ => None,
    };
    let attack = Attack::from_spec(&config.attack, pgn)?;
    let mut evaluator = Evaluator::new(&agent.qnet, config.env, config.episodes, config.base_seed)?
        .with_weights(config.weights)?;
    let outcome = evaluator.evaluate(&attack)?;
    if let Some(dir) = &config.output {
        write_run_outputs(dir, &outcome)?;
    }
    Ok(outcome.report)
}

/// `report.csv` plus `trace_<method>_<seed>.csv` per episode.
pub fn write_run_outputs(dir: &Path, outcome: &RunOutcome) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut f = BufWriter::new(fs::File::create(dir.join("report.csv"))?);
    metrics::write_reports_csv(&mut f, std::slice::from_ref(&outcome.report))?;
    f.flush()?;
    for t in &outcome.traces {
        let name = format!("trace_{}_{}.csv", outcome.report.method, t.seed);
        let mut f = BufWriter::new(fs::File::create(dir.join(name))?);
        write_trace_csv(&mut f, t)?;
        f.flush()?;
    }
    Ok(())
}

pub const MIN_TIMING_SAMPLES: usize = 100;
pub const WARMUP_CALLS: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct TimingStats {
    pub method: String,
    pub mean_s: f64,
    pub median_s: f64,
    pub stddev_s: f64,
    pub n: usize,
}

impl TimingStats {
    pub fn from_samples(method: impl Into<String>, samples: &[f64]) -> Result<Self> {
        if samples.len() < 2 {
            return Err(Error::InvalidArgument("need at least two timing samples".into()));
        }
        let n = samples.len();
        let mean = samples.iter().sum::<f64>() / n as f64;
        let var = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let mut sorted = samples.to_vec();
        sorted.sort_by(f64::total_cmp);
        let median = if n % 2 == 1 {
            sorted[n / 2]
        } else {
            0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
        };
        Ok(Self {
            method: method.into(),
            mean_s: mean,
            median_s: median,
            stddev_s: var.sqrt(),
            n,
        })
    }
}

/// Wall-clock latency of one `perturb` call per state, for each attack.
/// Runs serially on the calling thread after [`WARMUP_CALLS`] untimed calls.
pub fn benchmark_latency(
    qnet: &QNetwork,
    states: &[Vec<f64>],
    attacks: &[Attack],
    seed: u64,
) -> Result<Vec<TimingStats>> {
    if states.len() < MIN_TIMING_SAMPLES {
        return Err(Error::InvalidArgument(format!(
            "latency benchmark needs at least {MIN_TIMING_SAMPLES} states, got {}",
            states.len()
        )));
    }
    let mut out = Vec::with_capacity(attacks.len());
    for attack in attacks {
        let mut rng = noise_rng(seed);
        for x in states.iter().cycle().take(WARMUP_CALLS) {
            attack.perturb(qnet, x, &mut rng)?;
        }
        let mut samples = Vec::with_capacity(states.len());
        for x in states {
            let started = Instant::now();
            let ex = attack.perturb(qnet, x, &mut rng)?;
            samples.push(started.elapsed().as_secs_f64());
            std::hint::black_box(ex);
        }
        out.push(TimingStats::from_samples(attack.label(), &samples)?);
    }
    Ok(out)
}

pub const TIMING_HEADER: &str = "method,mean_s,median_s,stddev_s,n";

pub fn write_timing_csv<W: Write>(out: &mut W, stats: &[TimingStats]) -> Result<()> {
    writeln!(out, "{TIMING_HEADER}")?;
    for s in stats {
        writeln!(
            out,
            "{},{:?},{:?},{:?},{}",
            s.method, s.mean_s, s.median_s, s.stddev_s, s.n
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::seeded_rng;

    fn tiny_agent(env: EnvKind) -> QNetwork {
        let d = env.descriptor();
        QNetwork::xavier(d.observation_len(), &[16], d.action_count, &mut seeded_rng(3)).unwrap()
    }

    #[test]
    fn no_attack_trace_is_consistent() {
        let q = tiny_agent(EnvKind::MiniPong);
        let t = run_episode(&q, EnvKind::MiniPong, &Attack::None, 2).unwrap();
        assert_eq!(t.n_same(), t.steps());
        assert!(t.steps() <= EnvKind::MiniPong.descriptor().max_steps);
        assert!(t.records.iter().all(|r| r.executed_action == r.clean_action));
        assert_eq!(t.mean_psnr(), f64::INFINITY);
        let total: f64 = t.records.iter().map(|r| r.reward).sum();
        assert_eq!(total, t.episode_return);
    }

    #[test]
    fn acr_components_add() {
        let rec = |same: bool| StepRecord {
            step_index: 0,
            clean_action: 0,
            attacked_action: usize::from(!same),
            executed_action: usize::from(!same),
            reward: 0.0,
            psnr: 30.0,
            gen_time_seconds: 0.0,
        };
        let ep = |k: usize| EpisodeTrace {
            seed: 0,
            records: (0..10).map(|i| rec(i < k)).collect(),
            episode_return: 0.0,
        };
        assert_eq!(acr_components(&[ep(3)]), (3, 10));
        assert_eq!(acr_components(&[ep(3), ep(7)]), (10, 20));
    }

    #[test]
    fn trace_round_trip() {
        let q = tiny_agent(EnvKind::Collector);
        let attack = Attack::Fgsm { epsilon: 0.1 };
        let t = run_episode(&q, EnvKind::Collector, &attack, 4).unwrap();
        let mut buf = Vec::new();
        write_trace_csv(&mut buf, &t).unwrap();
        assert_eq!(read_trace_csv(&buf[..]).unwrap(), t.records);
    }

    #[test]
    fn timing_stats_arithmetic() {
        let s = TimingStats::from_samples("x", &[1.0, 2.0, 3.0, 10.0]).unwrap();
        assert_eq!(s.mean_s, 4.0);
        assert_eq!(s.median_s, 2.5);
        assert!((s.stddev_s - (50.0f64 / 3.0).sqrt()).abs() < 1e-12);
        assert!(TimingStats::from_samples("x", &[1.0]).is_err());
    }

    #[test]
    fn benchmark_needs_enough_states() {
        let q = tiny_agent(EnvKind::MiniPong);
        let states = vec![vec![0.0; 144]; 10];
        assert!(benchmark_latency(&q, &states, &[Attack::None], 0).is_err());
    }

    #[test]
    fn evaluator_rejects_zero_episodes() {
        let q = tiny_agent(EnvKind::MiniPong);
        assert!(Evaluator::new(&q, EnvKind::MiniPong, 0, 0).is_err());
    }
}
