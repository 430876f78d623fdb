//! Deterministic toy games with grayscale grid observations in `[0, 1]`.
//!
//! Both games draw every random quantity from a generator seeded at
//! [`Environment::reset`], so a `(seed, action sequence)` pair fixes the
//! whole trajectory.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{seeded_rng, SeededRng};

pub const BACKGROUND: f64 = 0.0;
pub const BRIGHT: f64 = 1.0;
pub const PELLET: f64 = 0.6;

/// A flattened row-major grayscale frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pixels: Vec<f64>,
    width: usize,
    height: usize,
}

impl Observation {
    pub fn new(pixels: Vec<f64>, width: usize, height: usize) -> Result<Self> {
        if width == 0 || height == 0 || pixels.len() != width * height {
            return Err(Error::InvalidArgument(format!(
                "observation of {} pixels does not fit {width}x{height}",
                pixels.len()
            )));
        }
        if let Some(p) = pixels.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::InvalidArgument(format!("pixel {p} outside [0, 1]")));
        }
        Ok(Self {
            pixels,
            width,
            height,
        })
    }

    /// Builds an observation from arbitrary values by clamping into `[0, 1]`.
    /// NaN maps to 0.
    pub fn clamped(values: &[f64], width: usize, height: usize) -> Result<Self> {
        let pixels = values
            .iter()
            .map(|v| if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) })
            .collect();
        Self::new(pixels, width, height)
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn into_pixels(self) -> Vec<f64> {
        self.pixels
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    pub fn get(&self, col: usize, row: usize) -> f64 {
        self.pixels[row * self.width + col]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub observation: Observation,
    pub reward: f64,
    pub done: bool,
    /// Zero-based index of the step that produced this result.
    pub step_index: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EnvKind {
    MiniPong,
    Collector,
}

impl EnvKind {
    pub const ALL: [EnvKind; 2] = [EnvKind::MiniPong, EnvKind::Collector];

    pub fn descriptor(self) -> EnvDescriptor {
        match self {
            EnvKind::MiniPong => MiniPong::DESCRIPTOR,
            EnvKind::Collector => Collector::DESCRIPTOR,
        }
    }

    pub fn make(self) -> Box<dyn Environment> {
        match self {
            EnvKind::MiniPong => Box::new(MiniPong::new()),
            EnvKind::Collector => Box::new(Collector::new()),
        }
    }
}

impl fmt::Display for EnvKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EnvKind::MiniPong => "minipong",
            EnvKind::Collector => "collector",
        })
    }
}

impl FromStr for EnvKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "minipong" => Ok(EnvKind::MiniPong),
            "collector" => Ok(EnvKind::Collector),
            other => Err(Error::InvalidArgument(format!("unknown environment `{other}`"))),
        }
    }
}

/// Static facts about a game.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnvDescriptor {
    pub kind: EnvKind,
    pub width: usize,
    pub height: usize,
    pub action_count: usize,
    /// Lowest achievable episode return.
    pub min_return: f64,
    /// Highest achievable episode return.
    pub max_return: f64,
    pub max_steps: usize,
}

impl EnvDescriptor {
    pub fn observation_len(&self) -> usize {
        self.width * self.height
    }
}

pub trait Environment: Send {
    fn descriptor(&self) -> EnvDescriptor;

    /// Starts a new episode.
    fn reset(&mut self, seed: u64) -> Observation;

    fn step(&mut self, action: usize) -> Result<StepResult>;

    /// Current frame.
    fn observation(&self) -> Observation;

    fn is_done(&self) -> bool;

    /// One character per cell, one line per row.
    fn render_ascii(&self) -> String;

    fn min_return(&self) -> f64 {
        self.descriptor().min_return
    }

    fn max_return(&self) -> f64 {
        self.descriptor().max_return
    }
}

fn check_action(action: usize, action_count: usize) -> Result<()> {
    if action < action_count {
        Ok(())
    } else {
        Err(Error::InvalidAction {
            action,
            action_count,
        })
    }
}

fn random_direction(rng: &mut SeededRng) -> i32 {
    if rng.random_bool(0.5) {
        1
    } else {
        -1
    }
}

/// Single-paddle Pong on a 12x12 grid.
///
/// The paddle is a 3-cell vertical bar in column 0. The ball moves one cell
/// per axis per step and reflects off the top, bottom and right walls.
/// Reaching column 0 on a paddle row scores +1 and bounces the ball; missing
/// scores -1 and respawns the ball at the center with a fresh seeded
/// velocity. Episodes end after 5 misses or 400 steps.
#[derive(Debug, Clone)]
pub struct MiniPong {
    paddle_top: usize,
    ball: (i32, i32),
    velocity: (i32, i32),
    misses: usize,
    steps: usize,
    done: bool,
    rng: SeededRng,
}

/// Snapshot of the MiniPong state, for tests and debugging.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct MiniPongState {
    pub paddle_top: usize,
    pub ball: (i32, i32),
    pub velocity: (i32, i32),
    pub misses: usize,
    pub steps: usize,
}

impl MiniPong {
    pub const SIZE: usize = 12;
    pub const PADDLE_LEN: usize = 3;
    pub const MAX_MISSES: usize = 5;
    pub const MAX_STEPS: usize = 400;
    pub const STAY: usize = 0;
    pub const UP: usize = 1;
    pub const DOWN: usize = 2;
    pub const CENTER: (i32, i32) = (6, 6);

    /// Every hit takes at least 20 steps after the previous one and the
    /// first is possible at step 6, so 400 steps allow at most 20 hits.
    pub const DESCRIPTOR: EnvDescriptor = EnvDescriptor {
        kind: EnvKind::MiniPong,
        width: Self::SIZE,
        height: Self::SIZE,
        action_count: 3,
        min_return: -(Self::MAX_MISSES as f64),
        max_return: 20.0,
        max_steps: Self::MAX_STEPS,
    };

    pub fn new() -> Self {
        let mut env = Self {
            paddle_top: 0,
            ball: Self::CENTER,
            velocity: (1, 1),
            misses: 0,
            steps: 0,
            done: false,
            rng: seeded_rng(0),
        };
        env.reset(0);
        env
    }

    pub fn state(&self) -> MiniPongState {
        MiniPongState {
            paddle_top: self.paddle_top,
            ball: self.ball,
            velocity: self.velocity,
            misses: self.misses,
            steps: self.steps,
        }
    }

    fn respawn(&mut self) {
        self.ball = Self::CENTER;
        self.velocity = (random_direction(&mut self.rng), random_direction(&mut self.rng));
    }
}

impl Default for MiniPong {
    fn default() -> Self {
        Self::new()
    }
}

impl Environment for MiniPong {
    fn descriptor(&self) -> EnvDescriptor {
        Self::DESCRIPTOR
    }

    fn reset(&mut self, seed: u64) -> Observation {
        self.rng = seeded_rng(seed);
        self.paddle_top = (Self::SIZE - Self::PADDLE_LEN) / 2;
        self.misses = 0;
        self.steps = 0;
        self.done = false;
        self.respawn();
        self.observation()
    }

    fn step(&mut self, action: usize) -> Result<StepResult> {
        check_action(action, Self::DESCRIPTOR.action_count)?;
        if self.done {
            return Err(Error::EpisodeDone);
        }
        let max_top = Self::SIZE - Self::PADDLE_LEN;
        match action {
            Self::UP => self.paddle_top = self.paddle_top.saturating_sub(1),
            Self::DOWN => self.paddle_top = (self.paddle_top + 1).min(max_top),
            _ => {}
        }

        let last = Self::SIZE as i32 - 1;
        let (mut vx, mut vy) = self.velocity;
        let (bx, by) = self.ball;
        if by + vy < 0 || by + vy > last {
            vy = -vy;
        }
        let ny = by + vy;
        let mut reward = 0.0;
        if bx + vx > last {
            vx = -vx;
        }
        let mut nx = bx + vx;
        let mut respawned = false;
        if nx <= 0 {
            let row = ny as usize;
            if (self.paddle_top..self.paddle_top + Self::PADDLE_LEN).contains(&row) {
                reward = 1.0;
                vx = -vx;
                nx = bx + vx;
            } else {
                reward = -1.0;
                self.misses += 1;
                self.respawn();
                respawned = true;
            }
        }
        if !respawned {
            self.ball = (nx, ny);
            self.velocity = (vx, vy);
        }

        let step_index = self.steps;
        self.steps += 1;
        self.done = self.misses >= Self::MAX_MISSES || self.steps >= Self::MAX_STEPS;
        Ok(StepResult {
            observation: self.observation(),
            reward,
            done: self.done,
            step_index,
        })
    }

    fn observation(&self) -> Observation {
        let n = Self::SIZE;
        let mut pixels = vec![BACKGROUND; n * n];
        for row in self.paddle_top..self.paddle_top + Self::PADDLE_LEN {
            pixels[row * n] = BRIGHT;
        }
        let (bx, by) = self.ball;
        pixels[by as usize * n + bx as usize] = BRIGHT;
        Observation::new(pixels, n, n).expect("frame is well formed")
    }

    fn is_done(&self) -> bool {
        self.done
    }

    fn render_ascii(&self) -> String {
        let n = Self::SIZE;
        let mut out = String::with_capacity(n * (n + 1));
        for row in 0..n {
            for col in 0..n {
                let c = if col == 0
                    && (self.paddle_top..self.paddle_top + Self::PADDLE_LEN).contains(&row)
                {
                    '#'
                } else if (col as i32, row as i32) == self.ball {
                    'o'
                } else {
                    '.'
                };
                out.push(c);
            }
            out.push('\n');
        }
        out
    }
}

/// Pellet collection on a 10x10 grid.
///
/// The agent starts at the center; 8 pellets are scattered by the reset
/// seed. Each pellet picked up scores +1. Episodes end when all pellets are
/// gone or after 200 steps.
#[derive(Debug, Clone)]
pub struct Collector {
    agent: (usize, usize),
    pellets: Vec<bool>,
    remaining: usize,
    steps: usize,
    done: bool,
}

impl Collector {
    pub const SIZE: usize = 10;
    pub const PELLETS: usize = 8;
    pub const MAX_STEPS: usize = 200;
    pub const START: (usize, usize) = (5, 5);
    pub const UP: usize = 0;
    pub const DOWN: usize = 1;
    pub const LEFT: usize = 2;
    pub const RIGHT: usize = 3;
    pub const STAY: usize = 4;

    pub const DESCRIPTOR: EnvDescriptor = EnvDescriptor {
        kind: EnvKind::Collector,
        width: Self::SIZE,
        height: Self::SIZE,
        action_count: 5,
        min_return: 0.0,
        max_return: Self::PELLETS as f64,
        max_steps: Self::MAX_STEPS,
    };

    pub fn new() -> Self {
        let mut env = Self {
            agent: Self::START,
            pellets: vec![false; Self::SIZE * Self::SIZE],
            remaining: 0,
            steps: 0,
            done: false,
        };
        env.reset(0);
        env
    }

    /// `(col, row)` of the agent.
    pub fn agent(&self) -> (usize, usize) {
        self.agent
    }

    pub fn remaining(&self) -> usize {
        self.remaining
    }

    pub fn has_pellet(&self, col: usize, row: usize) -> bool {
        self.pellets[row * Self::SIZE + col]
    }
}

impl Default for Collector {
    fn default() -> Self {
        Self::new()
    }
}

impl Environment for Collector {
    fn descriptor(&self) -> EnvDescriptor {
        Self::DESCRIPTOR
    }

    fn reset(&mut self, seed: u64) -> Observation {
        let mut rng = seeded_rng(seed);
        let n = Self::SIZE;
        self.agent = Self::START;
        self.pellets = vec![false; n * n];
        let start = Self::START.1 * n + Self::START.0;
        let mut placed = 0;
        while placed < Self::PELLETS {
            let cell = rng.random_range(0..n * n);
            if cell != start && !self.pellets[cell] {
                self.pellets[cell] = true;
                placed += 1;
            }
        }
        self.remaining = Self::PELLETS;
        self.steps = 0;
        self.done = false;
        self.observation()
    }

    fn step(&mut self, action: usize) -> Result<StepResult> {
        check_action(action, Self::DESCRIPTOR.action_count)?;
        if self.done {
            return Err(Error::EpisodeDone);
        }
        let last = Self::SIZE - 1;
        let (col, row) = self.agent;
        self.agent = match action {
            Self::UP => (col, row.saturating_sub(1)),
            Self::DOWN => (col, (row + 1).min(last)),
            Self::LEFT => (col.saturating_sub(1), row),
            Self::RIGHT => ((col + 1).min(last), row),
            _ => (col, row),
        };
        let cell = self.agent.1 * Self::SIZE + self.agent.0;
        let mut reward = 0.0;
        if self.pellets[cell] {
            self.pellets[cell] = false;
            self.remaining -= 1;
            reward = 1.0;
        }
        let step_index = self.steps;
        self.steps += 1;
        self.done = self.remaining == 0 || self.steps >= Self::MAX_STEPS;
        Ok(StepResult {
            observation: self.observation(),
            reward,
            done: self.done,
            step_index,
        })
    }

    fn observation(&self) -> Observation {
        let n = Self::SIZE;
        let mut pixels: Vec<f64> = self
            .pellets
            .iter()
            .map(|&p| if p { PELLET } else { BACKGROUND })
            .collect();
        pixels[self.agent.1 * n + self.agent.0] = BRIGHT;
        Observation::new(pixels, n, n).expect("frame is well formed")
    }

    fn is_done(&self) -> bool {
        self.done
    }

    fn render_ascii(&self) -> String {
        let n = Self::SIZE;
        let mut out = String::with_capacity(n * (n + 1));
        for row in 0..n {
            for col in 0..n {
                out.push(if (col, row) == self.agent {
                    '@'
                } else if self.pellets[row * n + col] {
                    '*'
                } else {
                    '.'
                });
            }
            out.push('\n');
        }
        out
    }
}

/// One row of a trajectory dump.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryRecord {
    pub step_index: usize,
    pub action: usize,
    pub reward: f64,
    pub done: bool,
}

pub const TRAJECTORY_HEADER: &str = "step_index,action,reward,done";

pub fn write_trajectory_csv<W: Write>(out: &mut W, records: &[TrajectoryRecord]) -> Result<()> {
    writeln!(out, "{TRAJECTORY_HEADER}")?;
    for r in records {
        writeln!(out, "{},{},{:?},{}", r.step_index, r.action, r.reward, r.done)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bright_cells(obs: &Observation) -> Vec<(usize, usize)> {
        let mut cells = Vec::new();
        for row in 0..obs.height() {
            for col in 0..obs.width() {
                if obs.get(col, row) == BRIGHT {
                    cells.push((col, row));
                }
            }
        }
        cells
    }

    #[test]
    fn minipong_initial_frame_layout() {
        let mut env = MiniPong::new();
        let a = env.reset(7);
        let b = env.reset(7);
        assert_eq!(a, b);
        let cells = bright_cells(&a);
        assert_eq!(cells.len(), 4);
        let paddle: Vec<_> = cells.iter().filter(|c| c.0 == 0).collect();
        assert_eq!(paddle.len(), 3);
        assert!(paddle.windows(2).all(|w| w[1].1 == w[0].1 + 1));
        let ball: Vec<_> = cells.iter().filter(|c| c.0 != 0).collect();
        assert_eq!(ball, vec![&(6, 6)]);
        assert!(a.pixels().iter().all(|&p| p == BRIGHT || p == BACKGROUND));
    }

    #[test]
    fn minipong_paddle_clamps_at_top() {
        let mut env = MiniPong::new();
        env.reset(1);
        for _ in 0..6 {
            env.step(MiniPong::UP).unwrap();
        }
        assert_eq!(env.state().paddle_top, 0);
        env.step(MiniPong::UP).unwrap();
        assert_eq!(env.state().paddle_top, 0);
    }

    #[test]
    fn minipong_hit_flips_velocity() {
        // Hand-simulated: the ball sits in column 1 heading left and down,
        // the paddle covers the row the ball moves into.
        let mut env = MiniPong::new();
        env.reset(0);
        env.ball = (1, 4);
        env.velocity = (-1, 1);
        env.paddle_top = 4;
        let r = env.step(MiniPong::STAY).unwrap();
        assert_eq!(r.reward, 1.0);
        assert_eq!(env.state().velocity, (1, 1));
        assert_eq!(env.state().ball, (2, 5));
        assert_eq!(r.observation.get(2, 5), BRIGHT);
    }

    #[test]
    fn minipong_miss_respawns_at_center() {
        let mut env = MiniPong::new();
        env.reset(0);
        env.ball = (1, 10);
        env.velocity = (-1, 1);
        env.paddle_top = 0;
        let r = env.step(MiniPong::STAY).unwrap();
        assert_eq!(r.reward, -1.0);
        assert_eq!(env.state().ball, MiniPong::CENTER);
        assert_eq!(env.state().misses, 1);
    }

    #[test]
    fn minipong_walls_reflect() {
        let mut env = MiniPong::new();
        env.reset(0);
        env.ball = (11, 0);
        env.velocity = (1, -1);
        env.step(MiniPong::STAY).unwrap();
        assert_eq!(env.state().ball, (10, 1));
        assert_eq!(env.state().velocity, (-1, 1));
    }

    #[test]
    fn step_errors() {
        let mut env = MiniPong::new();
        env.reset(0);
        assert!(matches!(env.step(3), Err(Error::InvalidAction { .. })));
        let mut steps = 0;
        while !env.is_done() {
            env.step(MiniPong::STAY).unwrap();
            steps += 1;
        }
        assert!(steps <= MiniPong::MAX_STEPS);
        assert!(matches!(env.step(0), Err(Error::EpisodeDone)));
        env.reset(0);
        assert!(env.step(0).is_ok());
    }

    #[test]
    fn collector_pickup() {
        let mut env = Collector::new();
        let obs = env.reset(3);
        assert_eq!(obs.len(), 100);
        assert_eq!(obs.pixels().iter().filter(|&&p| p == PELLET).count(), 8);
        // Put a pellet directly right of the agent.
        let (c, r) = env.agent();
        if !env.has_pellet(c + 1, r) {
            env.pellets[r * Collector::SIZE + c + 1] = true;
            env.remaining += 1;
        }
        let before = env.remaining();
        let res = env.step(Collector::RIGHT).unwrap();
        assert_eq!(res.reward, 1.0);
        assert_eq!(env.remaining(), before - 1);
        assert!(!env.has_pellet(c + 1, r));
        assert_eq!(res.observation.get(c + 1, r), BRIGHT);
    }

    #[test]
    fn descriptors() {
        assert_eq!(EnvKind::MiniPong.descriptor().min_return, -5.0);
        assert_eq!(EnvKind::Collector.descriptor().min_return, 0.0);
        for kind in EnvKind::ALL {
            let d = kind.descriptor();
            assert!(d.min_return < d.max_return && d.action_count >= 2);
            assert_eq!(kind.to_string().parse::<EnvKind>().unwrap(), kind);
        }
        assert!("pong".parse::<EnvKind>().is_err());
    }

    #[test]
    fn ascii_render_shape() {
        let env = MiniPong::new();
        let art = env.render_ascii();
        assert_eq!(art.lines().count(), 12);
        assert_eq!(art.matches('#').count(), 3);
        assert_eq!(art.matches('o').count(), 1);
        let env = Collector::new();
        assert_eq!(env.render_ascii().matches('*').count(), 8);
    }

    #[test]
    fn trajectory_dump() {
        let mut buf = Vec::new();
        let recs = [TrajectoryRecord {
            step_index: 0,
            action: 2,
            reward: -1.0,
            done: true,
        }];
        write_trajectory_csv(&mut buf, &recs).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "step_index,action,reward,done\n0,2,-1.0,true\n"
        );
    }
}
