//! Effectiveness and stealthiness measures.
//!
//! * ACR: fraction of steps whose attacked action equals the clean action.
//! * PSNR: `10 log10(max^2 / mse)` between clean and attacked frames.
//! * Delta R: reward damage normalised by `r_normal - r_min`.
//! * AR: `alpha * delta_r + beta * acr + gamma * psnr`.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::mse;

/// PSNR value substituted for a zero-MSE frame inside [`ar`].
pub const PSNR_CAP: f64 = 100.0;
/// Tolerance used when comparing recomputed AR values to the reference table.
pub const AR_TOLERANCE: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ArWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl Default for ArWeights {
    fn default() -> Self {
        Self {
            alpha: 0.5,
            beta: 0.49,
            gamma: 0.01,
        }
    }
}

impl ArWeights {
    pub fn new(alpha: f64, beta: f64, gamma: f64) -> Result<Self> {
        let w = Self { alpha, beta, gamma };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        let sum = self.alpha + self.beta + self.gamma;
        if (sum - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidArgument(format!(
                "AR weights must sum to 1, got {sum}"
            )));
        }
        if [self.alpha, self.beta, self.gamma].iter().any(|w| *w < 0.0) {
            return Err(Error::InvalidArgument("AR weights must be non-negative".into()));
        }
        Ok(())
    }
}

pub fn acr(n_same: usize, n_total: usize) -> Result<f64> {
    if n_total == 0 {
        return Err(Error::InvalidArgument("ACR over zero steps is undefined".into()));
    }
    if n_same > n_total {
        return Err(Error::InvalidArgument(format!(
            "n_same {n_same} exceeds n_total {n_total}"
        )));
    }
    Ok(n_same as f64 / n_total as f64)
}

/// Returns `f64::INFINITY` when the frames are identical.
pub fn psnr(x: &[f64], h_x: &[f64], max_value: f64) -> Result<f64> {
    let e = mse(x, h_x)?;
    if e == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (max_value * max_value / e).log10())
}

/// Mean of the finite entries; infinite when there are none.
pub fn mean_psnr(values: &[f64]) -> f64 {
    let finite: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
    if finite.is_empty() {
        f64::INFINITY
    } else {
        finite.iter().sum::<f64>() / finite.len() as f64
    }
}

/// `(r_normal - r_attacked) / (r_normal - r_min)`, clamped to `[0, 1]`.
pub fn delta_r(r_normal: f64, r_attacked: f64, r_min: f64) -> Result<f64> {
    if !(r_normal > r_min) {
        return Err(Error::InvalidArgument(format!(
            "normal return {r_normal} must exceed the minimum return {r_min}"
        )));
    }
    Ok(((r_normal - r_attacked) / (r_normal - r_min)).clamp(0.0, 1.0))
}

pub fn ar(delta_r: f64, acr: f64, psnr: f64, w: &ArWeights) -> Result<f64> {
    w.validate()?;
    let psnr = if psnr.is_infinite() && psnr > 0.0 {
        PSNR_CAP
    } else {
        psnr
    };
    if !(delta_r.is_finite() && acr.is_finite() && psnr.is_finite()) {
        return Err(Error::InvalidArgument("AR inputs must be finite".into()));
    }
    Ok(w.alpha * delta_r + w.beta * acr + w.gamma * psnr)
}

/// An attack is too weak when the agent mostly keeps its actions and loses
/// less than half of its reward.
pub fn classify_weak(acr: f64, reward_reduction: f64) -> bool {
    acr > 0.5 && reward_reduction < 0.5
}

/// One row of a run report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub method: String,
    pub env: String,
    pub mean_reward: f64,
    pub acr: f64,
    pub mean_psnr: f64,
    pub delta_r: f64,
    pub ar: f64,
    pub weak_attack: bool,
    pub gen_time_mean: f64,
}

pub const REPORT_HEADER: &str =
    "method,env,mean_reward,acr,psnr,delta_r,ar,weak,gen_time_mean_seconds";

impl MetricsReport {
    pub fn to_csv_row(&self) -> String {
        format!(
            "{},{},{:?},{:?},{:?},{:?},{:?},{},{:?}",
            self.method,
            self.env,
            self.mean_reward,
            self.acr,
            self.mean_psnr,
            self.delta_r,
            self.ar,
            self.weak_attack,
            self.gen_time_mean
        )
    }

    pub fn parse_csv_row(line: &str) -> Result<Self> {
        let cells: Vec<&str> = line.trim_end().split(',').collect();
        if cells.len() != 9 {
            return Err(Error::Format(format!(
                "report row needs 9 columns, got {}",
                cells.len()
            )));
        }
        let num = |i: usize| -> Result<f64> {
            cells[i]
                .parse()
                .map_err(|_| Error::Format(format!("bad number `{}`", cells[i])))
        };
        let weak_attack = match cells[7] {
            "true" => true,
            "false" => false,
            other => return Err(Error::Format(format!("bad weak flag `{other}`"))),
        };
        Ok(Self {
            method: cells[0].to_string(),
            env: cells[1].to_string(),
            mean_reward: num(2)?,
            acr: num(3)?,
            mean_psnr: num(4)?,
            delta_r: num(5)?,
            ar: num(6)?,
            weak_attack,
            gen_time_mean: num(8)?,
        })
    }
}

pub fn write_reports_csv<W: Write>(out: &mut W, reports: &[MetricsReport]) -> Result<()> {
    writeln!(out, "{REPORT_HEADER}")?;
    for r in reports {
        writeln!(out, "{}", r.to_csv_row())?;
    }
    Ok(())
}

pub fn read_reports_csv<R: BufRead>(input: R) -> Result<Vec<MetricsReport>> {
    let mut lines = input.lines();
    match lines.next().transpose()? {
        Some(h) if h.trim_end() == REPORT_HEADER => {}
        Some(h) => return Err(Error::Format(format!("unexpected report header `{h}`"))),
        None => return Err(Error::Format("empty report file".into())),
    }
    let mut out = Vec::new();
    for line in lines {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(MetricsReport::parse_csv_row(&line)?);
        }
    }
    Ok(out)
}

/// Published per-game results used as oracle inputs for [`verify_ar`].
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceRow {
    pub method: String,
    pub game: String,
    pub min_return: f64,
    pub reward: f64,
    /// Fraction in `[0, 1]`.
    pub acr: Option<f64>,
    pub psnr: Option<f64>,
    pub ar: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceTables {
    pub rows: Vec<ReferenceRow>,
}

const BUNDLED_TABLES: &str = include_str!("../data/reference_tables.csv");

impl ReferenceTables {
    pub fn bundled() -> Self {
        Self::parse(BUNDLED_TABLES).expect("bundled reference tables are well formed")
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines.next().unwrap_or_default();
        if header != "method,game,min_return,reward,acr_percent,psnr,ar" {
            return Err(Error::Format(format!("unexpected reference header `{header}`")));
        }
        let opt = |s: &str| -> Result<Option<f64>> {
            if s.is_empty() {
                Ok(None)
            } else {
                s.parse()
                    .map(Some)
                    .map_err(|_| Error::Format(format!("bad number `{s}`")))
            }
        };
        let mut rows = Vec::new();
        for line in lines.filter(|l| !l.trim().is_empty()) {
            let c: Vec<&str> = line.split(',').collect();
            if c.len() != 7 {
                return Err(Error::Format(format!("bad reference row `{line}`")));
            }
            let need = |s: &str| opt(s)?.ok_or_else(|| Error::Format(format!("missing value in `{line}`")));
            rows.push(ReferenceRow {
                method: c[0].to_string(),
                game: c[1].to_string(),
                min_return: need(c[2])?,
                reward: need(c[3])?,
                acr: opt(c[4])?.map(|p| p / 100.0),
                psnr: opt(c[5])?,
                ar: opt(c[6])?,
            });
        }
        Ok(Self { rows })
    }

    pub fn games(&self) -> Vec<&str> {
        let mut out: Vec<&str> = Vec::new();
        for r in &self.rows {
            if !out.contains(&r.game.as_str()) {
                out.push(&r.game);
            }
        }
        out
    }

    pub fn normal_reward(&self, game: &str) -> Result<f64> {
        self.rows
            .iter()
            .find(|r| r.game == game && r.method == "Normal")
            .map(|r| r.reward)
            .ok_or_else(|| Error::InvalidArgument(format!("no Normal row for {game}")))
    }

    /// Attack rows (everything except the unattacked baseline).
    pub fn attack_rows(&self) -> impl Iterator<Item = &ReferenceRow> {
        self.rows.iter().filter(|r| r.method != "Normal")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArCheck {
    pub method: String,
    pub game: String,
    pub expected: f64,
    pub computed: f64,
    pub passed: bool,
}

/// Recomputes every published AR cell from its reward, ACR and PSNR inputs.
pub fn verify_ar(tables: &ReferenceTables, w: &ArWeights, tolerance: f64) -> Result<Vec<ArCheck>> {
    let mut out = Vec::new();
    for row in tables.attack_rows() {
        let Some(expected) = row.ar else { continue };
        let (Some(a), Some(p)) = (row.acr, row.psnr) else {
            return Err(Error::Format(format!(
                "{}/{} has an AR value but no ACR/PSNR inputs",
                row.method, row.game
            )));
        };
        let d = delta_r(tables.normal_reward(&row.game)?, row.reward, row.min_return)?;
        let computed = ar(d, a, p, w)?;
        out.push(ArCheck {
            method: row.method.clone(),
            game: row.game.clone(),
            expected,
            computed,
            passed: (computed - expected).abs() <= tolerance,
        });
    }
    Ok(out)
}

/// Weak-attack flag for every attack row, using Delta R as the reduction.
pub fn classify_reference(tables: &ReferenceTables) -> Result<Vec<(String, String, bool)>> {
    tables
        .attack_rows()
        .map(|row| {
            let a = row.acr.ok_or_else(|| {
                Error::Format(format!("{}/{} has no ACR", row.method, row.game))
            })?;
            let d = delta_r(tables.normal_reward(&row.game)?, row.reward, row.min_return)?;
            Ok((row.method.clone(), row.game.clone(), classify_weak(a, d)))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn acr_examples() {
        assert_eq!(acr(100, 100).unwrap(), 1.0);
        assert_eq!(acr(0, 50).unwrap(), 0.0);
        assert_eq!(acr(163, 500).unwrap(), 0.326);
        assert!(acr(0, 0).is_err());
        assert!(acr(3, 2).is_err());
    }

    #[test]
    fn psnr_examples() {
        let x = [0.5; 4];
        let h = [0.6; 4];
        assert!((psnr(&x, &h, 1.0).unwrap() - 20.0).abs() < 1e-9);
        assert!(psnr(&[0.0], &[1.0], 1.0).unwrap().abs() < 1e-12);
        assert_eq!(psnr(&x, &x, 1.0).unwrap(), f64::INFINITY);
        assert_eq!(mean_psnr(&[f64::INFINITY, 10.0, 20.0]), 15.0);
        assert_eq!(mean_psnr(&[f64::INFINITY]), f64::INFINITY);
    }

    #[test]
    fn delta_r_examples() {
        assert_eq!(delta_r(21.0, -21.0, -21.0).unwrap(), 1.0);
        assert_eq!(delta_r(2155.0, 2155.0, 0.0).unwrap(), 0.0);
        assert!((delta_r(2155.0, 222.0, 0.0).unwrap() - 0.8970).abs() < 1e-4);
        assert_eq!(delta_r(10.0, 12.0, 0.0).unwrap(), 0.0);
        assert!(delta_r(0.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn ar_examples() {
        let w = ArWeights::default();
        assert!((ar(1.0, 0.0877, 15.86, &w).unwrap() - 0.7016).abs() < 1e-4);
        assert!((ar(0.9167, 0.0, 10.65, &w).unwrap() - 0.5648).abs() < 1e-4);
        assert_eq!(ar(0.0, 0.0, 0.0, &w).unwrap(), 0.0);
        assert_eq!(ar(0.0, 1.0, f64::INFINITY, &w).unwrap(), 0.49 + 1.0);
        let bad = ArWeights {
            alpha: 0.5,
            beta: 0.5,
            gamma: 0.5,
        };
        assert!(ar(0.0, 0.0, 0.0, &bad).is_err());
        assert!(ArWeights::new(0.2, 0.3, 0.4).is_err());
    }

    #[test]
    fn weak_rule_examples() {
        assert!(classify_weak(0.9857, (2155.0 - 2144.0) / 2155.0));
        assert!(!classify_weak(0.0, 1.0));
        assert!(!classify_weak(0.6, 0.6));
    }

    #[test]
    fn report_round_trip() {
        let r = MetricsReport {
            method: "pgd".into(),
            env: "minipong".into(),
            mean_reward: -2.8,
            acr: 0.125,
            mean_psnr: f64::INFINITY,
            delta_r: 0.912,
            ar: 0.1 + 0.2,
            weak_attack: false,
            gen_time_mean: 2.5e-3,
        };
        let mut buf = Vec::new();
        write_reports_csv(&mut buf, std::slice::from_ref(&r)).unwrap();
        let back = read_reports_csv(&buf[..]).unwrap();
        assert_eq!(back, vec![r]);
        assert!(read_reports_csv(&b"x\n"[..]).is_err());
    }

    #[test]
    fn bundled_tables_shape() {
        let t = ReferenceTables::bundled();
        assert_eq!(t.games(), vec!["Pong", "MsPacman", "SpaceInvaders", "Qbert"]);
        assert_eq!(t.rows.len(), 32);
        assert_eq!(t.rows.iter().filter(|r| r.ar.is_some()).count(), 20);
    }
}
