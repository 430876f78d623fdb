use std::fmt;
use std::fs;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{bail, Context, Result};
use pgnkit_core::agent::{train, write_curve_csv};
use pgnkit_core::harness::{benchmark_latency, run_evaluation, write_timing_csv, RunConfig};
use pgnkit_core::metrics::{read_reports_csv, verify_ar, ReferenceTables, REPORT_HEADER};
use pgnkit_core::pgn::{collect_dataset, read_dataset, train_pgn, write_dataset, write_loss_curve_csv};
use pgnkit_core::{Attack, AttackKind, AttackSpec, MetricsReport, PgnObjective, PgnVariant, TrainedAgent, TrainedPgn};

use crate::config::ProjectConfig;
use crate::{
    AttackArgs, BenchmarkArgs, Cli, CollectArgs, Command, ReportArgs, TrainAgentArgs, TrainPgnArgs, VerifyArgs,
};

pub const EXIT_OK: u8 = 0;
pub const EXIT_USAGE: u8 = 1;
pub const EXIT_RUNTIME: u8 = 2;
pub const EXIT_VERIFY: u8 = 3;

/// Attack method as named on the command line and in report tables.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    None,
    Fgsm,
    Pgd,
    Cw,
    Pgn(PgnObjective, PgnVariant),
}

impl Method {
    fn kind(self) -> AttackKind {
        match self {
            Method::None => AttackKind::None,
            Method::Fgsm => AttackKind::Fgsm,
            Method::Pgd => AttackKind::Pgd,
            Method::Cw => AttackKind::Cw,
            Method::Pgn(PgnObjective::Targeted, _) => AttackKind::PgnTargeted,
            Method::Pgn(PgnObjective::Untargeted, _) => AttackKind::PgnUntargeted,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Method::Pgn(o, v) => f.write_str(pgnkit_core::attacks::method_label(*o, *v)),
            other => write!(f, "{}", other.kind()),
        }
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        use PgnObjective::*;
        use PgnVariant::*;
        Ok(match s {
            "none" => Method::None,
            "fgsm" => Method::Fgsm,
            "pgd" => Method::Pgd,
            "cw" => Method::Cw,
            "t-pgna" => Method::Pgn(Targeted, Autoencoder),
            "t-pgng" => Method::Pgn(Targeted, Generator),
            "u-pgna" => Method::Pgn(Untargeted, Autoencoder),
            "u-pgng" => Method::Pgn(Untargeted, Generator),
            other => {
                return Err(format!(
                    "unknown method `{other}` (expected fgsm, pgd, cw, t-pgna, t-pgng, u-pgna, u-pgng or none)"
                ))
            }
        })
    }
}

/// Bad invocation detected after argument parsing.
#[derive(Debug)]
struct UsageError(String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn require_inputs(paths: &[&Path]) -> Result<()> {
    for p in paths {
        if !p.exists() {
            return Err(usage(format!("input {} does not exist", p.display())));
        }
    }
    Ok(())
}

fn create_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(())
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn write_file(path: &Path, f: impl FnOnce(&mut BufWriter<fs::File>) -> pgnkit_core::Result<()>) -> Result<()> {
    create_parent(path)?;
    let mut out = BufWriter::new(fs::File::create(path).with_context(|| format!("creating {}", path.display()))?);
    f(&mut out)?;
    out.flush()?;
    Ok(())
}

pub fn dispatch(cli: Cli) -> Result<u8> {
    let config = match cli.config.as_deref() {
        Some(p) => require_inputs(&[p]).and_then(|_| ProjectConfig::load(Some(p))),
        None => ProjectConfig::load(None),
    };
    let config = match config {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e:#}");
            return Ok(EXIT_USAGE);
        }
    };
    let result = match cli.command {
        Command::TrainAgent(a) => train_agent(&config, a),
        Command::Collect(a) => collect(&config, a),
        Command::TrainPgn(a) => train_pgn_cmd(&config, a),
        Command::Attack(a) => attack(&config, a),
        Command::BenchmarkTime(a) => benchmark(&config, a),
        Command::Report(a) => report(a),
        Command::VerifyAr(a) => verify(&config, a),
    };
    match result {
        Err(e) if e.is::<UsageError>() => {
            eprintln!("error: {e}");
            Ok(EXIT_USAGE)
        }
        other => other,
    }
}

fn train_agent(config: &ProjectConfig, a: TrainAgentArgs) -> Result<u8> {
    let mut dqn = config.dqn.clone();
    if let Some(n) = a.episodes {
        dqn.training_episodes = n;
    }
    let agent = train(a.env, &dqn, a.seed)?;
    create_parent(&a.out)?;
    agent.save(&a.out)?;
    let curve = a.curve.unwrap_or_else(|| with_suffix(&a.out, ".curve.csv"));
    write_file(&curve, |w| write_curve_csv(w, &agent.curve))?;
    match agent.final_eval_return {
        Some(r) => println!("trained {} agent, validation return {r}", a.env),
        None => println!("trained {} agent", a.env),
    }
    Ok(EXIT_OK)
}

fn collect(config: &ProjectConfig, a: CollectArgs) -> Result<u8> {
    require_inputs(&[&a.agent])?;
    let agent = TrainedAgent::load(&a.agent)?;
    let episodes = a.episodes.unwrap_or(config.pgn.collect_episodes);
    let data = collect_dataset(&agent.qnet, agent.env, episodes, a.seed)?;
    write_file(&a.out, |w| write_dataset(w, &data))?;
    println!("collected {} states from {episodes} episodes", data.len());
    Ok(EXIT_OK)
}

fn train_pgn_cmd(config: &ProjectConfig, a: TrainPgnArgs) -> Result<u8> {
    require_inputs(&[&a.agent, &a.data])?;
    let agent = TrainedAgent::load(&a.agent)?;
    let data = read_dataset(BufReader::new(fs::File::open(&a.data)?))?;
    if data.is_empty() {
        bail!("dataset {} holds no states", a.data.display());
    }
    let mut cfg = config.pgn.clone();
    if let Some(v) = a.variant {
        cfg.variant = v;
    }
    if let Some(o) = a.objective {
        cfg.objective = o;
    }
    if let Some(e) = a.epochs {
        cfg.epochs = e;
    }
    let trained = train_pgn(&data, &agent.qnet, &cfg, a.seed)?;
    create_parent(&a.out)?;
    trained.save(&a.out)?;
    let curve = a.loss_curve.unwrap_or_else(|| with_suffix(&a.out, ".loss.csv"));
    write_file(&curve, |w| write_loss_curve_csv(w, &trained.curve))?;
    let last = trained.curve.last().map(|e| e.loss.total).unwrap_or(f64::NAN);
    println!(
        "trained {} on {} states, final loss {last}",
        pgnkit_core::attacks::method_label(cfg.objective, cfg.variant),
        data.len()
    );
    Ok(EXIT_OK)
}

/// Attack parameters for `method`: the first matching `[[attacks]]` entry,
/// else the defaults.
fn spec_for(config: &ProjectConfig, method: Method, pgn: Option<&Path>) -> Result<AttackSpec> {
    let kind = method.kind();
    let mut spec = config
        .attacks
        .iter()
        .find(|s| s.kind == kind)
        .cloned()
        .unwrap_or_else(|| AttackSpec::of(kind));
    if let Method::Pgn(objective, variant) = method {
        let path = pgn.ok_or_else(|| usage(format!("--pgn is required for {method}")))?;
        require_inputs(&[path])?;
        let model = TrainedPgn::load(path)?.model;
        if model.objective() != objective || model.variant() != variant {
            return Err(usage(format!(
                "{} holds a {} model, not {method}",
                path.display(),
                pgnkit_core::attacks::method_label(model.objective(), model.variant())
            )));
        }
        spec.pgn_checkpoint = Some(path.to_path_buf());
    }
    Ok(spec)
}

fn attack(config: &ProjectConfig, a: AttackArgs) -> Result<u8> {
    require_inputs(&[&a.agent])?;
    if a.episodes == 0 {
        return Err(usage("--episodes must be at least 1"));
    }
    let env = TrainedAgent::load(&a.agent)?.env;
    let spec = spec_for(config, a.method, a.pgn.as_deref())?;
    let mut run = RunConfig::new(env, &a.agent, spec);
    run.episodes = a.episodes;
    run.base_seed = a.seed;
    run.weights = config.weights;
    run.output = Some(a.out.unwrap_or_else(|| config.report_dir().join(a.method.to_string())));
    let report = run_evaluation(&run)?;
    println!("{REPORT_HEADER}");
    println!("{}", report.to_csv_row());
    Ok(EXIT_OK)
}

fn benchmark(config: &ProjectConfig, a: BenchmarkArgs) -> Result<u8> {
    require_inputs(&[&a.agent])?;
    let paths: Vec<&Path> = a.pgn.iter().map(PathBuf::as_path).collect();
    require_inputs(&paths)?;
    if a.states < pgnkit_core::harness::MIN_TIMING_SAMPLES {
        return Err(usage(format!(
            "--states must be at least {}",
            pgnkit_core::harness::MIN_TIMING_SAMPLES
        )));
    }
    let agent = TrainedAgent::load(&a.agent)?;
    let mut attacks = Vec::new();
    for m in &a.methods {
        if matches!(m, Method::Pgn(..)) {
            return Err(usage(format!("time {m} by passing its checkpoint with --pgn")));
        }
        attacks.push(Attack::from_spec(&spec_for(config, *m, None)?, None)?);
    }
    for p in &a.pgn {
        attacks.push(Attack::Pgn(Box::new(TrainedPgn::load(p)?.model)));
    }
    let pool = collect_dataset(&agent.qnet, agent.env, 5, a.seed)?;
    let states: Vec<Vec<f64>> = pool.into_iter().cycle().take(a.states).collect();
    let stats = benchmark_latency(&agent.qnet, &states, &attacks, a.seed)?;
    let out = a.out.unwrap_or_else(|| config.report_dir().join("timing.csv"));
    write_file(&out, |w| write_timing_csv(w, &stats))?;
    write_timing_csv(&mut io::stdout().lock(), &stats)?;
    Ok(EXIT_OK)
}

pub const SUMMARY_HEADER: &str = "method,env,reward,acr_percent,psnr,ar,weak";

fn summary_row(r: &MetricsReport) -> String {
    let psnr = if r.mean_psnr.is_finite() {
        format!("{:.2}", r.mean_psnr)
    } else {
        "inf".to_string()
    };
    format!(
        "{},{},{:.2},{:.2},{psnr},{:.3},{}",
        r.method,
        r.env,
        r.mean_reward,
        100.0 * r.acr,
        r.ar,
        r.weak_attack
    )
}

fn report(a: ReportArgs) -> Result<u8> {
    let paths: Vec<&Path> = a.runs.iter().map(PathBuf::as_path).collect();
    require_inputs(&paths)?;
    let mut rows = Vec::new();
    for p in &a.runs {
        let file = fs::File::open(p).with_context(|| format!("opening {}", p.display()))?;
        rows.extend(read_reports_csv(BufReader::new(file)).with_context(|| format!("reading {}", p.display()))?);
    }
    let mut text = format!("{SUMMARY_HEADER}\n");
    for r in &rows {
        text.push_str(&summary_row(r));
        text.push('\n');
    }
    match a.out {
        Some(p) => {
            create_parent(&p)?;
            fs::write(&p, text)?;
        }
        None => print!("{text}"),
    }
    Ok(EXIT_OK)
}

fn verify(config: &ProjectConfig, a: VerifyArgs) -> Result<u8> {
    let tables = match &a.tables {
        Some(p) => {
            require_inputs(&[p])?;
            ReferenceTables::parse(&fs::read_to_string(p)?)?
        }
        None => ReferenceTables::bundled(),
    };
    let checks = verify_ar(&tables, &config.weights, a.tolerance)?;
    for c in &checks {
        println!(
            "{} {}/{}: computed {:.4}, reference {:.2}",
            if c.passed { "PASS" } else { "FAIL" },
            c.method,
            c.game,
            c.computed,
            c.expected
        );
    }
    let passed = checks.iter().filter(|c| c.passed).count();
    println!("{passed}/{} PASS", checks.len());
    Ok(if passed == checks.len() { EXIT_OK } else { EXIT_VERIFY })
}
