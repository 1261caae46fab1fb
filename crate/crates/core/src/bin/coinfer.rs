use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use coinfer::agents::{load_checkpoint, oracle_best, save_checkpoint, train, AgentKind, Checkpoint};
use coinfer::config::ExperimentConfig;
use coinfer::environment::reward;
use coinfer::profile::{load_profile, validate_profile, ModelProfile};
use coinfer::report::{quantize_report, run_sweep, write_csv, EVAL_HEADER};
use coinfer::system_model::{Action, ChannelMode};
use coinfer::{Error, Result, MB_PER_S};

/// Device-edge collaborative inference simulator and decision optimizers.
#[derive(Parser)]
#[command(name = "coinfer", version)]
struct Cli {
    /// Experiment config (JSON). Defaults apply to every missing field.
    #[arg(long, global = true, env = "COINFER_CONFIG")]
    config: Option<PathBuf>,
    /// Directory for every file this run writes.
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,
    /// Profile path; overrides the config.
    #[arg(long, global = true)]
    profile: Option<PathBuf>,
    /// Channel model; overrides the config.
    #[arg(long, global = true)]
    mode: Option<ChannelMode>,
    /// Comma-separated bit set; overrides the config.
    #[arg(long, global = true, value_delimiter = ',')]
    bits: Option<Vec<u8>>,
    /// Device energy budget in joules; overrides config and profile.
    #[arg(long, global = true)]
    energy_budget: Option<f64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Profile utilities.
    Profile {
        #[command(subcommand)]
        command: ProfileCommand,
    },
    /// Evaluate one action at one bandwidth.
    Evaluate {
        #[arg(long)]
        ep: usize,
        #[arg(long)]
        pp: usize,
        /// Quantization bits for the transmitted feature map.
        #[arg(long = "c", alias = "quant-bits")]
        c: u8,
        /// MB/s.
        #[arg(long)]
        bandwidth: f64,
    },
    /// Exhaustive best decision at one bandwidth.
    Oracle {
        /// MB/s.
        #[arg(long)]
        bandwidth: f64,
    },
    /// Train an agent; writes a checkpoint and a metrics CSV.
    Train {
        #[arg(long)]
        agent: Option<AgentKind>,
        #[arg(long)]
        steps: Option<u64>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Sweep the bandwidth grid with the oracle, trained agents and the
    /// on-device reference.
    Sweep {
        /// Trained agents as NAME=PATH (or just PATH; the name defaults to the agent kind).
        #[arg(long = "checkpoint")]
        checkpoints: Vec<String>,
    },
    /// Per-layer compression and accuracy for each bit-width.
    QuantizeReport {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Subcommand)]
enum ProfileCommand {
    /// Check every profile invariant and list violations.
    Validate { path: PathBuf },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 1 } else { 2 })
        }
    }
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(p) = &cli.profile {
        cfg.profile = Some(std::path::absolute(p).unwrap_or_else(|_| p.clone()));
    }
    if let Some(m) = cli.mode {
        cfg.channel_mode = m;
    }
    if let Some(b) = &cli.bits {
        cfg.bits = b.clone();
    }
    if let Some(e) = cli.energy_budget {
        cfg.reward.energy_budget_j = Some(e);
    }
    cfg.validate()?;
    Ok(cfg)
}

fn out_path(cli: &Cli, name: &str) -> Result<PathBuf> {
    std::fs::create_dir_all(&cli.out_dir).map_err(|e| io_err(&cli.out_dir, e))?;
    Ok(cli.out_dir.join(name))
}

fn io_err(path: &Path, e: std::io::Error) -> Error {
    Error::Io { path: path.to_path_buf(), source: e }
}

fn run(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::Profile { command: ProfileCommand::Validate { path } } => validate(path),
        Command::Evaluate { ep, pp, c, bandwidth } => evaluate(&cli, Action { ep: *ep, pp: *pp, bits: *c }, *bandwidth),
        Command::Oracle { bandwidth } => oracle(&cli, *bandwidth),
        Command::Train { agent, steps, seed } => train_cmd(&cli, *agent, *steps, *seed),
        Command::Sweep { checkpoints } => sweep(&cli, checkpoints),
        Command::QuantizeReport { seed } => quant_report(&cli, *seed),
    }
}

fn validate(path: &Path) -> Result<()> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    // Parse without validating so every violation can be listed.
    let profile: ModelProfile = serde_json::from_str(&text)?;
    let violations = validate_profile(&profile);
    if violations.is_empty() {
        let p = load_profile(path)?;
        println!(
            "ok: {} layers, exits {:?}",
            p.layers().len(),
            p.exits().iter().map(|e| (e.layer_count, e.accuracy)).collect::<Vec<_>>()
        );
        Ok(())
    } else {
        Err(Error::Validation(violations))
    }
}

fn evaluate(cli: &Cli, action: Action, bandwidth_mb: f64) -> Result<()> {
    let exp = load_config(cli)?.build()?;
    let bw = bandwidth_mb * MB_PER_S;
    if !exp.evaluator.space().is_valid(&action) {
        return Err(Error::Config(format!("action {action} is not in the action space")));
    }
    let r = exp.evaluator.evaluate(&action, &exp.evaluator.channel(exp.config.channel_mode, bw))?;
    let rw = reward(&r, bw, &exp.reward)?;
    let line = format!(
        "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
        action.ep,
        action.pp,
        action.bits,
        bandwidth_mb,
        r.device_latency_ms,
        r.transmission_latency_ms,
        r.edge_latency_ms,
        r.total_latency_ms,
        r.compute_energy_j,
        r.transmission_energy_j,
        r.total_energy_j,
        r.accuracy,
        r.transmitted_bytes,
        rw
    );
    println!("{EVAL_HEADER}\n{line}");
    let path = out_path(cli, "evaluate.csv")?;
    std::fs::write(&path, format!("{EVAL_HEADER}\n{line}\n")).map_err(|e| io_err(&path, e))
}

fn oracle(cli: &Cli, bandwidth_mb: f64) -> Result<()> {
    let exp = load_config(cli)?.build()?;
    let bw = bandwidth_mb * MB_PER_S;
    let d = oracle_best(&exp.evaluator, exp.config.channel_mode, bw, &exp.reward);
    let rows = coinfer::report::oracle_rows(&exp, &[bw], coinfer::par::Exec::Sequential);
    let path = out_path(cli, "oracle.csv")?;
    write_csv(&path, &rows)?;
    let r = &rows[0];
    println!("bandwidth_mb,ep,pp,c,latency_ms,accuracy,energy_j,reward");
    println!(
        "{},{},{},{},{},{},{},{}",
        r.bandwidth_mb, d.action.ep, d.action.pp, d.action.bits, r.latency_ms, r.accuracy, r.energy_j, d.reward
    );
    Ok(())
}

fn train_cmd(cli: &Cli, agent: Option<AgentKind>, steps: Option<u64>, seed: Option<u64>) -> Result<()> {
    let mut cfg = load_config(cli)?;
    if let Some(a) = agent {
        cfg.agent = a;
    }
    if let Some(s) = steps {
        cfg.train.total_steps = s;
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.train.seed = cfg.seed;
    let exp = cfg.build()?;
    let mut agent = exp.new_agent(cfg.agent, cfg.seed)?;
    let mut env = exp.train_env(cfg.seed)?;
    let start = std::time::Instant::now();
    let summary = train(&mut agent, &mut env, &cfg.train)?;
    let stem = format!("{}_seed{}", kind_slug(cfg.agent), cfg.seed);
    let ckpt = out_path(cli, &format!("{stem}.ckpt.json"))?;
    save_checkpoint(&ckpt, &Checkpoint::new(agent, summary.env_steps))?;
    let metrics = out_path(cli, &format!("{stem}.metrics.csv"))?;
    summary.write_metrics_csv(&metrics)?;
    println!(
        "trained {} for {} steps ({} updates) in {:.1}s\ncheckpoint: {}\nmetrics: {}",
        cfg.agent,
        summary.env_steps,
        summary.updates,
        start.elapsed().as_secs_f64(),
        ckpt.display(),
        metrics.display()
    );
    Ok(())
}

fn kind_slug(k: AgentKind) -> &'static str {
    match k {
        AgentKind::Sac => "sac",
        AgentKind::Dqn => "dqn",
    }
}

fn sweep(cli: &Cli, specs: &[String]) -> Result<()> {
    let exp = load_config(cli)?.build()?;
    let mut agents = Vec::new();
    for spec in specs {
        let (name, path) = match spec.split_once('=') {
            Some((n, p)) => (Some(n.to_string()), PathBuf::from(p)),
            None => (None, PathBuf::from(spec)),
        };
        let ckpt = load_checkpoint(&path)?;
        ckpt.check_space(exp.evaluator.space())?;
        let name = name.unwrap_or_else(|| ckpt.agent.kind().to_string());
        agents.push((name, ckpt.agent));
    }
    let report = run_sweep(&exp, &agents)?;
    let csv_path = out_path(cli, "sweep.csv")?;
    write_csv(&csv_path, &report.rows)?;
    let summary_path = out_path(cli, "sweep_summary.json")?;
    std::fs::write(&summary_path, serde_json::to_string_pretty(&report.summary)?)
        .map_err(|e| io_err(&summary_path, e))?;

    println!(
        "{:>6}  {:<10} {:>3} {:>3} {:>3} {:>11} {:>8} {:>9} {:>7}",
        "B MB/s", "optimizer", "ep", "pp", "c", "latency ms", "acc", "energy J", "reward"
    );
    for r in &report.rows {
        println!(
            "{:>6.2}  {:<10} {:>3} {:>3} {:>3} {:>11.3} {:>8.4} {:>9.5} {:>7.4}",
            r.bandwidth_mb, r.optimizer, r.ep, r.pp, r.c, r.latency_ms, r.accuracy, r.energy_j, r.reward
        );
    }
    println!();
    for o in &report.summary.optimizers {
        println!(
            "{:<10} mean reward {:.4} ({:.1}% of oracle)",
            o.optimizer,
            o.mean_reward,
            100.0 * o.fraction_of_oracle
        );
    }
    let s = &report.summary.speedup;
    if let (Some(a), Some(x)) = (s.best_split, s.speedup) {
        println!("speedup at {} MB/s: {:.2}x ({a} vs on-device {:.2} ms)", s.bandwidth_mb, x, s.on_device_latency_ms);
    }
    println!("wrote {} and {}", csv_path.display(), summary_path.display());
    Ok(())
}

fn quant_report(cli: &Cli, seed: u64) -> Result<()> {
    let cfg = load_config(cli)?;
    let profile = cfg.load_profile()?;
    let bits = cli.bits.clone().unwrap_or_else(|| vec![4, 8, 12, 16]);
    let mut quant = cfg.quant.clone();
    if bits.iter().any(|b| !quant.allowed_bits.contains(b)) {
        quant.allowed_bits.extend(bits.iter().copied());
    }
    let rows = quantize_report(&profile, &bits, &quant, seed)?;
    let path = out_path(cli, "quantize_report.csv")?;
    write_csv(&path, &rows)?;
    println!(
        "{:>5} {:<8} {:>4} {:>12} {:>12} {:>7} {:>8}",
        "layer", "name", "bits", "raw B", "coded B", "ratio", "acc"
    );
    for r in &rows {
        println!(
            "{:>5} {:<8} {:>4} {:>12.0} {:>12} {:>7.4} {:>8.4}",
            r.layer, r.name, r.bits, r.raw_bytes, r.compressed_bytes, r.ratio, r.accuracy
        );
    }
    println!("wrote {}", path.display());
    Ok(())
}
