use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;
use thiserror::Error;

use sgsd_core::extraction::Extractor;
use sgsd_core::gate::{gate_grad, gate_grad_bound, gate_loss, GateParams};
use sgsd_core::policy::ToyPolicy;
use sgsd_core::skillbank::{
    format_id, hierarchical_merge, BankEntry, CommonMistake, GeneralSkill, LayerCounts, Origin, SkillBank,
    LATEST_BANK_FILE,
};
use sgsd_core::trainer::{
    derive_seed, evaluate, initial_bank, train, BankSource, ConfigError, RunConfig, TrainError, World,
    FINAL_POLICY_FILE,
};

#[derive(Debug, Parser)]
#[command(name = "sgsd", version, about = "Skill-conditioned gated self-distillation on a toy policy")]
struct Cli {
    /// Run configuration (TOML); defaults are used when omitted
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Directory receiving every output file
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Only log errors
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build a static bank from student rollouts on seed problems
    Coldstart,
    /// Run the training loop
    Train,
    /// Evaluate a policy checkpoint on the task pool
    Eval(EvalArgs),
    /// Skill bank utilities
    #[command(subcommand)]
    Bank(BankCommand),
    /// Tabulate the gated loss and its gradient over a grid of gaps
    GateCurve(GateCurveArgs),
    /// Print the effective configuration as TOML
    ShowConfig,
}

#[derive(Debug, Args)]
struct EvalArgs {
    /// Defaults to the final policy of a training run under --out
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Samples per task; defaults to `eval_samples`
    #[arg(long)]
    samples: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum BankCommand {
    /// Print entry counts, ids and the static/dynamic split
    Inspect {
        /// Defaults to the latest bank under --out
        path: Option<PathBuf>,
    },
    /// Merge a bank's entries with the configured extractor
    Merge { path: Option<PathBuf> },
    /// List per-step bank snapshots under --out
    SnapshotList,
}

#[derive(Debug, Args)]
struct GateCurveArgs {
    #[arg(long, default_value_t = 1.0)]
    tau: f64,
    #[arg(long, default_value_t = -6.0, allow_hyphen_values = true)]
    min: f64,
    #[arg(long, default_value_t = 6.0, allow_hyphen_values = true)]
    max: f64,
    #[arg(long, default_value_t = 0.01)]
    step: f64,
    /// Also render gate_curve.svg
    #[arg(long)]
    svg: bool,
}

#[derive(Debug, Error)]
enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Config(_) => 3,
            CliError::Runtime(_) => 4,
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Config(c) => CliError::Config(c),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

fn load_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn create_out(out: &Path) -> Result<(), CliError> {
    fs::create_dir_all(out).map_err(|e| runtime(format!("cannot create {}: {e}", out.display())))
}

fn plural(n: usize, one: &str, many: &str) -> String {
    format!("{n} {}", if n == 1 { one } else { many })
}

fn describe(bank: &SkillBank) -> String {
    let ids = |v: Vec<&str>| if v.is_empty() { "-".to_string() } else { v.join(", ") };
    let (ss, sm) = bank.count_origin(Origin::Static);
    let (ds, dm) = bank.count_origin(Origin::Dynamic);
    format!(
        "{}, {}\ngeneral skills: {}\ncommon mistakes: {}\nstatic: {ss} skills, {sm} mistakes\ndynamic: {ds} skills, {dm} mistakes\n",
        plural(bank.general_skills.len(), "general skill", "general skills"),
        plural(bank.common_mistakes.len(), "common mistake", "common mistakes"),
        ids(bank.general_skills.iter().map(|e| e.id()).collect()),
        ids(bank.common_mistakes.iter().map(|e| e.id()).collect()),
    )
}

fn bank_path(cli: &Cli, path: &Option<PathBuf>) -> PathBuf {
    path.clone().unwrap_or_else(|| cli.out.join("bank").join(LATEST_BANK_FILE))
}

fn merged<E: BankEntry>(
    entries: &[E],
    extractor: &dyn Extractor,
    cfg: &RunConfig,
) -> Result<(Vec<E>, Vec<usize>), CliError> {
    let r = hierarchical_merge::<E>(entries.iter().map(E::to_candidate).collect(), extractor, cfg.merge_params())
        .map_err(runtime)?;
    let items = r
        .items
        .into_iter()
        .enumerate()
        .map(|(i, c)| E::from_candidate(c, format_id(E::PREFIX, i + 1), Origin::Static, None))
        .collect();
    Ok((items, r.layer_counts))
}

fn gate_curve(cli: &Cli, args: &GateCurveArgs) -> Result<(), CliError> {
    let params = GateParams::new(args.tau).map_err(|e| CliError::Usage(format!("--tau: {e}")))?;
    if !(args.step > 0.0) || !(args.max >= args.min) || !args.min.is_finite() || !args.max.is_finite() {
        return Err(CliError::Usage("grid needs finite --min <= --max and a positive --step".into()));
    }
    let n = ((args.max - args.min) / args.step + 1e-9).floor() as usize + 1;
    let mut rows = Vec::with_capacity(n);
    for i in 0..n {
        let d = args.min + i as f64 * args.step;
        rows.push((d, gate_loss(d, params).map_err(runtime)?, gate_grad(d, params).map_err(runtime)?));
    }
    create_out(&cli.out)?;
    let csv_path = cli.out.join("gate_curve.csv");
    let mut text = String::from("delta,loss,grad\n");
    for (d, l, g) in &rows {
        writeln!(text, "{d},{l},{g}").expect("string write");
    }
    fs::write(&csv_path, text).map_err(runtime)?;
    if args.svg {
        let svg_path = cli.out.join("gate_curve.svg");
        fs::write(&svg_path, render_svg(&rows, gate_grad_bound(params), args.tau)).map_err(runtime)?;
    }
    if !cli.quiet {
        println!("{} grid points written to {}", rows.len(), csv_path.display());
    }
    Ok(())
}

fn render_svg(rows: &[(f64, f64, f64)], bound: f64, tau: f64) -> String {
    let (w, h, pad) = (640.0, 400.0, 40.0);
    let (x0, x1) = (rows[0].0, rows[rows.len() - 1].0);
    let top = bound.max(std::f64::consts::LN_2) * 1.1;
    let sx = |x: f64| pad + (x - x0) / (x1 - x0).max(f64::EPSILON) * (w - 2.0 * pad);
    let sy = |y: f64| h / 2.0 - y / top * (h / 2.0 - pad);
    let line = |pick: fn(&(f64, f64, f64)) -> f64| {
        rows.iter()
            .map(|r| format!("{:.2},{:.2}", sx(r.0), sy(pick(r))))
            .collect::<Vec<_>>()
            .join(" ")
    };
    let mut s = String::new();
    writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#).unwrap();
    writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#).unwrap();
    writeln!(s, r##"<line x1="{pad}" y1="{0}" x2="{1}" y2="{0}" stroke="#999"/>"##, sy(0.0), w - pad).unwrap();
    for b in [bound, -bound] {
        writeln!(
            s,
            r##"<line x1="{pad}" y1="{0:.2}" x2="{1}" y2="{0:.2}" stroke="#bbb" stroke-dasharray="4 4"/>"##,
            sy(b),
            w - pad
        )
        .unwrap();
    }
    writeln!(s, r##"<polyline fill="none" stroke="#1f77b4" stroke-width="2" points="{}"/>"##, line(|r| r.1)).unwrap();
    writeln!(s, r##"<polyline fill="none" stroke="#d62728" stroke-width="2" points="{}"/>"##, line(|r| r.2)).unwrap();
    writeln!(s, r##"<text x="{pad}" y="20" font-family="sans-serif" font-size="13">gated loss (blue) and gradient (red), tau = {tau}; dashed: gradient bound</text>"##).unwrap();
    s.push_str("</svg>\n");
    s
}

fn dispatch(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::GateCurve(args) => gate_curve(cli, args),
        Command::ShowConfig => {
            print!("{}", load_config(cli)?.to_toml());
            Ok(())
        }
        Command::Train => {
            let cfg = load_config(cli)?;
            let report = train(&cfg, Some(&cli.out))?;
            if !cli.quiet {
                let s = &report.summary;
                println!(
                    "{} steps: success {:.4} -> {:.4}; bank {} skills, {} mistakes; outputs in {}",
                    s.steps,
                    s.initial_success,
                    s.final_success,
                    s.general_skills,
                    s.common_mistakes,
                    cli.out.display()
                );
            }
            Ok(())
        }
        Command::Eval(args) => {
            let cfg = load_config(cli)?;
            let world = World::build(&cfg)?;
            let path = args.checkpoint.clone().unwrap_or_else(|| cli.out.join(FINAL_POLICY_FILE));
            let policy = ToyPolicy::load(&path).map_err(|e| runtime(format!("{}: {e}", path.display())))?;
            if *policy.shape() != world.shape {
                return Err(runtime(format!("{} does not match the configured policy shape", path.display())));
            }
            let samples = args.samples.unwrap_or(cfg.eval_samples);
            let rate = evaluate(&policy, &world.tasks, &world.vocab, samples, derive_seed(cfg.seed, "eval"))?;
            create_out(&cli.out)?;
            let report = serde_json::json!({
                "checkpoint": path.display().to_string(),
                "tasks": world.tasks.len(),
                "samples": samples,
                "success_rate": rate,
            });
            let text = serde_json::to_string_pretty(&report).expect("json value serializes") + "\n";
            fs::write(cli.out.join("eval.json"), text).map_err(runtime)?;
            if !cli.quiet {
                println!("success rate {rate:.4} over {} tasks x {samples} samples", world.tasks.len());
            }
            Ok(())
        }
        Command::Coldstart => {
            let cfg = RunConfig {
                bank_source: BankSource::ColdStart,
                ..load_config(cli)?
            };
            let world = World::build(&cfg)?;
            let extractor = cfg.extractor_config().build().map_err(runtime)?;
            let bank = initial_bank(&cfg, &world, extractor.as_ref())?;
            let path = cli.out.join("bank").join(LATEST_BANK_FILE);
            create_out(&cli.out.join("bank"))?;
            bank.save(&path).map_err(runtime)?;
            info!("cold-start bank written to {}", path.display());
            if !cli.quiet {
                print!("{}", describe(&bank));
            }
            Ok(())
        }
        Command::Bank(BankCommand::Inspect { path }) => {
            let bank = SkillBank::load(&bank_path(cli, path)).map_err(runtime)?;
            print!("{}", describe(&bank));
            Ok(())
        }
        Command::Bank(BankCommand::Merge { path }) => {
            let cfg = load_config(cli)?;
            let source = bank_path(cli, path);
            let bank = SkillBank::load(&source).map_err(runtime)?;
            let extractor = cfg.extractor_config().build().map_err(runtime)?;
            let (skills, sc) = merged::<GeneralSkill>(&bank.general_skills, extractor.as_ref(), &cfg)?;
            let (mistakes, mc) = merged::<CommonMistake>(&bank.common_mistakes, extractor.as_ref(), &cfg)?;
            let mut out = SkillBank {
                general_skills: skills,
                common_mistakes: mistakes,
                metadata: bank.metadata.clone(),
                extra: bank.extra.clone(),
            };
            out.metadata.layer_merge_counts = LayerCounts {
                general_skills: sc,
                common_mistakes: mc,
            };
            let dest = cli.out.join("bank").join("merged_bank.json");
            create_out(&cli.out.join("bank"))?;
            out.save(&dest).map_err(runtime)?;
            if !cli.quiet {
                println!("merged bank written to {}", dest.display());
                print!("{}", describe(&out));
            }
            Ok(())
        }
        Command::Bank(BankCommand::SnapshotList) => {
            let dir = cli.out.join("bank");
            let entries = fs::read_dir(&dir).map_err(|e| runtime(format!("{}: {e}", dir.display())))?;
            let mut snaps: Vec<(u64, String)> = entries
                .filter_map(|e| e.ok())
                .filter_map(|e| {
                    let name = e.file_name().to_string_lossy().into_owned();
                    let step = name.strip_prefix("bank_step_")?.strip_suffix(".json")?.parse().ok()?;
                    Some((step, name))
                })
                .collect();
            snaps.sort();
            for (step, name) in snaps {
                println!("{step}\t{}", dir.join(name).display());
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = if cli.quiet { "error" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let kind = match e {
                CliError::Usage(_) => "usage error",
                CliError::Config(_) => "config error",
                CliError::Runtime(_) => "error",
            };
            eprintln!("{kind}: {e}");
            ExitCode::from(e.code())
        }
    }
}
