use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::info;

use moodfed::data::{default_cohort, GeneratorConfig, Label};
use moodfed::experiment::{build_parties, report_json, write_metrics_csv};
use moodfed::{
    generate_synthetic, load_dataset, prepare_split, run_gradcheck, run_on_split, save_dataset,
    sweep_configs, ExperimentConfig, HeadKind, OptimizerKind, Protocol, SessionSample, SweepGrid,
};

#[derive(Parser)]
#[command(name = "moodfed", version, args_override_self = true, about = "Federated multi-view mood classification simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic keystroke corpus as JSONL.
    Generate(GenerateArgs),
    /// Show how a corpus is split into parties.
    Partition(PartitionArgs),
    /// Train one protocol and write the metrics CSV and report JSON.
    Run(RunArgs),
    /// Compare analytic gradients with finite differences.
    Gradcheck(GradcheckArgs),
    /// Run every protocol over the party-count or data-size grid.
    Sweep(SweepArgs),
}

#[derive(Args)]
struct GenerateArgs {
    /// Generator constants as JSON; missing fields keep their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Total users, split 40/30/30 across normal, BD-I and BD-II.
    #[arg(long)]
    users: Option<usize>,
    /// Sessions per user.
    #[arg(long)]
    sessions: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PartitionArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long, default_value_t = 8)]
    parties: usize,
    #[arg(long, default_value_t = 1500)]
    per_party: usize,
    #[arg(long)]
    noniid: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also write party membership (sample ids) as JSON.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Experiment settings; each flag overrides the config file.
#[derive(Args, Default)]
struct Overrides {
    /// JSON file with experiment settings.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Corpus JSONL; without it the default synthetic corpus is generated
    /// from the seed.
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Directory for metrics.csv and report.json.
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long)]
    model: Option<HeadKind>,
    #[arg(long)]
    rounds: Option<usize>,
    #[arg(long)]
    local_epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    dropout: Option<f64>,
    #[arg(long)]
    optimizer: Option<OptimizerKind>,
    #[arg(long)]
    parties: Option<usize>,
    #[arg(long)]
    per_party: Option<usize>,
    /// Hospital-style split by user (4 parties).
    #[arg(long)]
    noniid: bool,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    hidden_dim: Option<usize>,
    #[arg(long)]
    head_units: Option<usize>,
    #[arg(long)]
    eval_every: Option<usize>,
    /// Write measured seconds per round instead of 0.
    #[arg(long)]
    record_time: bool,
}

impl Overrides {
    fn resolve(&self, protocol: Option<Protocol>) -> Result<ExperimentConfig> {
        let mut c = match &self.config {
            Some(path) => {
                let text = fs::read_to_string(path)
                    .with_context(|| format!("reading config {}", path.display()))?;
                serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?
            }
            None => ExperimentConfig::default(),
        };
        macro_rules! set {
            ($($field:ident),*) => {
                $(if let Some(v) = self.$field.clone() { c.$field = v.into(); })*
            };
        }
        set!(model, batch_size, learning_rate, dropout, optimizer, parties, per_party, seed, hidden_dim, eval_every);
        if self.rounds.is_some() {
            c.rounds = self.rounds;
        }
        if self.local_epochs.is_some() {
            c.local_epochs = self.local_epochs;
        }
        if self.head_units.is_some() {
            c.head_units = self.head_units;
        }
        if let Some(p) = protocol {
            c.protocol = p;
        }
        if let Some(d) = &self.dataset {
            c.dataset = Some(d.clone());
        }
        if let Some(o) = &self.output {
            c.output = Some(o.clone());
        }
        c.noniid |= self.noniid;
        c.record_time |= self.record_time;
        c.validate()?;
        Ok(c)
    }
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    protocol: Option<Protocol>,
    #[command(flatten)]
    settings: Overrides,
}

#[derive(Args)]
struct GradcheckArgs {
    /// dnn, dfm, dmvm; all three when omitted.
    #[arg(long)]
    model: Option<HeadKind>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 10)]
    instances: usize,
    #[arg(long, hide = true)]
    corrupt: bool,
}

#[derive(Args)]
struct SweepArgs {
    /// `parties` (4..24 parties at 1500 each) or `data` (100..3000 per party, 8 parties).
    #[arg(long)]
    grid: SweepGrid,
    /// Comma-separated protocols.
    #[arg(long, value_delimiter = ',', default_value = "local,cds,fedavg,iil,ciil")]
    protocols: Vec<Protocol>,
    #[command(flatten)]
    settings: Overrides,
}

fn load_corpus(config: &ExperimentConfig) -> Result<Vec<SessionSample>> {
    match &config.dataset {
        Some(path) => load_dataset(path).with_context(|| format!("loading dataset {}", path.display())),
        None => {
            info!("no --dataset given; generating the default corpus with seed {}", config.seed);
            let gen = GeneratorConfig::default();
            Ok(generate_synthetic(&default_cohort(&gen, config.seed)?, &gen, config.seed)?)
        }
    }
}

fn create_file(path: &Path) -> Result<BufWriter<fs::File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating directory {}", dir.display()))?;
    }
    let f = fs::File::create(path).with_context(|| format!("cannot write {}", path.display()))?;
    Ok(BufWriter::new(f))
}

fn cmd_generate(args: GenerateArgs) -> Result<()> {
    let mut config = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
        }
        None => GeneratorConfig::default(),
    };
    if let Some(users) = args.users {
        config = config.with_users(users);
    }
    if let Some(sessions) = args.sessions {
        config.sessions_per_user = sessions;
        config.session_counts = None;
    }
    let profiles = default_cohort(&config, args.seed)?;
    let samples = generate_synthetic(&profiles, &config, args.seed)?;
    save_dataset(&samples, &args.out).with_context(|| format!("cannot write {}", args.out.display()))?;
    let positive = samples.iter().filter(|s| s.label == Label::Positive).count();
    println!(
        "wrote {} sessions from {} users to {} ({} positive, {:.1}%)",
        samples.len(),
        profiles.len(),
        args.out.display(),
        positive,
        100.0 * positive as f64 / samples.len().max(1) as f64
    );
    Ok(())
}

fn cmd_partition(args: PartitionArgs) -> Result<()> {
    let config = ExperimentConfig {
        parties: args.parties,
        per_party: args.per_party,
        noniid: args.noniid,
        seed: args.seed,
        ..ExperimentConfig::default()
    };
    config.validate()?;
    let corpus = load_dataset(&args.dataset).with_context(|| format!("loading dataset {}", args.dataset.display()))?;
    let split = prepare_split(corpus)?;
    println!("train {} / validation {}", split.train.len(), split.validation.len());
    let parties = build_parties(&config, &split)?;
    let mut membership = Vec::new();
    for p in &parties {
        let positive = p.samples.iter().filter(|s| s.label == Label::Positive).count();
        println!(
            "party {}: {} samples, {} positive, users {:?}",
            p.party_id,
            p.len(),
            positive,
            p.user_ids()
        );
        membership.push(serde_json::json!({
            "party_id": p.party_id,
            "sample_ids": p.samples.iter().map(|s| s.id).collect::<Vec<_>>(),
        }));
    }
    if let Some(out) = &args.out {
        let mut w = create_file(out)?;
        serde_json::to_writer_pretty(&mut w, &membership)?;
        w.flush()?;
    }
    Ok(())
}

fn write_outputs(dir: Option<&Path>, rows: &[moodfed::MetricsRow], reports: &[String]) -> Result<()> {
    match dir {
        Some(dir) => {
            let csv_path = dir.join("metrics.csv");
            let mut w = create_file(&csv_path)?;
            write_metrics_csv(&mut w, rows)?;
            w.flush()?;
            let report_path = dir.join("report.json");
            let mut w = create_file(&report_path)?;
            if reports.len() == 1 {
                w.write_all(reports[0].as_bytes())?;
            } else {
                write!(w, "[{}]", reports.join(","))?;
            }
            w.write_all(b"\n")?;
            w.flush()?;
            eprintln!("wrote {} and {}", csv_path.display(), report_path.display());
        }
        None => {
            let stdout = io::stdout();
            write_metrics_csv(stdout.lock(), rows)?;
        }
    }
    Ok(())
}

fn cmd_run(args: RunArgs) -> Result<()> {
    let config = args.settings.resolve(args.protocol)?;
    let split = prepare_split(load_corpus(&config)?)?;
    let outcome = run_on_split(&config, &split)?;
    eprintln!(
        "{} {}: accuracy {:.4}, F-score {:.4} ({:.1}s)",
        config.protocol, config.model, outcome.final_accuracy, outcome.final_fscore, outcome.wall_seconds
    );
    write_outputs(config.output.as_deref(), &outcome.rows, &[report_json(&outcome)?])
}

fn cmd_sweep(args: SweepArgs) -> Result<()> {
    if args.protocols.is_empty() {
        bail!("--protocols needs at least one protocol");
    }
    let base = args.settings.resolve(None)?;
    if base.noniid {
        bail!("sweep grids use IID parties; drop --noniid");
    }
    let split = prepare_split(load_corpus(&base)?)?;
    let mut rows = Vec::new();
    let mut reports = Vec::new();
    for config in sweep_configs(&base, args.grid, &args.protocols) {
        let outcome = run_on_split(&config, &split)?;
        eprintln!(
            "parties {:>2} per_party {:>4} {:<6}: accuracy {:.4}",
            config.parties, config.per_party, config.protocol, outcome.final_accuracy
        );
        rows.extend(outcome.rows.iter().cloned());
        reports.push(report_json(&outcome)?);
    }
    write_outputs(base.output.as_deref(), &rows, &reports)
}

fn cmd_gradcheck(args: GradcheckArgs) -> Result<bool> {
    let kinds = match args.model {
        Some(k) => vec![k],
        None => HeadKind::ALL.to_vec(),
    };
    let mut all_passed = true;
    for kind in kinds {
        let r = run_gradcheck(kind, args.seed, args.instances, args.corrupt)?;
        println!(
            "{:<4} {} instances, {} parameters: max relative error {:.3e} (tolerance {:.0e}) {}",
            r.kind,
            r.instances,
            r.parameters_checked,
            r.max_relative_error,
            r.tolerance,
            if r.passed { "PASS" } else { "FAIL" }
        );
        all_passed &= r.passed;
    }
    Ok(all_passed)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Generate(a) => cmd_generate(a).map(|_| true),
        Command::Partition(a) => cmd_partition(a).map(|_| true),
        Command::Run(a) => cmd_run(a).map(|_| true),
        Command::Sweep(a) => cmd_sweep(a).map(|_| true),
        Command::Gradcheck(a) => cmd_gradcheck(a),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
