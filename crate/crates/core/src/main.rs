use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rand::SeedableRng;

use peerstep::analysis::{self, AnalysisOptions};
use peerstep::config::{env_snapshot, ServerConfig};
use peerstep::events::{export_csv, read_sessions_csv, Export};
use peerstep::profiles::{generate_cards, offsets_for_arm, AttributePool};
use peerstep::protocol::StudyConfig;
use peerstep::seeding::StudyRng;
use peerstep::sim::{run_study, PopulationSpec};
use peerstep::{ArmId, Error, Result};

const STUDY_FILE: &str = "study.toml";
const TRUTH_FILE: &str = "truth.csv";
const EVENTS_FILE: &str = "events.jsonl";

#[derive(Parser)]
#[command(name = "peerstep", version, about = "Bandit-personalized social comparison study platform")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a simulated study and write its event log and CSV exports.
    Simulate {
        /// Study configuration (TOML); defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Population specification (TOML); defaults apply when omitted.
        #[arg(long)]
        population: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Overrides both the study and the population seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Analyze an exported study directory.
    Analyze {
        /// Directory holding sessions.csv (and study.toml, if written by simulate).
        #[arg(long)]
        log: PathBuf,
        /// CSV `participant_id,theta` of preference scores.
        #[arg(long)]
        truth: Option<PathBuf>,
        /// Report path; JSON here, text table next to it with a .txt extension.
        #[arg(long)]
        out: PathBuf,
    },
    /// Serve the HTTP API until interrupted.
    Serve {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        port: Option<u16>,
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Print one day's four cards for an arm.
    GenProfiles {
        #[arg(long)]
        arm: ArmId,
        #[arg(long)]
        ref_steps: u32,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn io_err(path: &Path, e: std::io::Error) -> Error {
    Error::Io(format!("{}: {e}", path.display()))
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| io_err(path, e))
}

fn simulate(config: Option<PathBuf>, population: Option<PathBuf>, out: PathBuf, seed: Option<u64>) -> Result<()> {
    let mut study = match config {
        Some(p) => {
            let text = std::fs::read_to_string(&p).map_err(|e| io_err(&p, e))?;
            StudyConfig::from_toml_str(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
        }
        None => StudyConfig::default(),
    };
    let mut spec = match population {
        Some(p) => PopulationSpec::load(&p)?,
        None => PopulationSpec::default(),
    };
    if let Some(seed) = seed {
        study.seed = seed;
        spec.seed = seed;
    }
    let run = run_study(&study, &spec)?;
    std::fs::create_dir_all(&out).map_err(|e| io_err(&out, e))?;
    write(&out.join(EVENTS_FILE), &run.platform.store().to_jsonl()?)?;
    let state = run.platform.state();
    let mut counts = Vec::new();
    for which in Export::ALL {
        counts.push(export_csv(which, state, &out.join(which.file_name()))?);
    }
    let mut truth = String::from("participant_id,theta\n");
    for (pid, u) in &run.users {
        let _ = writeln!(truth, "{pid},{}", u.theta);
    }
    write(&out.join(TRUTH_FILE), &truth)?;
    let study_toml = toml::to_string(&study).map_err(|e| Error::Config(e.to_string()))?;
    write(&out.join(STUDY_FILE), &study_toml)?;

    println!("participants: {}", run.users.len());
    println!("sessions started: {}", state.sessions().count());
    println!("finalized days: {}", counts[0]);
    println!("step records: {}", counts[1]);
    println!("events: {}", run.platform.store().len());
    println!("output: {}", out.display());
    Ok(())
}

fn read_truth(path: &Path) -> Result<BTreeMap<String, f64>> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let mut lines = text.lines().enumerate();
    if lines.next().map(|(_, h)| h) != Some("participant_id,theta") {
        return Err(Error::Validation(format!("{}: expected header `participant_id,theta`", path.display())));
    }
    lines
        .filter(|(_, l)| !l.is_empty())
        .map(|(i, l)| {
            let bad = || Error::Validation(format!("{}: line {}: malformed row", path.display(), i + 1));
            let (pid, theta) = l.split_once(',').ok_or_else(bad)?;
            Ok((pid.to_string(), theta.parse().map_err(|_| bad())?))
        })
        .collect()
}

fn analyze(log: PathBuf, truth: Option<PathBuf>, out: PathBuf) -> Result<()> {
    let rows = read_sessions_csv(&log.join(Export::Sessions.file_name()))?;
    let study_path = log.join(STUDY_FILE);
    let options = if study_path.exists() {
        let text = std::fs::read_to_string(&study_path).map_err(|e| io_err(&study_path, e))?;
        AnalysisOptions::from_config(&StudyConfig::from_toml_str(&text)?)
    } else {
        AnalysisOptions::default()
    };
    let truth = truth.as_deref().map(read_truth).transpose()?;
    let report = analysis::analyze(&rows, truth.as_ref(), &options);
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    let text_path = if out.extension().is_some_and(|e| e == "txt") { out.with_extension("txt.txt") } else { out.with_extension("txt") };
    write(&out, &report.to_json())?;
    let text = analysis::render_text(&report);
    write(&text_path, &text)?;
    print!("{text}");
    Ok(())
}

fn serve(config: Option<PathBuf>, port: Option<u16>, data: Option<PathBuf>) -> Result<()> {
    let mut cfg = match config {
        Some(p) => ServerConfig::load(&p)?,
        None => ServerConfig::default(),
    }
    .with_env(&env_snapshot())?;
    if let Some(port) = port {
        cfg.port = port;
    }
    if let Some(data) = data {
        cfg.data_dir = data;
    }
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(peerstep::service::serve(&cfg))
}

fn gen_profiles(arm: ArmId, ref_steps: u32, seed: u64) -> Result<()> {
    let mut rng = StudyRng::seed_from_u64(seed);
    let cards = generate_cards(arm, ref_steps, &mut rng, &AttributePool::default())?;
    println!("arm {arm}, reference {ref_steps} steps, offsets {:?}", offsets_for_arm(arm));
    for c in &cards {
        println!(
            "{}  {:<6} {:>7} steps  offset {:+.2} (recovered {:+.4})",
            c.card_id,
            c.display_name,
            c.displayed_steps,
            c.true_offset,
            c.recovered_offset(ref_steps)
        );
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate { config, population, out, seed } => simulate(config, population, out, seed),
        Command::Analyze { log, truth, out } => analyze(log, truth, out),
        Command::Serve { config, port, data } => serve(config, port, data),
        Command::GenProfiles { arm, ref_steps, seed } => gen_profiles(arm, ref_steps, seed),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("peerstep: {e}");
            ExitCode::FAILURE
        }
    }
}
