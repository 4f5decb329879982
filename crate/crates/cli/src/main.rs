//! `cimtest`: train a binarized MC-Dropout network, build its online test
//! kit, run fault-injection campaigns and check a device.
//!
//! Exit codes: 0 healthy / success, 1 faulty verdict, 2 operational error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;
use sha2::{Digest, Sha256};

use cimtest::campaign::{roc_csv, roc_table, write_reports, CampaignResult, RECORDS_FILE};
use cimtest::detector::{fit_profile, run_test_session, Device};
use cimtest::faults::inject;
use cimtest::io::{
    check_kit_matches, load_dataset, load_kit, load_model, read_json, save_dataset, save_kit, save_model, write_json,
};
use cimtest::pipeline::{campaign_stage, gen_tests_stage, stage_seed, train_stage, PipelineConfig, Stage};
use cimtest::{DropoutBank, Error, FaultContext, FaultSpec, RngStream, Sharing};

#[derive(Parser)]
#[command(name = "cimtest", version, about = "Fault simulation and online testing of MC-Dropout binarized networks")]
struct Cli {
    /// Pipeline config (JSON); every field is optional.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed, overriding the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Directory holding model.json, dataset.json, kit/ and reports/.
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,
    /// Worker threads for campaigns.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the network and write model.json, dataset.json and train_report.json.
    Train,
    /// Rank training inputs and write kit/test_vectors.json and kit/profile.json.
    GenTests,
    /// Run the fault-injection sweeps and write reports/.
    Campaign,
    /// Replay ROC points from reports/records.json at other query lengths.
    Roc {
        /// Comma-separated positive query lengths.
        #[arg(long, value_delimiter = ',')]
        l_values: Option<Vec<usize>>,
    },
    /// Run one online test session and print the verdict as JSON.
    Check {
        /// Positive query length L.
        #[arg(long, default_value_t = cimtest::detector::DEFAULT_QUERY_LENGTH)]
        query_length: usize,
        /// FaultSpec JSON to inject before testing (inline or a file path).
        #[arg(long)]
        fault: Option<String>,
        /// Dropout-module sharing of the device under test.
        #[arg(long, value_enum)]
        sharing: Option<SharingArg>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum SharingArg {
    PerColumn,
    LayerShared,
    GlobalShared,
}

impl From<SharingArg> for Sharing {
    fn from(s: SharingArg) -> Self {
        match s {
            SharingArg::PerColumn => Sharing::PerColumn,
            SharingArg::LayerShared => Sharing::LayerShared,
            SharingArg::GlobalShared => Sharing::GlobalShared,
        }
    }
}

#[derive(Serialize)]
struct RunManifest {
    command: String,
    config_hash: String,
    master_seed: u64,
    versions: Versions,
    outputs: Vec<String>,
    wall_clock_seconds: f64,
}

#[derive(Serialize)]
struct Versions {
    cimtest: &'static str,
    model_format: &'static str,
}

struct Paths {
    model: PathBuf,
    dataset: PathBuf,
    kit: PathBuf,
    reports: PathBuf,
}

impl Paths {
    fn new(out: &Path, cfg: &PipelineConfig) -> Self {
        Paths {
            model: cfg.campaign.model.clone().unwrap_or_else(|| out.join("model.json")),
            dataset: cfg.campaign.dataset.clone().unwrap_or_else(|| out.join("dataset.json")),
            kit: cfg.campaign.kit.clone().unwrap_or_else(|| out.join("kit")),
            reports: out.join("reports"),
        }
    }
}

fn load_config(cli: &Cli) -> Result<PipelineConfig, Error> {
    let mut cfg = match &cli.config {
        Some(path) => {
            if !path.exists() {
                return Err(Error::Config(format!("config file {} does not exist", path.display())));
            }
            read_json::<PipelineConfig>(path)?
        }
        None => PipelineConfig::reference(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if cli.threads.is_some() {
        cfg.campaign.threads = cli.threads;
    }
    Ok(cfg)
}

fn config_hash(cfg: &PipelineConfig) -> String {
    let canonical = serde_json::to_vec(cfg).expect("config serializes");
    Sha256::digest(&canonical).iter().map(|b| format!("{b:02x}")).collect()
}

fn write_manifest(
    out: &Path,
    command: &str,
    cfg: &PipelineConfig,
    outputs: &[PathBuf],
    started: Instant,
) -> Result<(), Error> {
    let manifest = RunManifest {
        command: command.to_string(),
        config_hash: config_hash(cfg),
        master_seed: cfg.seed,
        versions: Versions { cimtest: env!("CARGO_PKG_VERSION"), model_format: cimtest::io::MODEL_FORMAT },
        outputs: outputs.iter().map(|p| p.display().to_string()).collect(),
        wall_clock_seconds: started.elapsed().as_secs_f64(),
    };
    write_json(&out.join(format!("manifest-{command}.json")), &manifest)
}

#[derive(Serialize)]
struct TrainReport {
    dims: Vec<usize>,
    eval_accuracy: f64,
    eval_passes: usize,
    train_samples: usize,
    eval_samples: usize,
    loss_history: Vec<f64>,
}

fn cmd_train(cli: &Cli, cfg: &PipelineConfig, started: Instant) -> Result<u8, Error> {
    let paths = Paths::new(&cli.out_dir, cfg);
    let (data, trained) = train_stage(cfg)?;
    save_model(&paths.model, &trained.network)?;
    save_dataset(&paths.dataset, &data)?;
    let report_path = cli.out_dir.join("train_report.json");
    write_json(
        &report_path,
        &TrainReport {
            dims: trained.network.dims(),
            eval_accuracy: trained.eval_accuracy,
            eval_passes: cfg.train.train.eval_passes,
            train_samples: data.train.len(),
            eval_samples: data.eval.len(),
            loss_history: trained.loss_history.clone(),
        },
    )?;
    println!(
        "eval accuracy {:.4} ({} passes) -> {}",
        trained.eval_accuracy,
        cfg.train.train.eval_passes,
        paths.model.display()
    );
    write_manifest(&cli.out_dir, "train", cfg, &[paths.model, paths.dataset, report_path], started)?;
    Ok(0)
}

fn file_len(p: &Path) -> u64 {
    std::fs::metadata(p).map(|m| m.len()).unwrap_or(0)
}

fn cmd_gen_tests(cli: &Cli, cfg: &PipelineConfig, started: Instant) -> Result<u8, Error> {
    let paths = Paths::new(&cli.out_dir, cfg);
    let net = load_model(&paths.model)?;
    let data = load_dataset(&paths.dataset)?;
    let kit = gen_tests_stage(cfg, &net, &data)?;
    let (vectors, profile) = save_kit(&paths.kit, &kit)?;
    let kit_bytes = file_len(&vectors) + file_len(&profile);
    let share = kit.vectors.len() as f64 / data.train.len() as f64;
    println!(
        "{} test vectors ({:.2}% of {} training inputs), kit {} bytes vs dataset {} bytes; bounds [{:.6}, {:.6}]",
        kit.vectors.len(),
        100.0 * share,
        data.train.len(),
        kit_bytes,
        file_len(&paths.dataset),
        kit.profile.b_lower,
        kit.profile.b_upper
    );
    write_manifest(&cli.out_dir, "gen-tests", cfg, &[vectors, profile], started)?;
    Ok(0)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.3}")).unwrap_or_else(|| "n/a".into())
}

fn cmd_campaign(cli: &Cli, cfg: &PipelineConfig, started: Instant) -> Result<u8, Error> {
    let paths = Paths::new(&cli.out_dir, cfg);
    let net = load_model(&paths.model)?;
    let data = load_dataset(&paths.dataset)?;
    let kit = load_kit(&paths.kit)?;
    check_kit_matches(&kit, &net)?;
    let res = campaign_stage(cfg, &net, &kit, &data)?;
    for p in &res.points {
        println!(
            "{} value={:.3} acc={:.4}±{:.4} benign={} critical={} coverage_critical={} coverage_benign={} fpr={:.3}",
            p.sweep,
            p.value,
            p.mean_accuracy,
            p.std_accuracy,
            p.benign,
            p.critical,
            fmt_opt(p.coverage_critical),
            fmt_opt(p.coverage_benign),
            p.fpr
        );
    }
    let outputs = write_reports(&res, &paths.reports)?;
    write_manifest(&cli.out_dir, "campaign", cfg, &outputs, started)?;
    Ok(0)
}

fn cmd_roc(cli: &Cli, cfg: &PipelineConfig, l_values: &Option<Vec<usize>>, started: Instant) -> Result<u8, Error> {
    let paths = Paths::new(&cli.out_dir, cfg);
    let res: CampaignResult = read_json(&paths.reports.join(RECORDS_FILE))?;
    let ls = l_values.clone().unwrap_or_else(|| res.l_values.clone());
    let body = roc_csv(&roc_table(&res, &ls)?);
    let out = paths.reports.join("roc_replay.csv");
    std::fs::write(&out, &body).map_err(|source| Error::Io { path: out.display().to_string(), source })?;
    print!("{body}");
    write_manifest(&cli.out_dir, "roc", cfg, &[out], started)?;
    Ok(0)
}

fn parse_fault(arg: &str) -> Result<FaultSpec, Error> {
    let path = Path::new(arg);
    let spec: FaultSpec = if !arg.trim_start().starts_with('{') && path.exists() {
        read_json(path)?
    } else {
        serde_json::from_str(arg).map_err(|source| Error::Json { path: "--fault".into(), source })?
    };
    spec.validate()?;
    Ok(spec)
}

fn cmd_check(
    cli: &Cli,
    cfg: &PipelineConfig,
    query_length: usize,
    fault: &Option<String>,
    sharing: Option<SharingArg>,
) -> Result<u8, Error> {
    let paths = Paths::new(&cli.out_dir, cfg);
    let base = load_model(&paths.model)?;
    let kit = load_kit(&paths.kit)?;
    check_kit_matches(&kit, &base)?;
    let sharing = sharing.map(Sharing::from).unwrap_or(kit.sharing);
    let net = base.with_sharing(sharing);
    let check_root = RngStream::new(stage_seed(cfg.seed, Stage::Campaign)).derive(u64::MAX);
    let clean_bank = DropoutBank::new(&net);
    let clean = FaultContext::clean();
    let profile = if sharing == kit.sharing {
        kit.profile.clone()
    } else {
        eprintln!("refitting the fault-free profile for {sharing:?} dropout modules");
        fit_profile(
            &Device::new(&net, &clean_bank, &clean),
            &kit.vectors,
            kit.fit_repetitions,
            kit.vectors.params.passes,
            &check_root.derive(0),
        )?
    };
    let mut bank = clean_bank.clone();
    let ctx = match fault {
        Some(arg) => {
            let spec = parse_fault(arg)?;
            let mut s = spec.seed.map(RngStream::new).unwrap_or_else(|| check_root.derive(1));
            inject(&net, &mut bank, &spec, &mut s)?
        }
        None => FaultContext::clean(),
    };
    let verdict = run_test_session(
        &Device::new(&net, &bank, &ctx),
        &kit.vectors,
        &profile,
        query_length,
        kit.vectors.params.passes,
        &check_root.derive(2),
    )?;
    println!("{}", serde_json::to_string(&verdict).expect("verdict serializes"));
    Ok(match verdict.decision {
        cimtest::detector::Decision::Healthy => 0,
        cimtest::detector::Decision::Faulty => 1,
    })
}

fn run(cli: &Cli) -> Result<u8, Error> {
    let started = Instant::now();
    let cfg = load_config(cli)?;
    match &cli.command {
        Command::Train => cmd_train(cli, &cfg, started),
        Command::GenTests => cmd_gen_tests(cli, &cfg, started),
        Command::Campaign => cmd_campaign(cli, &cfg, started),
        Command::Roc { l_values } => cmd_roc(cli, &cfg, l_values, started),
        Command::Check { query_length, fault, sharing } => cmd_check(cli, &cfg, *query_length, fault, *sharing),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
