use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use moil::artifacts::{ManifestWriter, Stage};
use moil::config::{derive_seed, Preset, RunConfig};
use moil::data::{load_csv, symbolize, Dataset, Period, SymbolicSeries};
use moil::downstream::{confusion_matrix, micro_f1, predict, train_classifier, ClassifierArtifact, EvaluationReport};
use moil::model::{pretrain, Checkpoint, MoilNet};
use moil::motif::{build_ssl_targets, mine_motifs, MotifSet, TargetSet};
use moil::protocol::{run_experiment, Protocol};
use moil::synth::gen_dataset;
use moil::{MoilError, Result};

/// Motif identification learning for work-activity recognition.
#[derive(Parser, Debug)]
#[command(name = "moil", version, about)]
struct Cli {
    /// Log progress to stderr (repeat for more detail).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Debug)]
struct Common {
    /// Run seed; overrides the config file.
    #[arg(long)]
    seed: Option<u64>,

    /// TOML run configuration; defaults to the chosen preset.
    #[arg(long)]
    config: Option<PathBuf>,

    /// Built-in settings used when no config file is given.
    #[arg(long, value_enum, default_value = "desk")]
    preset: PresetArg,

    /// Output directory.
    #[arg(long, env = "MOIL_OUT")]
    out: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum PresetArg {
    Desk,
    Full,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ProtocolArg {
    WorkerDependent,
    WorkerIndependent,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Print the resolved configuration as TOML.
    Config {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "desk")]
        preset: PresetArg,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Generate a labeled synthetic dataset plus its ground-truth sidecar.
    GenSynth {
        #[command(flatten)]
        common: Common,
    },
    /// Min-max normalize and symbolize a sensor CSV.
    Prep {
        #[command(flatten)]
        common: Common,
        /// Sensor CSV (`worker_id,period_id,t,<axes>[,label]`).
        #[arg(long, env = "MOIL_DATA")]
        data: PathBuf,
    },
    /// Select key motifs from the unlabeled periods of a `prep` output.
    MineMotifs {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        prep: PathBuf,
    },
    /// Compute per-period similarity targets for the key motifs.
    BuildTargets {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        prep: PathBuf,
        #[arg(long)]
        motifs: PathBuf,
    },
    /// Pretrain the encoder to regress the similarity targets.
    Pretrain {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        prep: PathBuf,
        #[arg(long)]
        targets: PathBuf,
    },
    /// Train a classifier on the labeled periods over the frozen encoder.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        prep: PathBuf,
        #[arg(long)]
        pretrained: PathBuf,
        /// `mine-motifs` output the encoder must have been trained against.
        #[arg(long)]
        motifs: PathBuf,
    },
    /// Score a trained classifier on the labeled periods of a `prep` output.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        prep: PathBuf,
        #[arg(long)]
        pretrained: PathBuf,
        #[arg(long)]
        classifier: PathBuf,
    },
    /// Run a full evaluation protocol end to end.
    Experiment {
        #[command(flatten)]
        common: Common,
        /// Sensor CSV; a synthetic dataset is generated when omitted.
        #[arg(long, env = "MOIL_DATA")]
        data: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "worker-dependent")]
        protocol: ProtocolArg,
        /// Fraction of training periods whose labels are used.
        #[arg(long)]
        labels: Option<f64>,
        /// Number of seeds, counting up from the run seed.
        #[arg(long)]
        seeds: Option<u64>,
    },
}

fn load_config(c: &Common) -> Result<RunConfig> {
    let mut cfg = match &c.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::preset(match c.preset {
            PresetArg::Desk => Preset::Desk,
            PresetArg::Full => Preset::Full,
        }),
    };
    if let Some(seed) = c.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

fn symbols_dataset(ds: &Dataset, k: usize) -> Result<Dataset> {
    let periods = ds
        .periods()
        .iter()
        .map(|p| {
            let s = symbolize(p, k)?;
            p.with_values(s.symbols().iter().map(|&v| f64::from(v)).collect())
        })
        .collect::<Result<Vec<_>>>()?;
    Dataset::with_axis_names(periods, ds.axis_names().to_vec())?.with_policy(Default::default())
}

fn read_symbols(prep: &Stage, cfg: &RunConfig) -> Result<Vec<(Period, SymbolicSeries)>> {
    let ds = load_csv(&prep.file("symbols.csv"), &cfg.csv)?;
    ds.unlabeled()
        .map(|p| {
            let symbols = p.values().iter().map(|&v| v as u8).collect();
            let s = SymbolicSeries::from_symbols(p.key(), cfg.motifs.alphabet_size, p.n_axes(), symbols)?;
            Ok((p.clone(), s))
        })
        .collect()
}

fn normalized(prep: &Stage, cfg: &RunConfig) -> Result<Dataset> {
    load_csv(&prep.file("normalized.csv"), &cfg.csv)
}

fn cmd_gen_synth(c: &Common) -> Result<()> {
    let cfg = load_config(c)?;
    let (ds, truth) = gen_dataset(&cfg.synth, cfg.seed)?;
    let mut m = ManifestWriter::new(&c.out, "gen-synth", &cfg, cfg.seed)?;
    ds.write_csv(&m.path("data.csv"))?;
    truth.save(&m.path("truth.json"))?;
    m.file("data.csv")?.file("truth.json")?;
    m.fact("periods", ds.periods().len().to_string());
    m.finish()?;
    Ok(())
}

fn cmd_prep(c: &Common, data: &Path) -> Result<()> {
    let cfg = load_config(c)?;
    let ds = load_csv(data, &cfg.csv)?;
    let norm = ds.normalized()?;
    let mut m = ManifestWriter::new(&c.out, "prep", &cfg, cfg.seed)?;
    norm.write_csv(&m.path("normalized.csv"))?;
    symbols_dataset(&norm, cfg.motifs.alphabet_size)?.write_csv(&m.path("symbols.csv"))?;
    m.file("normalized.csv")?.file("symbols.csv")?;
    m.fact("source_sha256", moil::artifacts::sha256_file(data)?);
    m.fact("periods", norm.periods().len().to_string());
    m.finish()?;
    Ok(())
}

fn cmd_mine(c: &Common, prep: &Path) -> Result<()> {
    let cfg = load_config(c)?;
    let prep = Stage::open(prep, "prep", &cfg)?;
    let pairs = read_symbols(&prep, &cfg)?;
    let rate = pairs
        .first()
        .ok_or_else(|| MoilError::InvalidInput("no unlabeled periods to mine".into()))?
        .0
        .sample_rate_hz;
    let symbolic: Vec<SymbolicSeries> = pairs.into_iter().map(|(_, s)| s).collect();
    let set = mine_motifs(&symbolic, &cfg.motifs.params(rate)?, derive_seed(cfg.seed, "motifs"))?;
    let mut m = ManifestWriter::new(&c.out, "mine-motifs", &cfg, cfg.seed)?;
    set.save(&m.path("motifs.json"))?;
    m.input(&prep).file("motifs.json")?.fact("motif_set_hash", set.hash.clone());
    m.finish()?;
    Ok(())
}

fn cmd_targets(c: &Common, prep: &Path, motifs: &Path) -> Result<()> {
    let cfg = load_config(c)?;
    let prep = Stage::open(prep, "prep", &cfg)?;
    let motifs = Stage::open(motifs, "mine-motifs", &cfg)?;
    let set = MotifSet::load(&motifs.file("motifs.json"))?;
    let symbolic: Vec<SymbolicSeries> = read_symbols(&prep, &cfg)?.into_iter().map(|(_, s)| s).collect();
    let targets = build_ssl_targets(&symbolic, &set)?;
    let mut m = ManifestWriter::new(&c.out, "build-targets", &cfg, cfg.seed)?;
    targets.save(&m.path("targets"))?;
    m.input(&prep).input(&motifs).file("targets/manifest.json")?;
    let names: Vec<String> = std::fs::read_dir(m.path("targets"))?
        .map(|e| e.map(|e| e.file_name().to_string_lossy().into_owned()))
        .collect::<std::io::Result<_>>()?;
    let mut names = names;
    names.sort();
    for n in names.iter().filter(|n| n.ends_with(".csv")) {
        m.file(&format!("targets/{n}"))?;
    }
    m.fact("motif_set_hash", set.hash.clone());
    m.fact(
        "uninformative_channels",
        targets.uninformative.iter().map(usize::to_string).collect::<Vec<_>>().join(","),
    );
    m.finish()?;
    Ok(())
}

fn cmd_pretrain(c: &Common, prep: &Path, targets: &Path) -> Result<()> {
    let cfg = load_config(c)?;
    let prep = Stage::open(prep, "prep", &cfg)?;
    let tstage = Stage::open(targets, "build-targets", &cfg)?;
    let targets = TargetSet::load(&tstage.file("targets"))?;
    if targets.motif_set_hash != tstage.fact("motif_set_hash")? {
        return Err(MoilError::Integrity("target files and their manifest disagree on the motif set".into()));
    }
    let ds = normalized(&prep, &cfg)?;
    let periods: Vec<Period> = ds.unlabeled().cloned().collect();
    let keys: Vec<String> = periods.iter().map(Period::key).collect();
    let tkeys: Vec<String> = targets.targets.iter().map(|t| t.period_key.clone()).collect();
    if keys != tkeys {
        return Err(MoilError::Integrity(
            "targets were built for a different set of unlabeled periods".into(),
        ));
    }
    let n = targets.targets.first().map_or(0, |t| t.n_channels);
    let net = MoilNet::new(cfg.encoder.clone(), ds.n_axes(), n, derive_seed(cfg.seed, "encoder"))?;
    let out = pretrain(net, &periods, &targets.targets, &cfg.pretrain, derive_seed(cfg.seed, "pretrain"))?;
    let (net, epoch, loss) = if cfg.experiment.use_best_checkpoint {
        (out.best, out.best_epoch, out.best_loss)
    } else {
        let last = out.losses.len();
        (out.last, last, out.losses[last - 1])
    };
    let ckpt = Checkpoint::new(net, out.adam, epoch, loss, cfg.seed, &cfg.hash(), &targets.motif_set_hash);
    let mut m = ManifestWriter::new(&c.out, "pretrain", &cfg, cfg.seed)?;
    ckpt.save(&m.path("checkpoint.json"))?;
    let mut curve = String::from("epoch,mean_loss\n");
    for (i, l) in out.losses.iter().enumerate() {
        curve.push_str(&format!("{},{l}\n", i + 1));
    }
    std::fs::write(m.path("loss_curve.csv"), curve)?;
    m.input(&prep).input(&tstage);
    m.file("checkpoint.json")?.file("loss_curve.csv")?;
    m.fact("motif_set_hash", targets.motif_set_hash.clone());
    m.fact("encoder_hash", ckpt.encoder_hash.clone());
    m.finish()?;
    Ok(())
}

fn open_checkpoint(dir: &Path, cfg: &RunConfig) -> Result<(Stage, Checkpoint)> {
    let stage = Stage::open(dir, "pretrain", cfg)?;
    let ckpt = Checkpoint::load(&stage.file("checkpoint.json"))?;
    Ok((stage, ckpt))
}

fn class_count(ds: &Dataset, cfg: &RunConfig) -> Result<usize> {
    if let Some(c) = cfg.classifier.classes {
        return Ok(c);
    }
    ds.periods()
        .iter()
        .filter_map(Period::labels)
        .flatten()
        .max()
        .map(|&m| (m as usize + 1).max(2))
        .ok_or_else(|| MoilError::InvalidInput("no labeled periods".into()))
}

fn cmd_train(c: &Common, prep: &Path, pretrained: &Path, motifs: &Path) -> Result<()> {
    let cfg = load_config(c)?;
    let prep = Stage::open(prep, "prep", &cfg)?;
    let (pstage, ckpt) = open_checkpoint(pretrained, &cfg)?;
    let mstage = Stage::open(motifs, "mine-motifs", &cfg)?;
    let motif_hash = mstage.fact("motif_set_hash")?;
    if ckpt.motif_set_hash != motif_hash {
        return Err(MoilError::Integrity(format!(
            "the encoder was pretrained against motif set {}, not {}; pass the matching mine-motifs output",
            &ckpt.motif_set_hash[..12.min(ckpt.motif_set_hash.len())],
            &motif_hash[..12.min(motif_hash.len())]
        )));
    }
    let ds = normalized(&prep, &cfg)?;
    let labeled: Vec<&Period> = ds.labeled().collect();
    if labeled.is_empty() {
        return Err(MoilError::InvalidInput(
            "no labeled periods; add a label column or set csv.roles".into(),
        ));
    }
    let classes = class_count(&ds, &cfg)?;
    let encoder = &ckpt.net.encoder;
    let trained = train_classifier(encoder, &labeled, classes, &cfg.classifier, derive_seed(cfg.seed, "classifier"), |_, _| Ok(()))?;
    if encoder.state_hash() != ckpt.encoder_hash {
        return Err(MoilError::Integrity("encoder changed during classifier training".into()));
    }
    let art = ClassifierArtifact::new(trained.classifier, trained.losses, cfg.seed, &cfg.hash(), motif_hash, &ckpt.encoder_hash);
    let mut m = ManifestWriter::new(&c.out, "train", &cfg, cfg.seed)?;
    art.save(&m.path("classifier.json"))?;
    m.input(&prep).input(&pstage).input(&mstage).file("classifier.json")?;
    m.fact("encoder_hash", ckpt.encoder_hash.clone());
    m.fact("motif_set_hash", motif_hash.to_string());
    m.finish()?;
    Ok(())
}

fn cmd_evaluate(c: &Common, prep: &Path, pretrained: &Path, classifier: &Path) -> Result<()> {
    let cfg = load_config(c)?;
    let prep = Stage::open(prep, "prep", &cfg)?;
    let (pstage, ckpt) = open_checkpoint(pretrained, &cfg)?;
    let cstage = Stage::open(classifier, "train", &cfg)?;
    let art = ClassifierArtifact::load(&cstage.file("classifier.json"))?;
    if art.encoder_hash != ckpt.encoder_hash || art.motif_set_hash != ckpt.motif_set_hash {
        return Err(MoilError::Integrity(
            "the classifier was trained on a different encoder or motif set than the one given".into(),
        ));
    }
    let ds = normalized(&prep, &cfg)?;
    let periods: Vec<&Period> = ds.periods().iter().filter(|p| p.labels().is_some()).collect();
    if periods.is_empty() {
        return Err(MoilError::InvalidInput("no labeled periods to evaluate".into()));
    }
    let mut preds = Vec::new();
    let mut truth = Vec::new();
    let mut rows = String::from("period_id,t,true,pred\n");
    for p in &periods {
        let pred = predict(&ckpt.net.encoder, &art.classifier, p)?;
        let labels = p.labels().expect("filtered").to_vec();
        for (t, (a, b)) in labels.iter().zip(&pred).enumerate() {
            rows.push_str(&format!("{},{t},{a},{b}\n", p.key()));
        }
        preds.push(pred);
        truth.push(labels);
    }
    let report = EvaluationReport {
        format: "moil-evaluation/1".into(),
        config_hash: cfg.hash(),
        seed: cfg.seed,
        encoder_hash: ckpt.encoder_hash.clone(),
        motif_set_hash: ckpt.motif_set_hash.clone(),
        periods: periods.iter().map(|p| p.key()).collect(),
        micro_f1: micro_f1(&preds, &truth)?,
        confusion: confusion_matrix(&preds, &truth, art.classifier.classes)?,
    };
    let mut m = ManifestWriter::new(&c.out, "evaluate", &cfg, cfg.seed)?;
    write_json(&m.path("report.json"), &report)?;
    std::fs::write(m.path("predictions.csv"), rows)?;
    m.input(&prep).input(&pstage).input(&cstage);
    m.file("report.json")?.file("predictions.csv")?;
    m.finish()?;
    println!("micro-F1 {:.4}", report.micro_f1);
    Ok(())
}

fn cmd_experiment(c: &Common, data: Option<&Path>, protocol: ProtocolArg, labels: Option<f64>, seeds: Option<u64>) -> Result<()> {
    let mut cfg = load_config(c)?;
    if let Some(f) = labels {
        cfg.experiment.label_fraction = f;
    }
    if let Some(n) = seeds {
        cfg.experiment.seeds = (0..n).map(|i| cfg.seed + i).collect();
    }
    cfg.validate()?;
    let mut m = ManifestWriter::new(&c.out, "experiment", &cfg, cfg.seed)?;
    let ds = match data {
        Some(path) => {
            m.fact("source_sha256", moil::artifacts::sha256_file(path)?);
            load_csv(path, &cfg.csv)?
        }
        None => {
            m.fact("source", "synthetic");
            gen_dataset(&cfg.synth, cfg.seed)?.0
        }
    };
    let protocol = match protocol {
        ProtocolArg::WorkerDependent => Protocol::WorkerDependent,
        ProtocolArg::WorkerIndependent => Protocol::WorkerIndependent,
    };
    let out = run_experiment(&ds, &cfg, protocol)?;
    let report = &out.report;
    if report.config_hash != cfg.hash() {
        return Err(MoilError::Integrity("report config hash does not match the run config".into()));
    }
    if !report.encoders_frozen {
        return Err(MoilError::Integrity("an encoder changed during classifier training".into()));
    }
    if let Some(a) = report.audits.iter().find(|a| !a.leaked.is_empty()) {
        return Err(MoilError::Integrity(format!("test periods reached training: {:?}", a.leaked)));
    }
    report.save(&m.path("report.json"))?;
    m.file("report.json")?;
    std::fs::create_dir_all(m.path("predictions"))?;
    for p in &out.predictions {
        let name = format!(
            "predictions/{}{}_seed{}.csv",
            p.arm.id(),
            p.held_out.as_deref().map(|w| format!("_heldout-{w}")).unwrap_or_default(),
            p.seed
        );
        p.write_csv(&m.path(&name))?;
        m.file(&name)?;
    }
    m.fact("protocol", protocol.id());
    m.finish()?;
    for arm in &report.arms {
        println!("{}: micro-F1 {:.4} ± {:.4} over {} seeds", arm.arm.id(), arm.mean, arm.std, arm.f1.len());
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match &cli.cmd {
        Cmd::Config { config, preset, seed } => {
            let common = Common {
                seed: *seed,
                config: config.clone(),
                preset: *preset,
                out: PathBuf::new(),
            };
            print!("{}", load_config(&common)?.to_toml_string());
            Ok(())
        }
        Cmd::GenSynth { common } => cmd_gen_synth(common),
        Cmd::Prep { common, data } => cmd_prep(common, data),
        Cmd::MineMotifs { common, prep } => cmd_mine(common, prep),
        Cmd::BuildTargets { common, prep, motifs } => cmd_targets(common, prep, motifs),
        Cmd::Pretrain { common, prep, targets } => cmd_pretrain(common, prep, targets),
        Cmd::Train {
            common,
            prep,
            pretrained,
            motifs,
        } => cmd_train(common, prep, pretrained, motifs),
        Cmd::Evaluate {
            common,
            prep,
            pretrained,
            classifier,
        } => cmd_evaluate(common, prep, pretrained, classifier),
        Cmd::Experiment {
            common,
            data,
            protocol,
            labels,
            seeds,
        } => cmd_experiment(common, data.as_deref(), *protocol, *labels, *seeds),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let err = serde_json::json!({ "error": { "kind": e.kind(), "message": e.to_string() } });
            eprintln!("{err}");
            ExitCode::FAILURE
        }
    }
}
