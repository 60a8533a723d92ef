use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use moil::config::RunConfig;
use moil::model::EncoderConfig;

fn tiny_config() -> RunConfig {
    let mut c = RunConfig::desk();
    c.synth.workers = 2;
    c.synth.periods_per_worker = 3;
    c.encoder = EncoderConfig {
        conv_blocks: 1,
        conv_channels: 4,
        kernel: 3,
        lstm_blocks: 1,
        lstm_units: 4,
        ..EncoderConfig::desk()
    };
    c.motifs.n_motifs = 4;
    c.pretrain.epochs = 2;
    c.classifier.epochs = 2;
    c.classifier.hidden = vec![8, 8];
    c.experiment.eval_epochs = vec![1, 2];
    c.experiment.seeds = vec![0, 1];
    c
}

struct Env {
    dir: tempfile::TempDir,
    config: PathBuf,
}

impl Env {
    fn new(cfg: &RunConfig) -> Self {
        let dir = tempfile::tempdir().unwrap();
        let config = dir.path().join("run.toml");
        std::fs::write(&config, cfg.to_toml_string()).unwrap();
        Self { dir, config }
    }

    fn path(&self, p: &str) -> PathBuf {
        self.dir.path().join(p)
    }

    fn run(&self, args: &[&str]) -> Output {
        Command::new(env!("CARGO_BIN_EXE_moil"))
            .args(args)
            .arg("--config")
            .arg(&self.config)
            .current_dir(self.dir.path())
            .env_remove("MOIL_OUT")
            .env_remove("MOIL_DATA")
            .output()
            .unwrap()
    }

    fn ok(&self, args: &[&str]) -> Output {
        let out = self.run(args);
        assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
        out
    }

    fn fails_with(&self, args: &[&str], kind: &str) -> String {
        let out = self.run(args);
        assert_eq!(out.status.code(), Some(1), "{args:?} should fail");
        let err: serde_json::Value = serde_json::from_slice(out.stderr.trim_ascii_end().rsplit(|&b| b == b'\n').next().unwrap())
            .unwrap_or_else(|e| panic!("stderr is not JSON ({e}): {}", String::from_utf8_lossy(&out.stderr)));
        assert_eq!(err["error"]["kind"], kind, "{err}");
        err["error"]["message"].as_str().unwrap().to_owned()
    }

    /// gen-synth through evaluate, each stage in `<prefix><stage>`.
    fn pipeline(&self, prefix: &str, seed: &str) {
        let d = |s: &str| format!("{prefix}{s}");
        self.ok(&["gen-synth", "--seed", seed, "--out", &d("synth")]);
        self.ok(&["prep", "--seed", seed, "--data", &format!("{}/data.csv", d("synth")), "--out", &d("prep")]);
        self.ok(&["mine-motifs", "--seed", seed, "--prep", &d("prep"), "--out", &d("motifs")]);
        self.ok(&["build-targets", "--seed", seed, "--prep", &d("prep"), "--motifs", &d("motifs"), "--out", &d("targets")]);
        self.ok(&["pretrain", "--seed", seed, "--prep", &d("prep"), "--targets", &d("targets"), "--out", &d("pretrain")]);
        self.ok(&[
            "train", "--seed", seed, "--prep", &d("prep"), "--pretrained", &d("pretrain"), "--motifs", &d("motifs"), "--out", &d("train"),
        ]);
        self.ok(&[
            "evaluate", "--seed", seed, "--prep", &d("prep"), "--pretrained", &d("pretrain"), "--classifier", &d("train"), "--out", &d("eval"),
        ]);
    }
}

fn files_under(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    for e in std::fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            out.extend(files_under(&p));
        } else {
            out.push(p);
        }
    }
    out.sort();
    out
}

fn assert_same_tree(a: &Path, b: &Path) {
    let fa = files_under(a);
    let fb = files_under(b);
    assert_eq!(fa.len(), fb.len());
    assert!(!fa.is_empty());
    for (x, y) in fa.iter().zip(&fb) {
        assert_eq!(x.strip_prefix(a).unwrap(), y.strip_prefix(b).unwrap());
        assert!(std::fs::read(x).unwrap() == std::fs::read(y).unwrap(), "{} differs", x.display());
    }
}

#[test]
fn pipeline_is_byte_reproducible() {
    let env = Env::new(&tiny_config());
    env.pipeline("a/", "3");
    env.pipeline("b/", "3");
    for stage in ["synth", "prep", "motifs", "targets", "pretrain", "train", "eval"] {
        assert_same_tree(&env.path(&format!("a/{stage}")), &env.path(&format!("b/{stage}")));
    }
    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(env.path("a/eval/report.json")).unwrap()).unwrap();
    let f1 = report["micro_f1"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&f1));
    let preds = std::fs::read_to_string(env.path("a/eval/predictions.csv")).unwrap();
    assert!(preds.starts_with("period_id,t,true,pred\n"));
    let curve = std::fs::read_to_string(env.path("a/pretrain/loss_curve.csv")).unwrap();
    assert_eq!(curve.lines().count(), 3);
}

#[test]
fn prep_is_idempotent() {
    let env = Env::new(&tiny_config());
    env.ok(&["gen-synth", "--out", "synth"]);
    env.ok(&["prep", "--data", "synth/data.csv", "--out", "p1"]);
    env.ok(&["prep", "--data", "p1/normalized.csv", "--out", "p2"]);
    let a = std::fs::read(env.path("p1/normalized.csv")).unwrap();
    let b = std::fs::read(env.path("p2/normalized.csv")).unwrap();
    assert!(a == b);
    assert!(std::fs::read(env.path("p1/symbols.csv")).unwrap() == std::fs::read(env.path("p2/symbols.csv")).unwrap());
}

#[test]
fn stages_refuse_mismatched_inputs() {
    let cfg = tiny_config();
    let env = Env::new(&cfg);
    env.pipeline("", "0");

    // Motifs mined with another seed do not match the pretrained encoder.
    env.ok(&["mine-motifs", "--seed", "1", "--prep", "prep", "--out", "motifs1"]);
    let msg = env.fails_with(&["train", "--prep", "prep", "--pretrained", "pretrain", "--motifs", "motifs1", "--out", "x"], "integrity");
    assert!(msg.contains("motif set"), "{msg}");

    // A stage directory of the wrong kind.
    env.fails_with(&["pretrain", "--prep", "prep", "--targets", "motifs", "--out", "x"], "integrity");

    // A different configuration.
    let mut other = cfg.clone();
    other.motifs.n_motifs = 5;
    std::fs::write(&env.config, other.to_toml_string()).unwrap();
    let msg = env.fails_with(&["mine-motifs", "--prep", "prep", "--out", "x"], "integrity");
    assert!(msg.contains("config"), "{msg}");
    std::fs::write(&env.config, cfg.to_toml_string()).unwrap();

    // Tampered file.
    let sym = env.path("prep/symbols.csv");
    let mut text = std::fs::read_to_string(&sym).unwrap();
    text.push('\n');
    std::fs::write(&sym, text).unwrap();
    env.fails_with(&["mine-motifs", "--prep", "prep", "--out", "x"], "integrity");

    env.fails_with(&["prep", "--data", "missing.csv", "--out", "x"], "missing_artifact");
    env.fails_with(&["mine-motifs", "--prep", "nowhere", "--out", "x"], "missing_artifact");
}

#[test]
fn bad_config_is_reported_as_json() {
    let env = Env::new(&tiny_config());
    std::fs::write(&env.config, "seed = 0\n[motifs]\nbogus = 1\n").unwrap();
    env.fails_with(&["gen-synth", "--out", "x"], "config");
}

#[test]
fn config_command_prints_loadable_toml() {
    let out = Command::new(env!("CARGO_BIN_EXE_moil")).args(["config", "--preset", "full", "--seed", "4"]).output().unwrap();
    assert!(out.status.success());
    let cfg = RunConfig::from_toml_str(std::str::from_utf8(&out.stdout).unwrap()).unwrap();
    let mut expected = RunConfig::full();
    expected.seed = 4;
    assert_eq!(cfg, expected);
}

#[test]
fn experiment_reports_both_arms_reproducibly() {
    let env = Env::new(&tiny_config());
    let run = |out: &str| {
        env.ok(&["experiment", "--protocol", "worker-dependent", "--labels", "0.5", "--seeds", "2", "--out", out]);
        std::fs::read(env.path(&format!("{out}/report.json"))).unwrap()
    };
    let a = run("e1");
    assert!(a == run("e2"));
    let report: serde_json::Value = serde_json::from_slice(&a).unwrap();
    assert_eq!(report["protocol"], "worker-dependent");
    assert_eq!(report["label_fraction"], 0.5);
    assert_eq!(report["encoders_frozen"], true);
    let arms = report["arms"].as_array().unwrap();
    assert_eq!(arms.len(), 2);
    for arm in arms {
        assert_eq!(arm["f1"].as_array().unwrap().len(), 2);
    }
    assert!(env.path("e1/predictions").read_dir().unwrap().count() >= 4);
}
