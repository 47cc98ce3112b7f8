//! End-to-end checks of the command-line pipeline on a tiny scene.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_chanforge");

fn tiny_config(out_dir: &Path) -> String {
    format!(
        "[global]\n\
         seed = 11\n\
         out_dir = {}\n\
         [scene]\n\
         tx_geometry = ula:8\n\
         rx_geometry = ula:2\n\
         [data]\n\
         n_train = 24\n\
         n_test = 10\n\
         [schedule]\n\
         t = 8\n\
         beta_min = 0.05\n\
         beta_max = 0.3\n\
         [train]\n\
         epochs = 4\n\
         batch = 8\n\
         lr = 0.002\n\
         hidden_mult = 2\n\
         [augment]\n\
         n_aug = 12\n\
         [compress]\n\
         rate = 4\n\
         epochs = 5\n\
         batch = 8\n\
         [beam]\n\
         n_probe = 2\n\
         epochs = 3\n\
         batch = 8\n\
         hidden = 16\n",
        out_dir.display()
    )
}

fn run(args: &[&str]) -> Output {
    Command::new(BIN)
        .args(args)
        .env_remove("CHANFORGE_SEED")
        .output()
        .expect("binary runs")
}

fn assert_ok(out: &Output) {
    assert!(
        out.status.success(),
        "command failed: {}\n{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

struct Pipeline {
    _dir: tempfile::TempDir,
    out_dir: std::path::PathBuf,
    config: std::path::PathBuf,
}

fn setup() -> Pipeline {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("run");
    let config = dir.path().join("cfg.ini");
    fs::write(&config, tiny_config(&out_dir)).unwrap();
    Pipeline {
        _dir: dir,
        out_dir,
        config,
    }
}

fn cfg_str(p: &Pipeline) -> &str {
    p.config.to_str().unwrap()
}

#[test]
fn full_pipeline_produces_expected_artifacts() {
    let p = setup();
    let cfg = cfg_str(&p);

    assert_ok(&run(&["gen-data", "--config", cfg]));
    let train = chanforge::augment::read_dataset(&p.out_dir.join("train.chds")).unwrap();
    let test = chanforge::augment::read_dataset(&p.out_dir.join("test.chds")).unwrap();
    assert_eq!(train.len(), 24);
    assert_eq!(test.len(), 10);
    for tr in &train.records {
        assert!(test.records.iter().all(|te| te.position != tr.position));
    }

    assert_ok(&run(&["train", "--config", cfg, "--mode", "cddim"]));
    let (model, spec) =
        chanforge::diffusion::load_denoiser(&p.out_dir.join("cddim.ckpt")).unwrap();
    assert_eq!(model.tag(), chanforge::diffusion::ModelTag::Cddim);
    assert_eq!(spec.t_max, 8);
    let loss = chanforge::evaluation::read_metrics(&p.out_dir.join("loss_cddim.csv")).unwrap();
    assert_eq!(loss.len(), 4);

    // resume continues the epoch numbering
    assert_ok(&run(&["train", "--config", cfg, "--mode", "cddim", "--resume"]));
    let loss = chanforge::evaluation::read_metrics(&p.out_dir.join("loss_cddim.csv")).unwrap();
    assert_eq!(loss.len(), 8);
    let epochs: Vec<usize> = loss.iter().map(|r| r.x as usize).collect();
    assert_eq!(epochs, (0..8).collect::<Vec<_>>());

    // consistency training warm-starts from the cddim checkpoint
    assert_ok(&run(&["train", "--config", cfg, "--mode", "consistency"]));
    let (model, _) =
        chanforge::diffusion::load_denoiser(&p.out_dir.join("consistency.ckpt")).unwrap();
    assert_eq!(model.tag(), chanforge::diffusion::ModelTag::Consistency);

    for method in ["cddim", "gaussian", "nearest"] {
        assert_ok(&run(&["augment", "--config", cfg, "--method", method]));
        let ds =
            chanforge::augment::read_dataset(&p.out_dir.join(format!("aug_{method}.chds")))
                .unwrap();
        assert_eq!(ds.len(), 24 + 12, "method {method}");
        let want = match method {
            "cddim" => chanforge::augment::Provenance::Cddim,
            "gaussian" => chanforge::augment::Provenance::Gaussian,
            _ => chanforge::augment::Provenance::Nearest,
        };
        assert_eq!(ds.meta.provenance, want);
        assert_eq!(
            ds.records
                .iter()
                .filter(|r| r.provenance == chanforge::augment::Provenance::Reference)
                .count(),
            24
        );
        assert_eq!(ds.records.iter().filter(|r| r.provenance == want).count(), 12);
    }

    assert_ok(&run(&["eval", "--config", cfg, "--task", "peaks"]));
    let rows =
        chanforge::evaluation::read_metrics(&p.out_dir.join("metrics_peaks.csv")).unwrap();
    // the reference control row pins CDF(0) at 1
    let control = rows
        .iter()
        .find(|r| r.method == "reference" && r.x == 0.0)
        .unwrap();
    assert_eq!(control.value, 1.0);
    assert!(rows.iter().any(|r| r.method == "cddim"));
    assert!(rows.iter().any(|r| r.method == "nearest"));

    assert_ok(&run(&["eval", "--config", cfg, "--task", "compress"]));
    let rows =
        chanforge::evaluation::read_metrics(&p.out_dir.join("metrics_compress.csv")).unwrap();
    for method in ["reference", "cddim", "gaussian", "nearest"] {
        assert!(
            rows.iter()
                .any(|r| r.method == method && r.metric == "nmse_db"),
            "missing {method}"
        );
    }

    assert_ok(&run(&["eval", "--config", cfg, "--task", "beam"]));
    let rows =
        chanforge::evaluation::read_metrics(&p.out_dir.join("metrics_beam.csv")).unwrap();
    for method in ["mrt_mrc", "dft_egc", "genie_dft", "exhaustive", "bae_reference"] {
        assert!(
            rows.iter()
                .any(|r| r.method == method && r.metric == "avg_snr_db"),
            "missing {method}"
        );
    }
}

#[test]
fn reruns_are_byte_identical() {
    let p = setup();
    let cfg = cfg_str(&p);
    assert_ok(&run(&["gen-data", "--config", cfg]));
    assert_ok(&run(&["train", "--config", cfg, "--mode", "cddim"]));
    assert_ok(&run(&["augment", "--config", cfg, "--method", "cddim"]));

    let snapshot: Vec<(String, Vec<u8>)> = ["train.chds", "test.chds", "cddim.ckpt", "loss_cddim.csv", "aug_cddim.chds"]
        .iter()
        .map(|f| (f.to_string(), fs::read(p.out_dir.join(f)).unwrap()))
        .collect();

    assert_ok(&run(&["gen-data", "--config", cfg]));
    assert_ok(&run(&["train", "--config", cfg, "--mode", "cddim"]));
    assert_ok(&run(&["augment", "--config", cfg, "--method", "cddim"]));

    for (f, before) in snapshot {
        let after = fs::read(p.out_dir.join(&f)).unwrap();
        assert_eq!(before, after, "{f} changed between runs");
    }
}

#[test]
fn env_seed_override_changes_outputs() {
    let p = setup();
    let cfg = cfg_str(&p);
    assert_ok(&run(&["gen-data", "--config", cfg]));
    let baseline = fs::read(p.out_dir.join("train.chds")).unwrap();

    let out = Command::new(BIN)
        .args(["gen-data", "--config", cfg])
        .env("CHANFORGE_SEED", "999")
        .output()
        .unwrap();
    assert!(out.status.success());
    let overridden = fs::read(p.out_dir.join("train.chds")).unwrap();
    assert_ne!(baseline, overridden);
}

#[test]
fn exit_codes_follow_the_contract() {
    let p = setup();
    let cfg = cfg_str(&p);

    // config error: overlapping position seeds
    let bad = p._dir.path().join("bad.ini");
    fs::write(
        &bad,
        tiny_config(&p.out_dir) + "[data]\ntrain_pos_seed = 3\ntest_pos_seed = 3\n",
    )
    .unwrap();
    let out = run(&["gen-data", "--config", bad.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));

    // unknown key is a config error too
    let bad2 = p._dir.path().join("bad2.ini");
    fs::write(&bad2, tiny_config(&p.out_dir) + "[train]\nlearning = fast\n").unwrap();
    let out = run(&["train", "--config", bad2.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));

    // missing input: training before gen-data
    let out = run(&["train", "--config", cfg, "--mode", "cddim"]);
    assert_eq!(out.status.code(), Some(3));

    // missing checkpoint for cddim augmentation
    assert_ok(&run(&["gen-data", "--config", cfg]));
    let out = run(&["augment", "--config", cfg, "--method", "cddim"]);
    assert_eq!(out.status.code(), Some(3));
}
