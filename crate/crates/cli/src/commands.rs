//! The four pipeline commands. Each is a pure function of (config, input
//! files): re-running reproduces outputs byte for byte.

use crate::config::RunConfig;
use chanforge::augment::{
    augment_cddim, augment_gaussian, augment_nearest, read_dataset, write_dataset,
    ChannelDataset, DatasetMeta, Provenance, Record,
};
use chanforge::channelsim::{
    channel_at, from_beamspace, sample_position, CMat, NormMode, Position,
};
use chanforge::diffusion::{
    load_denoiser, save_denoiser, train_cddim, train_cddim_resume, train_consistency, TrainConfig,
};
use chanforge::downstream_beam::{
    avg_snr, bae_select, baseline_dft_egc, baseline_exhaustive, baseline_genie_dft,
    baseline_mrt_mrc, dft_codebook, train_bae, BaeTrainConfig, ProbingConfig,
};
use chanforge::downstream_compress::{
    eval_compressor, train_compressor, CompressorTrainConfig,
};
use chanforge::error::{Error, Result};
use chanforge::evaluation::{export_metrics, peak_cdf, read_metrics, MetricRow};
use chanforge::rng::{stream, stream_seed};
use std::path::Path;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TrainMode {
    Cddim,
    Consistency,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AugMethod {
    Cddim,
    Gaussian,
    Nearest,
}

impl AugMethod {
    pub fn tag(&self) -> &'static str {
        match self {
            AugMethod::Cddim => "cddim",
            AugMethod::Gaussian => "gaussian",
            AugMethod::Nearest => "nearest",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EvalTask {
    Peaks,
    Compress,
    Beam,
}

fn require(path: &Path) -> Result<()> {
    if !path.exists() {
        return Err(Error::Io(std::io::Error::new(
            std::io::ErrorKind::NotFound,
            format!("missing input {}", path.display()),
        )));
    }
    Ok(())
}

fn gen_records(cfg: &RunConfig, pos_seed: u64, n: usize) -> Result<Vec<Record>> {
    let mut rng = stream(pos_seed, "gen-pos", 0);
    (0..n)
        .map(|_| {
            let position = sample_position(&cfg.scene, &mut rng);
            Ok(Record {
                position,
                channel: channel_at(&position, &cfg.scene, NormMode::Frobenius)?,
                provenance: Provenance::Reference,
            })
        })
        .collect()
}

/// Step 1: write reference train/test splits with disjoint positions.
pub fn cmd_gen_data(cfg: &RunConfig) -> Result<()> {
    std::fs::create_dir_all(&cfg.out_dir)?;
    let train_records = gen_records(cfg, cfg.train_pos_seed, cfg.n_train)?;
    let test_records = gen_records(cfg, cfg.test_pos_seed, cfg.n_test)?;
    for tr in &train_records {
        if test_records.iter().any(|te| te.position == tr.position) {
            return Err(Error::InvalidArgument(
                "train/test position collision; change the position seeds".into(),
            ));
        }
    }
    let meta = DatasetMeta {
        scene_hash: cfg.scene.content_hash(),
        norm_mode: NormMode::Frobenius,
        creation_seed: cfg.seed,
        provenance: Provenance::Reference,
    };
    let train = ChannelDataset::new(train_records, meta)?;
    let test = ChannelDataset::new(test_records, meta)?;
    write_dataset(&train, &cfg.path("train.chds"))?;
    write_dataset(&test, &cfg.path("test.chds"))?;
    println!(
        "gen-data: train n={} test n={} shape {}x{} seed {}",
        train.len(),
        test.len(),
        train.n_r(),
        train.n_t(),
        cfg.seed
    );
    Ok(())
}

fn loss_rows(method: &str, losses: &[f64], start_epoch: usize, n: usize, seed: u64) -> Vec<MetricRow> {
    losses
        .iter()
        .enumerate()
        .map(|(i, &v)| MetricRow {
            method: method.to_string(),
            metric: "train_loss".to_string(),
            x: (start_epoch + i) as f64,
            value: v,
            n_samples: n,
            seed,
        })
        .collect()
}

/// Step 2: train the conditional denoiser (or its consistency variant).
pub fn cmd_train(
    cfg: &RunConfig,
    mode: TrainMode,
    init_from: Option<&Path>,
    resume: bool,
) -> Result<()> {
    let train_path = cfg.path("train.chds");
    require(&train_path)?;
    let dataset = read_dataset(&train_path)?;
    let sched = cfg.schedule.build()?;
    let tcfg = TrainConfig {
        epochs: cfg.train_epochs,
        batch: cfg.train_batch,
        lr: cfg.train_lr,
        hidden_mult: cfg.hidden_mult,
        scene_radius: cfg.scene.radius_m,
        seed: stream_seed(cfg.seed, "train", 0),
    };

    match mode {
        TrainMode::Cddim => {
            let ckpt = cfg.path("cddim.ckpt");
            let csv = cfg.path("loss_cddim.csv");
            let (model, report, start, mut rows) = if resume {
                require(&ckpt)?;
                let (mut model, _) = load_denoiser(&ckpt)?;
                let rows = if csv.exists() { read_metrics(&csv)? } else { Vec::new() };
                let start = rows.iter().map(|r| r.x as usize + 1).max().unwrap_or(0);
                let report = train_cddim_resume(&mut model, &dataset, &sched, &tcfg, start)?;
                (model, report, start, rows)
            } else {
                let (model, report) = train_cddim(&dataset, &sched, &tcfg)?;
                (model, report, 0, Vec::new())
            };
            rows.extend(loss_rows("cddim", &report.epoch_loss, start, dataset.len(), cfg.seed));
            save_denoiser(&model, &cfg.schedule, &ckpt)?;
            export_metrics(&rows, &csv)?;
            println!(
                "train cddim: {} epochs (from {}), final loss {:.6}",
                report.epoch_loss.len(),
                start,
                report.epoch_loss.last().unwrap_or(&f64::NAN)
            );
        }
        TrainMode::Consistency => {
            let init = match init_from {
                Some(p) => {
                    require(p)?;
                    Some(load_denoiser(p)?.0)
                }
                None => {
                    let default = cfg.path("cddim.ckpt");
                    if default.exists() {
                        Some(load_denoiser(&default)?.0)
                    } else {
                        None
                    }
                }
            };
            let (model, report) =
                train_consistency(&dataset, &sched, &tcfg, cfg.ema_mu, init.as_ref())?;
            save_denoiser(&model, &cfg.schedule, &cfg.path("consistency.ckpt"))?;
            export_metrics(
                &loss_rows("consistency", &report.epoch_loss, 0, dataset.len(), cfg.seed),
                &cfg.path("loss_consistency.csv"),
            )?;
            println!(
                "train consistency: {} epochs, final loss {:.6}",
                report.epoch_loss.len(),
                report.epoch_loss.last().unwrap_or(&f64::NAN)
            );
        }
    }
    Ok(())
}

fn aug_positions(cfg: &RunConfig, train: &ChannelDataset) -> Vec<Position> {
    let mut rng = stream(cfg.seed, "aug-pos", 0);
    let mut out = Vec::with_capacity(cfg.n_aug);
    while out.len() < cfg.n_aug {
        let p = sample_position(&cfg.scene, &mut rng);
        if train.records.iter().all(|r| r.position != p) {
            out.push(p);
        }
    }
    out
}

/// Step 3: produce an augmented dataset of `n_train + n_aug` records.
pub fn cmd_augment(cfg: &RunConfig, method: AugMethod) -> Result<()> {
    let train_path = cfg.path("train.chds");
    require(&train_path)?;
    let train = read_dataset(&train_path)?;

    let aug = match method {
        AugMethod::Cddim => {
            let ckpt = cfg.path("cddim.ckpt");
            require(&ckpt)?;
            let (model, spec) = load_denoiser(&ckpt)?;
            let sched = spec.build()?;
            let positions = aug_positions(cfg, &train);
            augment_cddim(
                &model,
                &train,
                &positions,
                &sched,
                stream_seed(cfg.seed, "augment", 0),
            )?
        }
        AugMethod::Gaussian => {
            let factor = cfg.n_aug.div_ceil(train.len());
            let full = augment_gaussian(
                &train,
                cfg.snr_db,
                factor,
                stream_seed(cfg.seed, "augment", 0),
            )?;
            let records = full.records[..cfg.n_aug].to_vec();
            ChannelDataset::new(records, full.meta)?
        }
        AugMethod::Nearest => {
            let positions = aug_positions(cfg, &train);
            augment_nearest(&train, &positions)?
        }
    };
    let merged = train.merge(&aug)?;
    let path = cfg.path(&format!("aug_{}.chds", method.tag()));
    write_dataset(&merged, &path)?;
    println!(
        "augment {}: wrote {} records ({} train + {} augmented)",
        method.tag(),
        merged.len(),
        train.len(),
        aug.len()
    );
    Ok(())
}

/// Steps 4-5: train downstream models per method and emit metric rows.
pub fn cmd_eval(cfg: &RunConfig, task: EvalTask) -> Result<()> {
    match task {
        EvalTask::Peaks => eval_peaks(cfg),
        EvalTask::Compress => eval_compress(cfg),
        EvalTask::Beam => eval_beam(cfg),
    }
}

/// Reference channels at the positions of a dataset's augmented tail.
fn scene_reference_for(
    cfg: &RunConfig,
    records: &[Record],
    meta: DatasetMeta,
) -> Result<ChannelDataset> {
    let refs = records
        .iter()
        .map(|r| {
            Ok(Record {
                position: r.position,
                channel: channel_at(&r.position, &cfg.scene, NormMode::Frobenius)?,
                provenance: Provenance::Reference,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    ChannelDataset::new(refs, meta)
}

fn eval_peaks(cfg: &RunConfig) -> Result<()> {
    let test_path = cfg.path("test.chds");
    require(&test_path)?;
    let test = read_dataset(&test_path)?;
    let d_max = test.n_t() - 1;
    let mut rows = Vec::new();
    let mut add_cdf = |method: &str, aug: &ChannelDataset, reference: &ChannelDataset| -> Result<()> {
        let cdf = peak_cdf(aug, reference, d_max)?;
        for (d, p) in cdf.d_values.iter().zip(&cdf.cdf) {
            rows.push(MetricRow {
                method: method.to_string(),
                metric: "p_d_cdf".to_string(),
                x: *d as f64,
                value: *p,
                n_samples: aug.len(),
                seed: cfg.seed,
            });
        }
        Ok(())
    };

    // control: reference against itself pins the CDF at 1
    add_cdf("reference", &test, &test)?;

    for (method, file) in [
        ("cddim", "aug_cddim.chds"),
        ("consistency", "aug_consistency.chds"),
        ("nearest", "aug_nearest.chds"),
    ] {
        let path = cfg.path(file);
        if !path.exists() {
            continue;
        }
        let ds = read_dataset(&path)?;
        // compare only the augmented tail, against scene truth at its positions
        let tail: Vec<Record> = ds
            .records
            .iter()
            .filter(|r| r.provenance != Provenance::Reference)
            .cloned()
            .collect();
        if tail.is_empty() {
            continue;
        }
        let aug = ChannelDataset::new(tail, ds.meta)?;
        let reference = scene_reference_for(cfg, &aug.records, ds.meta)?;
        add_cdf(method, &aug, &reference)?;
    }
    export_metrics(&rows, &cfg.path("metrics_peaks.csv"))?;
    println!("eval peaks: {} rows", rows.len());
    Ok(())
}

fn eval_compress(cfg: &RunConfig) -> Result<()> {
    let train_path = cfg.path("train.chds");
    let test_path = cfg.path("test.chds");
    require(&train_path)?;
    require(&test_path)?;
    let test = read_dataset(&test_path)?;

    let ccfg = CompressorTrainConfig {
        epochs: cfg.compress_epochs,
        batch: cfg.compress_batch,
        lr: cfg.compress_lr,
        rate: cfg.compress_rate,
        restarts: cfg.compress_restarts,
        val_fraction: 0.1,
        seed: stream_seed(cfg.seed, "compress", 0),
    };

    let mut rows = Vec::new();
    let mut methods: Vec<(String, std::path::PathBuf)> =
        vec![("reference".to_string(), train_path)];
    for (method, file) in [
        ("cddim", "aug_cddim.chds"),
        ("gaussian", "aug_gaussian.chds"),
        ("nearest", "aug_nearest.chds"),
    ] {
        let path = cfg.path(file);
        if path.exists() {
            methods.push((method.to_string(), path));
        }
    }
    for (method, path) in methods {
        let ds = read_dataset(&path)?;
        let (model, _) = train_compressor(&ds, &ccfg)?;
        let (_, db) = eval_compressor(&model, &test)?;
        rows.push(MetricRow {
            method,
            metric: "nmse_db".to_string(),
            x: ds.len() as f64,
            value: db,
            n_samples: test.len(),
            seed: cfg.seed,
        });
    }
    export_metrics(&rows, &cfg.path("metrics_compress.csv"))?;
    println!("eval compress: {} rows", rows.len());
    Ok(())
}

fn eval_beam(cfg: &RunConfig) -> Result<()> {
    let train_path = cfg.path("train.chds");
    let test_path = cfg.path("test.chds");
    require(&train_path)?;
    require(&test_path)?;
    let test = read_dataset(&test_path)?;
    let channels: Vec<CMat> = test
        .records
        .iter()
        .map(|r| from_beamspace(&r.channel, cfg.scene.rx_geometry, cfg.scene.tx_geometry).0)
        .collect();

    let probing = ProbingConfig::from_dbm(
        cfg.n_probe,
        cfg.p_t_dbm,
        cfg.noise_dbm,
        stream_seed(cfg.seed, "probing", 0),
    );
    let bs_cb = dft_codebook(cfg.scene.tx_geometry, 2);
    let ue_cb = dft_codebook(cfg.scene.rx_geometry, 2);

    let mut rows = Vec::new();
    let mut push = |method: &str, value: f64, n: usize| {
        rows.push(MetricRow {
            method: method.to_string(),
            metric: "avg_snr_db".to_string(),
            x: cfg.n_probe as f64,
            value,
            n_samples: n,
            seed: cfg.seed,
        });
    };

    let n = channels.len();
    push(
        "mrt_mrc",
        avg_snr(&channels, probing.p_t_watt, probing.noise_watt, |_, h| {
            baseline_mrt_mrc(h)
        })?,
        n,
    );
    push(
        "dft_egc",
        avg_snr(&channels, probing.p_t_watt, probing.noise_watt, |_, h| {
            baseline_dft_egc(h, &bs_cb)
        })?,
        n,
    );
    push(
        "genie_dft",
        avg_snr(&channels, probing.p_t_watt, probing.noise_watt, |_, h| {
            baseline_genie_dft(h, &bs_cb, &ue_cb)
        })?,
        n,
    );
    push(
        "exhaustive",
        avg_snr(&channels, probing.p_t_watt, probing.noise_watt, |i, h| {
            baseline_exhaustive(
                h,
                &bs_cb,
                &ue_cb,
                probing.p_t_watt,
                probing.noise_watt,
                stream_seed(probing.seed, "exhaustive-rec", i as u64),
            )
        })?,
        n,
    );

    let bcfg = BaeTrainConfig {
        epochs: cfg.beam_epochs,
        batch: cfg.beam_batch,
        lr: cfg.beam_lr,
        hidden: cfg.beam_hidden,
        seed: stream_seed(cfg.seed, "bae", 0),
        rx_geometry: cfg.scene.rx_geometry,
        tx_geometry: cfg.scene.tx_geometry,
        train_probing: true,
        measurement_noise: false,
    };
    let mut bae_methods: Vec<(String, std::path::PathBuf)> =
        vec![("bae_reference".to_string(), train_path)];
    for (method, file) in [
        ("bae_cddim", "aug_cddim.chds"),
        ("bae_gaussian", "aug_gaussian.chds"),
        ("bae_nearest", "aug_nearest.chds"),
    ] {
        let path = cfg.path(file);
        if path.exists() {
            bae_methods.push((method.to_string(), path));
        }
    }
    for (method, path) in bae_methods {
        let ds = read_dataset(&path)?;
        let (model, _) = train_bae(&ds, &probing, &bcfg)?;
        let snr = avg_snr(&channels, probing.p_t_watt, probing.noise_watt, |i, h| {
            bae_select(h, &model, &probing, stream_seed(probing.seed, "eval-rec", i as u64))
        })?;
        push(&method, snr, n);
    }
    export_metrics(&rows, &cfg.path("metrics_beam.csv"))?;
    println!("eval beam: {} rows", rows.len());
    Ok(())
}
