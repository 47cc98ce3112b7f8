//! Run configuration: flat key/value text with `[section]` headers.
//!
//! Unknown sections or keys are rejected so typos fail fast. Every command
//! is a pure function of (config, input files); the `CHANFORGE_SEED`
//! environment variable overrides the global seed.

use chanforge::channelsim::{ArrayGeometry, SceneConfig};
use chanforge::diffusion::ScheduleSpec;
use chanforge::error::{Error, Result};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

#[derive(Clone, Debug)]
pub struct RunConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub scene: SceneConfig,
    pub n_train: usize,
    pub n_test: usize,
    /// Position stream seeds; making these equal is a config error.
    pub train_pos_seed: u64,
    pub test_pos_seed: u64,
    pub schedule: ScheduleSpec,
    pub train_epochs: usize,
    pub train_batch: usize,
    pub train_lr: f64,
    pub hidden_mult: usize,
    pub ema_mu: f64,
    pub n_aug: usize,
    pub snr_db: f64,
    pub compress_rate: usize,
    pub compress_epochs: usize,
    pub compress_batch: usize,
    pub compress_lr: f64,
    pub compress_restarts: usize,
    pub n_probe: usize,
    pub p_t_dbm: f64,
    pub noise_dbm: f64,
    pub beam_epochs: usize,
    pub beam_batch: usize,
    pub beam_lr: f64,
    pub beam_hidden: usize,
}

fn parse_geometry(v: &str) -> Result<ArrayGeometry> {
    let err = || Error::InvalidArgument(format!("bad geometry '{v}', want ula:N or upa:AxB"));
    let (kind, dims) = v.split_once(':').ok_or_else(err)?;
    match kind {
        "ula" => Ok(ArrayGeometry::Ula(dims.parse().map_err(|_| err())?)),
        "upa" => {
            let (a, b) = dims.split_once('x').ok_or_else(err)?;
            Ok(ArrayGeometry::Upa(
                a.parse().map_err(|_| err())?,
                b.parse().map_err(|_| err())?,
            ))
        }
        _ => Err(err()),
    }
}

struct Raw {
    values: BTreeMap<(String, String), String>,
}

impl Raw {
    fn parse(text: &str) -> Result<Self> {
        let mut values = BTreeMap::new();
        let mut section = String::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = match line.find('#') {
                Some(i) => &line[..i],
                None => line,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
                section = name.trim().to_string();
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::InvalidArgument(format!("line {}: expected key = value", lineno + 1))
            })?;
            if section.is_empty() {
                return Err(Error::InvalidArgument(format!(
                    "line {}: key outside any [section]",
                    lineno + 1
                )));
            }
            values.insert(
                (section.clone(), k.trim().to_string()),
                v.trim().to_string(),
            );
        }
        Ok(Raw { values })
    }

    fn take<T: std::str::FromStr>(&mut self, section: &str, key: &str, default: T) -> Result<T> {
        match self.values.remove(&(section.to_string(), key.to_string())) {
            None => Ok(default),
            Some(v) => v.parse().map_err(|_| {
                Error::InvalidArgument(format!("[{section}] {key}: cannot parse '{v}'"))
            }),
        }
    }

    fn take_str(&mut self, section: &str, key: &str, default: &str) -> String {
        self.values
            .remove(&(section.to_string(), key.to_string()))
            .unwrap_or_else(|| default.to_string())
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut raw = Raw::parse(text)?;

        let mut seed = raw.take("global", "seed", 1u64)?;
        if let Ok(env_seed) = std::env::var("CHANFORGE_SEED") {
            seed = env_seed.parse().map_err(|_| {
                Error::InvalidArgument(format!("CHANFORGE_SEED: cannot parse '{env_seed}'"))
            })?;
        }
        let out_dir = PathBuf::from(raw.take_str("global", "out_dir", "runs/out"));

        let tx = parse_geometry(&raw.take_str("scene", "tx_geometry", "ula:32"))?;
        let rx = parse_geometry(&raw.take_str("scene", "rx_geometry", "ula:4"))?;
        let scene = SceneConfig {
            tx_geometry: tx,
            rx_geometry: rx,
            radius_m: raw.take("scene", "radius_m", 100.0)?,
            l_max: raw.take("scene", "l_max", 6usize)?,
            wavelength_m: raw.take("scene", "wavelength_m", 0.0107)?,
            k_rician: raw.take("scene", "k_rician", 4.0)?,
            seed: raw.take("scene", "scene_seed", 1u64)?,
        };
        scene.validate()?;

        let cfg = RunConfig {
            seed,
            out_dir,
            scene,
            n_train: raw.take("data", "n_train", 1000usize)?,
            n_test: raw.take("data", "n_test", 500usize)?,
            train_pos_seed: raw.take("data", "train_pos_seed", seed.wrapping_add(1))?,
            test_pos_seed: raw.take("data", "test_pos_seed", seed.wrapping_add(2))?,
            schedule: ScheduleSpec {
                t_max: raw.take("schedule", "t", 64usize)?,
                beta_min: raw.take("schedule", "beta_min", 1e-3)?,
                beta_max: raw.take("schedule", "beta_max", 8e-2)?,
            },
            train_epochs: raw.take("train", "epochs", 150usize)?,
            train_batch: raw.take("train", "batch", 32usize)?,
            train_lr: raw.take("train", "lr", 1e-3)?,
            hidden_mult: raw.take("train", "hidden_mult", 4usize)?,
            ema_mu: raw.take("train", "ema_mu", 0.9)?,
            n_aug: raw.take("augment", "n_aug", 500usize)?,
            snr_db: raw.take("augment", "snr_db", 10.0)?,
            compress_rate: raw.take("compress", "rate", 4usize)?,
            compress_epochs: raw.take("compress", "epochs", 120usize)?,
            compress_batch: raw.take("compress", "batch", 32usize)?,
            compress_lr: raw.take("compress", "lr", 1e-3)?,
            compress_restarts: raw.take("compress", "restarts", 1usize)?,
            n_probe: raw.take("beam", "n_probe", 16usize)?,
            p_t_dbm: raw.take("beam", "p_t_dbm", 35.0)?,
            noise_dbm: raw.take("beam", "noise_dbm", -81.0)?,
            beam_epochs: raw.take("beam", "epochs", 150usize)?,
            beam_batch: raw.take("beam", "batch", 16usize)?,
            beam_lr: raw.take("beam", "lr", 2e-3)?,
            beam_hidden: raw.take("beam", "hidden", 64usize)?,
        };

        if let Some(((section, key), _)) = raw.values.iter().next() {
            return Err(Error::InvalidArgument(format!(
                "unknown config key [{section}] {key}"
            )));
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("data.n_train", self.n_train),
            ("data.n_test", self.n_test),
            ("train.epochs", self.train_epochs),
            ("train.batch", self.train_batch),
            ("augment.n_aug", self.n_aug),
            ("compress.epochs", self.compress_epochs),
            ("beam.epochs", self.beam_epochs),
            ("beam.n_probe", self.n_probe),
        ] {
            if v == 0 {
                return Err(Error::InvalidArgument(format!("{name} must be positive")));
            }
        }
        if self.train_pos_seed == self.test_pos_seed {
            return Err(Error::InvalidArgument(
                "train and test position seeds coincide; the splits would overlap".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.ema_mu) {
            return Err(Error::InvalidArgument("train.ema_mu must be in [0, 1)".into()));
        }
        self.schedule.build()?;
        Ok(())
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }
}
