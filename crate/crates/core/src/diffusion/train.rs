//! Denoising and consistency training loops.

use super::model::{DenoiserArch, DenoiserModel, ModelTag};
use super::schedule::NoiseSchedule;
use crate::augment::ChannelDataset;
use crate::channelsim::{NormMode, Position};
use crate::error::{Error, Result};
use crate::numerics::{randn, AdamState, Graph, Tensor};
use crate::rng::stream;
use rand::seq::SliceRandom;
use rand::Rng;

#[derive(Clone, Copy, Debug)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub hidden_mult: usize,
    /// Position-embedding scale; coordinates are divided by it.
    pub scene_radius: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 200,
            batch: 32,
            lr: 1e-3,
            hidden_mult: 4,
            scene_radius: 100.0,
            seed: 1,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if self.epochs == 0
            || self.batch == 0
            || self.hidden_mult == 0
            || self.lr <= 0.0
            || self.scene_radius <= 0.0
        {
            return Err(Error::InvalidArgument(
                "train config fields must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Per-epoch mean training loss, appended as training proceeds.
#[derive(Clone, Debug, Default)]
pub struct TrainReport {
    pub epoch_loss: Vec<f64>,
}

fn dataset_rows(ds: &ChannelDataset) -> (Vec<Vec<f64>>, Vec<Position>) {
    let rows = ds
        .records
        .iter()
        .map(|r| r.channel.0.to_real_vec())
        .collect();
    (rows, ds.positions())
}

fn batch_tensor(rows: &[Vec<f64>], idx: &[usize]) -> Tensor {
    let d = rows[0].len();
    let mut data = Vec::with_capacity(idx.len() * d);
    for &i in idx {
        data.extend_from_slice(&rows[i]);
    }
    Tensor::new(vec![idx.len(), d], data).expect("rows share length")
}

fn require_frobenius(ds: &ChannelDataset) -> Result<()> {
    if ds.meta.norm_mode != NormMode::Frobenius {
        return Err(Error::InvalidArgument(
            "training expects frobenius-normalized channels".into(),
        ));
    }
    Ok(())
}

struct DivergenceGuard {
    reference: Option<f64>,
}

impl DivergenceGuard {
    fn new() -> Self {
        DivergenceGuard { reference: None }
    }

    fn check(&mut self, loss: f64) -> Result<()> {
        if !loss.is_finite() {
            return Err(Error::Divergence(format!("loss became {loss}")));
        }
        match self.reference {
            None => self.reference = Some(loss.max(f64::MIN_POSITIVE)),
            Some(r) if loss > 1e3 * r => {
                return Err(Error::Divergence(format!(
                    "loss {loss} exceeds 1000x initial {r}"
                )));
            }
            _ => {}
        }
        Ok(())
    }
}

/// Denoising training: perturb each channel to a uniformly drawn step and
/// regress the injected noise, conditioned on position and step.
pub fn train_cddim(
    dataset: &ChannelDataset,
    sched: &NoiseSchedule,
    cfg: &TrainConfig,
) -> Result<(DenoiserModel, TrainReport)> {
    cfg.validate()?;
    require_frobenius(dataset)?;
    let arch = DenoiserArch {
        n_r: dataset.n_r(),
        n_t: dataset.n_t(),
        hidden_mult: cfg.hidden_mult,
        scene_radius: cfg.scene_radius,
    };
    let mut model = DenoiserModel::init(arch, cfg.seed);
    let mut report = TrainReport::default();
    train_denoising_epochs(&mut model, dataset, sched, cfg, 0, &mut report)?;
    Ok((model, report))
}

/// Continue denoising training on an existing model (checkpoint resume).
/// `epoch_offset` keeps the per-sample randomness streams moving forward.
pub fn train_cddim_resume(
    model: &mut DenoiserModel,
    dataset: &ChannelDataset,
    sched: &NoiseSchedule,
    cfg: &TrainConfig,
    epoch_offset: usize,
) -> Result<TrainReport> {
    cfg.validate()?;
    require_frobenius(dataset)?;
    let mut report = TrainReport::default();
    train_denoising_epochs(model, dataset, sched, cfg, epoch_offset, &mut report)?;
    Ok(report)
}

fn train_denoising_epochs(
    model: &mut DenoiserModel,
    dataset: &ChannelDataset,
    sched: &NoiseSchedule,
    cfg: &TrainConfig,
    epoch_offset: usize,
    report: &mut TrainReport,
) -> Result<()> {
    let (rows, positions) = dataset_rows(dataset);
    let n = rows.len();
    let d = rows[0].len();
    let t_max = sched.t_max();
    let mut adam = AdamState::new(model.params(), cfg.lr);
    let mut guard = DivergenceGuard::new();

    for e in 0..cfg.epochs {
        let epoch = epoch_offset + e;
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut stream(cfg.seed, "epoch-shuffle", epoch as u64));

        let mut epoch_loss = 0.0;
        for chunk in order.chunks(cfg.batch) {
            let h0 = batch_tensor(&rows, chunk);
            let mut ts = Vec::with_capacity(chunk.len());
            let mut noise = Vec::with_capacity(chunk.len() * d);
            let mut h_t = h0.data().to_vec();
            for (bi, &i) in chunk.iter().enumerate() {
                let draw = (epoch * n + i) as u64;
                let t = stream(cfg.seed, "t-draw", draw).gen_range(1..=t_max);
                ts.push(t);
                let nrow = randn(&[d], &mut stream(cfg.seed, "fwd-noise", draw));
                let a = sched.alpha_bar(t).sqrt();
                let s = sched.sigma(t);
                for j in 0..d {
                    let v = nrow.data()[j];
                    h_t[bi * d + j] = a * h_t[bi * d + j] + s * v;
                    noise.push(v);
                }
            }
            let xs: Vec<Position> = chunk.iter().map(|&i| positions[i]).collect();

            let mut g = Graph::new();
            let h_t = g.leaf(Tensor::new(vec![chunk.len(), d], h_t)?);
            let pos = g.leaf(model.position_features(&xs));
            let tf = g.leaf(model.timestep_features(&ts, t_max));
            let target = g.leaf(Tensor::new(vec![chunk.len(), d], noise)?);
            let (est, ids) = model.forward_graph(&mut g, h_t, pos, tf)?;
            let diff = g.sub(est, target)?;
            let loss = g.mean_sq(diff)?;

            let loss_v = g.value(loss).item();
            guard.check(loss_v)?;
            epoch_loss += loss_v * chunk.len() as f64;

            let grads = g.backprop(loss)?;
            let grad_tensors: Vec<Tensor> = ids.iter().map(|id| grads.get(*id)).collect();
            adam.step(model.params_mut(), &grad_tensors)?;
        }
        report.epoch_loss.push(epoch_loss / n as f64);
    }
    Ok(())
}

/// `ema <- mu * ema + (1 - mu) * model`, elementwise over all parameters.
/// The EMA copy never receives gradients.
pub(crate) fn ema_update(ema: &mut DenoiserModel, model: &DenoiserModel, mu: f64) {
    for (e, p) in ema.params_mut().iter_mut().zip(model.params()) {
        for (ev, pv) in e.data_mut().iter_mut().zip(p.data()) {
            *ev = mu * *ev + (1.0 - mu) * pv;
        }
    }
}

/// Consistency training: match the noise estimate at step `t+1` against the
/// stop-gradient EMA model's estimate at step `t`, sharing the same noise
/// draw between the two perturbations.
pub fn train_consistency(
    dataset: &ChannelDataset,
    sched: &NoiseSchedule,
    cfg: &TrainConfig,
    mu: f64,
    init_from: Option<&DenoiserModel>,
) -> Result<(DenoiserModel, TrainReport)> {
    cfg.validate()?;
    require_frobenius(dataset)?;
    if !(0.0..1.0).contains(&mu) {
        return Err(Error::InvalidArgument(format!(
            "ema rate must be in [0, 1), got {mu}"
        )));
    }
    let t_max = sched.t_max();
    if t_max < 2 {
        return Err(Error::InvalidArgument(
            "consistency training needs T >= 2".into(),
        ));
    }

    let mut model = match init_from {
        Some(m) => m.clone(),
        None => DenoiserModel::init(
            DenoiserArch {
                n_r: dataset.n_r(),
                n_t: dataset.n_t(),
                hidden_mult: cfg.hidden_mult,
                scene_radius: cfg.scene_radius,
            },
            cfg.seed,
        ),
    };
    let mut ema = model.clone();

    let (rows, positions) = dataset_rows(dataset);
    let n = rows.len();
    let d = rows[0].len();
    let mut adam = AdamState::new(model.params(), cfg.lr);
    let mut guard = DivergenceGuard::new();
    let mut report = TrainReport::default();

    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut stream(cfg.seed, "cons-shuffle", epoch as u64));

        let mut epoch_loss = 0.0;
        for chunk in order.chunks(cfg.batch) {
            let h0 = batch_tensor(&rows, chunk);
            let mut ts_lo = Vec::with_capacity(chunk.len());
            let mut ts_hi = Vec::with_capacity(chunk.len());
            let mut h_lo = h0.data().to_vec();
            let mut h_hi = h0.data().to_vec();
            for (bi, &i) in chunk.iter().enumerate() {
                let draw = (epoch * n + i) as u64;
                let t = stream(cfg.seed, "cons-t", draw).gen_range(1..t_max);
                ts_lo.push(t);
                ts_hi.push(t + 1);
                let nrow = randn(&[d], &mut stream(cfg.seed, "cons-noise", draw));
                let (a0, s0) = (sched.alpha_bar(t).sqrt(), sched.sigma(t));
                let (a1, s1) = (sched.alpha_bar(t + 1).sqrt(), sched.sigma(t + 1));
                for j in 0..d {
                    let v = nrow.data()[j];
                    h_lo[bi * d + j] = a0 * h_lo[bi * d + j] + s0 * v;
                    h_hi[bi * d + j] = a1 * h_hi[bi * d + j] + s1 * v;
                }
            }
            let xs: Vec<Position> = chunk.iter().map(|&i| positions[i]).collect();

            // stop-gradient target from the EMA parameters
            let target = {
                let mut g = Graph::new();
                let h = g.leaf(Tensor::new(vec![chunk.len(), d], h_lo)?);
                let pos = g.leaf(ema.position_features(&xs));
                let tf = g.leaf(ema.timestep_features(&ts_lo, t_max));
                let (out, _) = ema.forward_graph(&mut g, h, pos, tf)?;
                g.value(out).clone()
            };

            let mut g = Graph::new();
            let h = g.leaf(Tensor::new(vec![chunk.len(), d], h_hi)?);
            let pos = g.leaf(model.position_features(&xs));
            let tf = g.leaf(model.timestep_features(&ts_hi, t_max));
            let tgt = g.leaf(target);
            let (est, ids) = model.forward_graph(&mut g, h, pos, tf)?;
            let diff = g.sub(est, tgt)?;
            let loss = g.mean_sq(diff)?;

            let loss_v = g.value(loss).item();
            guard.check(loss_v)?;
            epoch_loss += loss_v * chunk.len() as f64;

            let grads = g.backprop(loss)?;
            let grad_tensors: Vec<Tensor> = ids.iter().map(|id| grads.get(*id)).collect();
            adam.step(model.params_mut(), &grad_tensors)?;

            ema_update(&mut ema, &model, mu);
        }
        report.epoch_loss.push(epoch_loss / n as f64);
    }
    model.set_tag(ModelTag::Consistency);
    Ok((model, report))
}
