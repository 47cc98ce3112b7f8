//! Channel-compression downstream task: a dual-path encoder squeezes a
//! beamspace channel into a latent vector and a residual decoder
//! reconstructs it. Augmentation quality shows up as reconstruction NMSE on
//! held-out channels.

use crate::augment::ChannelDataset;
use crate::channelsim::{BeamspaceChannel, CMat, NormMode};
use crate::checkpoint::{read_checkpoint, write_checkpoint, ByteReader, ByteWriter};
use crate::error::{Error, Result};
use crate::evaluation::nmse;
use crate::numerics::{xavier, AdamState, Graph, NodeId, Tensor};
use crate::rng::stream;
use rand::seq::SliceRandom;
use std::path::Path;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CompressorArch {
    pub n_r: usize,
    pub n_t: usize,
    /// Latent length is `2 n_r n_t / rate`.
    pub rate: usize,
}

impl CompressorArch {
    pub fn input_dim(&self) -> usize {
        2 * self.n_r * self.n_t
    }

    pub fn latent_dim(&self) -> usize {
        self.input_dim() / self.rate
    }

    fn wide(&self) -> usize {
        self.input_dim()
    }

    fn narrow(&self) -> usize {
        (self.input_dim() / 8).max(8)
    }

    fn dec_width(&self) -> usize {
        self.input_dim()
    }

    /// Inputs are divided by this so the tanh paths stay away from
    /// saturation on frobenius-normalized channels.
    fn input_scale(&self) -> f64 {
        ((self.n_r * self.n_t) as f64).sqrt()
    }

    fn validate(&self) -> Result<()> {
        if self.rate == 0 || self.input_dim() % self.rate != 0 || self.latent_dim() == 0 {
            return Err(Error::InvalidArgument(format!(
                "compression rate {} does not divide input dim {}",
                self.rate,
                self.input_dim()
            )));
        }
        Ok(())
    }
}

// encoder: wide tanh path + narrow tanh path, concatenated, projected
const P_WW: usize = 0;
const P_BW: usize = 1;
const P_WN: usize = 2;
const P_BN: usize = 3;
const P_WL: usize = 4;
const P_BL: usize = 5;
// decoder: up-projection, two residual tanh blocks, linear head
const P_WU: usize = 6;
const P_BU: usize = 7;
const P_WA: usize = 8;
const P_BA: usize = 9;
const P_WB: usize = 10;
const P_BB: usize = 11;
const P_WO: usize = 12;
const P_BO: usize = 13;
const N_PARAMS: usize = 14;

#[derive(Clone, Debug)]
pub struct CompressorModel {
    arch: CompressorArch,
    params: Vec<Tensor>,
}

impl CompressorModel {
    pub fn init(arch: CompressorArch, seed: u64) -> Result<Self> {
        arch.validate()?;
        let d = arch.input_dim();
        let (w, n, l, u) = (arch.wide(), arch.narrow(), arch.latent_dim(), arch.dec_width());
        let r = |label: &str| stream(seed, label, 0);
        let params = vec![
            xavier(d, w, &mut r("ww")),
            Tensor::zeros(&[w]),
            xavier(d, n, &mut r("wn")),
            Tensor::zeros(&[n]),
            xavier(w + n, l, &mut r("wl")),
            Tensor::zeros(&[l]),
            xavier(l, u, &mut r("wu")),
            Tensor::zeros(&[u]),
            xavier(u, u, &mut r("wa")),
            Tensor::zeros(&[u]),
            xavier(u, u, &mut r("wb")),
            Tensor::zeros(&[u]),
            xavier(u, d, &mut r("wo")),
            Tensor::zeros(&[d]),
        ];
        Ok(CompressorModel { arch, params })
    }

    pub fn arch(&self) -> &CompressorArch {
        self.arch_ref()
    }

    fn arch_ref(&self) -> &CompressorArch {
        &self.arch
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut Vec<Tensor> {
        &mut self.params
    }

    /// Record encoder + decoder on the graph; returns (latent, recon).
    pub fn forward_graph(
        &self,
        g: &mut Graph,
        x: NodeId,
    ) -> Result<(NodeId, NodeId, Vec<NodeId>)> {
        let ids: Vec<NodeId> = self.params.iter().map(|p| g.leaf(p.clone())).collect();
        let s = self.arch.input_scale();
        let xin = g.mul_scalar(x, 1.0 / s);

        let wide = g.matmul(xin, ids[P_WW])?;
        let wide = g.add_bias(wide, ids[P_BW])?;
        let wide = g.tanh(wide);
        let narrow = g.matmul(xin, ids[P_WN])?;
        let narrow = g.add_bias(narrow, ids[P_BN])?;
        let narrow = g.tanh(narrow);
        let cat = g.concat_cols(wide, narrow)?;
        let latent = g.matmul(cat, ids[P_WL])?;
        let latent = g.add_bias(latent, ids[P_BL])?;

        let mut h = g.matmul(latent, ids[P_WU])?;
        h = g.add_bias(h, ids[P_BU])?;
        h = g.tanh(h);
        for (wi, bi) in [(P_WA, P_BA), (P_WB, P_BB)] {
            let block = g.matmul(h, ids[wi])?;
            let block = g.add_bias(block, ids[bi])?;
            let block = g.tanh(block);
            h = g.add(h, block)?;
        }
        let out = g.matmul(h, ids[P_WO])?;
        let out = g.add_bias(out, ids[P_BO])?;
        let out = g.mul_scalar(out, s);
        Ok((latent, out, ids))
    }
}

/// Encode one channel into its latent vector.
pub fn compress(hv: &BeamspaceChannel, model: &CompressorModel) -> Result<Vec<f64>> {
    let arch = model.arch();
    if hv.n_r() != arch.n_r || hv.n_t() != arch.n_t {
        return Err(Error::Shape(format!(
            "channel {}x{} vs compressor {}x{}",
            hv.n_r(),
            hv.n_t(),
            arch.n_r,
            arch.n_t
        )));
    }
    let x = Tensor::new(vec![1, arch.input_dim()], hv.0.to_real_vec())?;
    let mut g = Graph::new();
    let xid = g.leaf(x);
    let (latent, _, _) = model.forward_graph(&mut g, xid)?;
    Ok(g.value(latent).data().to_vec())
}

/// Decode a latent vector back into a channel estimate.
pub fn decompress(latent: &[f64], model: &CompressorModel) -> Result<BeamspaceChannel> {
    let arch = model.arch();
    if latent.len() != arch.latent_dim() {
        return Err(Error::Shape(format!(
            "latent length {} vs configured {}",
            latent.len(),
            arch.latent_dim()
        )));
    }
    let mut g = Graph::new();
    let ids: Vec<NodeId> = model.params.iter().map(|p| g.leaf(p.clone())).collect();
    let l = g.leaf(Tensor::new(vec![1, latent.len()], latent.to_vec())?);
    let mut h = g.matmul(l, ids[P_WU])?;
    h = g.add_bias(h, ids[P_BU])?;
    h = g.tanh(h);
    for (wi, bi) in [(P_WA, P_BA), (P_WB, P_BB)] {
        let block = g.matmul(h, ids[wi])?;
        let block = g.add_bias(block, ids[bi])?;
        let block = g.tanh(block);
        h = g.add(h, block)?;
    }
    let out = g.matmul(h, ids[P_WO])?;
    let out = g.add_bias(out, ids[P_BO])?;
    let out = g.mul_scalar(out, arch.input_scale());
    let data = g.value(out).data();
    Ok(BeamspaceChannel(CMat::from_real_vec(
        arch.n_r, arch.n_t, data,
    )?))
}

/// Full encode/decode round trip.
pub fn reconstruct(hv: &BeamspaceChannel, model: &CompressorModel) -> Result<BeamspaceChannel> {
    let latent = compress(hv, model)?;
    decompress(&latent, model)
}

#[derive(Clone, Copy, Debug)]
pub struct CompressorTrainConfig {
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub rate: usize,
    /// Best-of-k restarts selected by validation NMSE.
    pub restarts: usize,
    /// Fraction of the training set held out for restart selection.
    pub val_fraction: f64,
    pub seed: u64,
}

impl Default for CompressorTrainConfig {
    fn default() -> Self {
        CompressorTrainConfig {
            epochs: 150,
            batch: 32,
            lr: 1e-3,
            rate: 4,
            restarts: 1,
            val_fraction: 0.1,
            seed: 1,
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct CompressorReport {
    /// Training NMSE per epoch for the selected restart.
    pub epoch_nmse: Vec<f64>,
    /// Validation NMSE of every restart.
    pub restart_val_nmse: Vec<f64>,
    /// Index of the selected restart.
    pub chosen: usize,
}

/// Train with best-of-k restart selection on a validation split.
pub fn train_compressor(
    train_ds: &ChannelDataset,
    cfg: &CompressorTrainConfig,
) -> Result<(CompressorModel, CompressorReport)> {
    if cfg.epochs == 0 || cfg.batch == 0 || cfg.restarts == 0 || cfg.lr <= 0.0 {
        return Err(Error::InvalidArgument(
            "compressor config fields must be positive".into(),
        ));
    }
    if train_ds.meta.norm_mode != NormMode::Frobenius {
        return Err(Error::InvalidArgument(
            "compressor training expects frobenius-normalized channels".into(),
        ));
    }
    let arch = CompressorArch {
        n_r: train_ds.n_r(),
        n_t: train_ds.n_t(),
        rate: cfg.rate,
    };
    arch.validate()?;

    // deterministic validation split
    let n = train_ds.len();
    if n < 2 {
        return Err(Error::InvalidArgument(
            "compressor training needs at least 2 records".into(),
        ));
    }
    let n_val = ((n as f64 * cfg.val_fraction) as usize).clamp(1, n - 1);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut stream(cfg.seed, "val-split", 0));
    let (val_idx, fit_idx) = order.split_at(n_val.min(n - 1));

    let rows: Vec<Vec<f64>> = train_ds
        .records
        .iter()
        .map(|r| r.channel.0.to_real_vec())
        .collect();

    let mut best: Option<(CompressorModel, CompressorReport, f64)> = None;
    let mut val_scores = Vec::with_capacity(cfg.restarts);
    for k in 0..cfg.restarts {
        let seed = crate::rng::stream_seed(cfg.seed, "restart", k as u64);
        let (model, epoch_nmse) = fit_once(arch, &rows, fit_idx, cfg, seed)?;
        let val = validation_nmse(&model, train_ds, val_idx)?;
        val_scores.push(val);
        let better = best.as_ref().map(|(_, _, b)| val < *b).unwrap_or(true);
        if better {
            best = Some((
                model,
                CompressorReport {
                    epoch_nmse,
                    restart_val_nmse: Vec::new(),
                    chosen: k,
                },
                val,
            ));
        }
    }
    let (model, mut report, _) = best.expect("restarts >= 1");
    report.restart_val_nmse = val_scores;
    Ok((model, report))
}

fn fit_once(
    arch: CompressorArch,
    rows: &[Vec<f64>],
    fit_idx: &[usize],
    cfg: &CompressorTrainConfig,
    seed: u64,
) -> Result<(CompressorModel, Vec<f64>)> {
    let mut model = CompressorModel::init(arch, seed)?;
    let mut adam = AdamState::new(model.params(), cfg.lr);
    let d = arch.input_dim();
    // frobenius-normalized rows all carry the same reference power
    let ref_pow = (arch.n_r * arch.n_t) as f64;
    let mut epoch_nmse = Vec::with_capacity(cfg.epochs);
    let mut guard_ref: Option<f64> = None;

    for epoch in 0..cfg.epochs {
        let mut order = fit_idx.to_vec();
        order.shuffle(&mut stream(seed, "epoch-shuffle", epoch as u64));
        let mut acc = 0.0;
        for chunk in order.chunks(cfg.batch) {
            let mut data = Vec::with_capacity(chunk.len() * d);
            for &i in chunk {
                data.extend_from_slice(&rows[i]);
            }
            let x = Tensor::new(vec![chunk.len(), d], data)?;
            let mut g = Graph::new();
            let xid = g.leaf(x);
            let (_, recon, ids) = model.forward_graph(&mut g, xid)?;
            let diff = g.sub(recon, xid)?;
            let loss = g.mean_sq(diff)?;

            let loss_v = g.value(loss).item();
            if !loss_v.is_finite() {
                return Err(Error::Divergence(format!("loss became {loss_v}")));
            }
            match guard_ref {
                None => guard_ref = Some(loss_v.max(f64::MIN_POSITIVE)),
                Some(r) if loss_v > 1e3 * r => {
                    return Err(Error::Divergence(format!(
                        "loss {loss_v} exceeds 1000x initial {r}"
                    )));
                }
                _ => {}
            }
            acc += loss_v * chunk.len() as f64;

            let grads = g.backprop(loss)?;
            let grad_tensors: Vec<Tensor> = ids.iter().map(|id| grads.get(*id)).collect();
            adam.step(model.params_mut(), &grad_tensors)?;
        }
        // mean entry MSE -> NMSE against the shared reference power
        let mse = acc / order.len() as f64;
        epoch_nmse.push(mse * d as f64 / ref_pow);
    }
    Ok((model, epoch_nmse))
}

fn validation_nmse(
    model: &CompressorModel,
    ds: &ChannelDataset,
    idx: &[usize],
) -> Result<f64> {
    let mut acc = 0.0;
    for &i in idx {
        let rec = &ds.records[i];
        let recon = reconstruct(&rec.channel, model)?;
        acc += nmse(&recon, &rec.channel)?;
    }
    Ok(acc / idx.len() as f64)
}

/// Mean reconstruction NMSE over a test set, linear and dB.
pub fn eval_compressor(model: &CompressorModel, test_ds: &ChannelDataset) -> Result<(f64, f64)> {
    let mut acc = 0.0;
    for rec in &test_ds.records {
        let recon = reconstruct(&rec.channel, model)?;
        acc += nmse(&recon, &rec.channel)?;
    }
    let linear = acc / test_ds.len() as f64;
    Ok((linear, 10.0 * linear.log10()))
}

const MAGIC: &[u8; 4] = b"CCMP";
const VERSION: u32 = 1;

pub fn save_compressor(model: &CompressorModel, path: &Path) -> Result<()> {
    let mut w = ByteWriter::new();
    let arch = model.arch();
    w.put_u32(arch.n_r as u32);
    w.put_u32(arch.n_t as u32);
    w.put_u32(arch.rate as u32);
    w.put_u32(model.params().len() as u32);
    for p in model.params() {
        w.put_tensor(p);
    }
    write_checkpoint(path, MAGIC, VERSION, &w.into_bytes())
}

pub fn load_compressor(path: &Path) -> Result<CompressorModel> {
    let payload = read_checkpoint(path, MAGIC, VERSION)?;
    let mut r = ByteReader::new(&payload);
    let arch = CompressorArch {
        n_r: r.get_u32()? as usize,
        n_t: r.get_u32()? as usize,
        rate: r.get_u32()? as usize,
    };
    arch.validate()?;
    let n = r.get_u32()? as usize;
    if n != N_PARAMS {
        return Err(Error::Format(format!(
            "compressor wants {N_PARAMS} tensors, got {n}"
        )));
    }
    let mut params = Vec::with_capacity(n);
    for _ in 0..n {
        params.push(r.get_tensor()?);
    }
    if !r.done() {
        return Err(Error::Format("trailing bytes in checkpoint".into()));
    }
    Ok(CompressorModel { arch, params })
}
