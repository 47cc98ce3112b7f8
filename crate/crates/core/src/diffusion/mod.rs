//! Conditional denoising diffusion: noise schedule, position/timestep
//! conditioned noise estimator, denoising training, deterministic DDIM
//! sampling, and consistency training for few-step sampling.

mod model;
mod schedule;
mod train;

pub use model::{denoiser_forward, denoiser_forward_batch, DenoiserArch, DenoiserModel, ModelTag};
pub use schedule::{build_schedule, NoiseSchedule, ScheduleSpec};
pub use train::{train_cddim, train_cddim_resume, train_consistency, TrainConfig, TrainReport};

use crate::channelsim::{BeamspaceChannel, CMat, Position};
use crate::checkpoint::{read_checkpoint, write_checkpoint, ByteReader, ByteWriter};
use crate::error::{Error, Result};
use crate::numerics::{randn, Tensor};
use crate::rng::stream;
use std::path::Path;

/// Forward perturbation `H[t] = sqrt(abar[t]) H[0] + sqrt(1 - abar[t]) N[t]`.
pub fn forward_noise(h0: &Tensor, t: usize, noise: &Tensor, sched: &NoiseSchedule) -> Tensor {
    assert_eq!(h0.shape(), noise.shape());
    let a = sched.alpha_bar(t).sqrt();
    let s = sched.sigma(t);
    let data = h0
        .data()
        .iter()
        .zip(noise.data())
        .map(|(&h, &n)| a * h + s * n)
        .collect();
    Tensor::new(h0.shape().to_vec(), data).expect("shapes verified above")
}

/// One deterministic reverse step from `t_hi` to `t_lo < t_hi` given the
/// noise estimate at `t_hi`:
///
/// `sqrt(1-abar[lo]) S + sqrt(abar[lo]) (H - sqrt(1-abar[hi]) S) / sqrt(abar[hi])`
pub fn ddim_step_with(
    h_t: &Tensor,
    t_hi: usize,
    t_lo: usize,
    s_tilde: &Tensor,
    sched: &NoiseSchedule,
) -> Result<Tensor> {
    if t_hi == 0 || t_hi > sched.t_max() || t_lo >= t_hi {
        return Err(Error::InvalidArgument(format!(
            "ddim step from t={t_hi} to t={t_lo} with T={}",
            sched.t_max()
        )));
    }
    if h_t.shape() != s_tilde.shape() {
        return Err(Error::Shape("noise estimate shape differs from state".into()));
    }
    let s_lo = sched.sigma(t_lo);
    let a_lo = sched.alpha_bar(t_lo).sqrt();
    let s_hi = sched.sigma(t_hi);
    let a_hi = sched.alpha_bar(t_hi).sqrt();
    let data = h_t
        .data()
        .iter()
        .zip(s_tilde.data())
        .map(|(&h, &s)| s_lo * s + a_lo * (h - s_hi * s) / a_hi)
        .collect();
    Tensor::new(h_t.shape().to_vec(), data)
}

/// One reverse step `t -> t-1` using the trained denoiser.
pub fn ddim_step(
    h_t: &Tensor,
    t: usize,
    x: &Position,
    model: &DenoiserModel,
    sched: &NoiseSchedule,
) -> Result<Tensor> {
    let est = denoiser_forward(h_t, x, t, model, sched.t_max())?;
    ddim_step_with(h_t, t, t - 1, &est, sched)
}

/// Deterministic sample for one position: seeded Gaussian init at `t = T`,
/// then the full reverse recursion.
pub fn sample(x: &Position, model: &DenoiserModel, sched: &NoiseSchedule, seed: u64) -> BeamspaceChannel {
    sample_strided(x, model, sched, sched.t_max(), seed)
}

/// Sample using `n_steps` evenly strided reverse steps (`n_steps = T`
/// recovers plain DDIM sampling).
pub fn sample_strided(
    x: &Position,
    model: &DenoiserModel,
    sched: &NoiseSchedule,
    n_steps: usize,
    seed: u64,
) -> BeamspaceChannel {
    sample_strided_batch(&[*x], model, sched, n_steps, &[seed]).remove(0)
}

/// Batched sampling, one (position, seed) pair per row. Row results are
/// bitwise identical to single-position sampling: every output element
/// accumulates over its own row only, in a fixed order.
pub fn sample_batch(
    positions: &[Position],
    model: &DenoiserModel,
    sched: &NoiseSchedule,
    seeds: &[u64],
) -> Vec<BeamspaceChannel> {
    sample_strided_batch(positions, model, sched, sched.t_max(), seeds)
}

pub fn sample_strided_batch(
    positions: &[Position],
    model: &DenoiserModel,
    sched: &NoiseSchedule,
    n_steps: usize,
    seeds: &[u64],
) -> Vec<BeamspaceChannel> {
    assert_eq!(positions.len(), seeds.len());
    let arch = *model.arch();
    let d = 2 * arch.n_r * arch.n_t;
    let n = positions.len();
    let mut init = Vec::with_capacity(n * d);
    for &seed in seeds {
        let mut rng = stream(seed, "ddim-init", 0);
        init.extend(randn(&[d], &mut rng).data());
    }
    let mut h = Tensor::new(vec![n, d], init).expect("rows assembled above");
    let t_max = sched.t_max();
    for (t_hi, t_lo) in strided_timesteps(t_max, n_steps) {
        let ts = vec![t_hi; n];
        let est = model::denoiser_forward_batch(&h, positions, &ts, model, t_max)
            .expect("timesteps stay within schedule");
        h = ddim_step_with(&h, t_hi, t_lo, &est, sched).expect("valid descent");
    }
    (0..n)
        .map(|i| {
            BeamspaceChannel(
                CMat::from_real_vec(arch.n_r, arch.n_t, &h.data()[i * d..(i + 1) * d])
                    .expect("state has 2*n_r*n_t reals"),
            )
        })
        .collect()
}

/// Descending (t_hi, t_lo) pairs covering T..0 in `n_steps` strides.
pub fn strided_timesteps(t_max: usize, n_steps: usize) -> Vec<(usize, usize)> {
    assert!(n_steps >= 1 && n_steps <= t_max);
    let taus: Vec<usize> = (1..=n_steps).map(|i| i * t_max / n_steps).rev().collect();
    let mut out = Vec::with_capacity(n_steps);
    for (i, &hi) in taus.iter().enumerate() {
        let lo = if i + 1 < taus.len() { taus[i + 1] } else { 0 };
        out.push((hi, lo));
    }
    out
}

const DENOISER_MAGIC: &[u8; 4] = b"CDNM";
const DENOISER_VERSION: u32 = 1;

/// Persist a denoiser checkpoint (magic, version, tag, architecture,
/// schedule, flat parameter block).
pub fn save_denoiser(
    model: &DenoiserModel,
    spec: &ScheduleSpec,
    path: &Path,
) -> Result<()> {
    let mut w = ByteWriter::new();
    w.put_u8(model.tag() as u8);
    let arch = model.arch();
    w.put_u32(arch.n_r as u32);
    w.put_u32(arch.n_t as u32);
    w.put_u32(arch.hidden_mult as u32);
    w.put_f64(arch.scene_radius);
    w.put_u64(spec.t_max as u64);
    w.put_f64(spec.beta_min);
    w.put_f64(spec.beta_max);
    w.put_u32(model.params().len() as u32);
    for p in model.params() {
        w.put_tensor(p);
    }
    write_checkpoint(path, DENOISER_MAGIC, DENOISER_VERSION, &w.into_bytes())
}

pub fn load_denoiser(path: &Path) -> Result<(DenoiserModel, ScheduleSpec)> {
    let payload = read_checkpoint(path, DENOISER_MAGIC, DENOISER_VERSION)?;
    let mut r = ByteReader::new(&payload);
    let tag = match r.get_u8()? {
        0 => ModelTag::Cddim,
        1 => ModelTag::Consistency,
        b => return Err(Error::Format(format!("unknown model tag {b}"))),
    };
    let arch = DenoiserArch {
        n_r: r.get_u32()? as usize,
        n_t: r.get_u32()? as usize,
        hidden_mult: r.get_u32()? as usize,
        scene_radius: r.get_f64()?,
    };
    let spec = ScheduleSpec {
        t_max: r.get_u64()? as usize,
        beta_min: r.get_f64()?,
        beta_max: r.get_f64()?,
    };
    let n_params = r.get_u32()? as usize;
    let mut params = Vec::with_capacity(n_params);
    for _ in 0..n_params {
        params.push(r.get_tensor()?);
    }
    if !r.done() {
        return Err(Error::Format("trailing bytes in checkpoint".into()));
    }
    let model = DenoiserModel::from_parts(arch, params, tag)?;
    Ok((model, spec))
}
