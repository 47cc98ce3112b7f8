//! Beam-alignment downstream task: probing-beam measurements, a learned
//! probing + beam-synthesizer model trained end to end, and the classical
//! selection baselines it is compared against.

use crate::augment::ChannelDataset;
use crate::channelsim::cmat::{vdot, vec_norm};
use crate::channelsim::{from_beamspace, ArrayGeometry, CMat, NormMode};
use crate::checkpoint::{read_checkpoint, write_checkpoint, ByteReader, ByteWriter};
use crate::error::{Error, Result};
use crate::numerics::complex::{cx_hermitian, cx_matmul, cx_modsq, cx_normalize, CxNode};
use crate::numerics::{xavier, AdamState, Graph, NodeId, Tensor};
use crate::rng::stream;
use num_complex::Complex64;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use std::f64::consts::PI;
use std::path::Path;

/// Grid of unit-norm beams over the array.
#[derive(Clone, Debug)]
pub struct Codebook {
    pub beams: Vec<Vec<Complex64>>,
}

impl Codebook {
    pub fn len(&self) -> usize {
        self.beams.len()
    }

    pub fn is_empty(&self) -> bool {
        self.beams.is_empty()
    }
}

/// Oversampled DFT codebook; beams have unit-modulus entries scaled by
/// `1/sqrt(n)`, so each beam is unit-norm. A UPA codebook is the Kronecker
/// grid over both axes.
pub fn dft_codebook(geometry: ArrayGeometry, oversample: usize) -> Codebook {
    assert!(oversample >= 1);
    let beams = match geometry {
        ArrayGeometry::Ula(n) => ula_grid(n, oversample),
        ArrayGeometry::Upa(a, b) => {
            let ga = ula_grid(a, oversample);
            let gb = ula_grid(b, oversample);
            let mut out = Vec::with_capacity(ga.len() * gb.len());
            for va in &ga {
                for vb in &gb {
                    let mut beam = Vec::with_capacity(va.len() * vb.len());
                    for &x in va {
                        for &y in vb {
                            beam.push(x * y);
                        }
                    }
                    out.push(beam);
                }
            }
            out
        }
    };
    Codebook { beams }
}

fn ula_grid(n: usize, oversample: usize) -> Vec<Vec<Complex64>> {
    let count = n * oversample;
    let scale = 1.0 / (n as f64).sqrt();
    (0..count)
        .map(|m| {
            (0..n)
                .map(|k| Complex64::from_polar(scale, 2.0 * PI * (k * m) as f64 / count as f64))
                .collect()
        })
        .collect()
}

/// Probing setup: slot count, transmit power, and noise power in watts.
#[derive(Clone, Copy, Debug)]
pub struct ProbingConfig {
    pub n_probe: usize,
    pub p_t_watt: f64,
    pub noise_watt: f64,
    pub seed: u64,
}

impl ProbingConfig {
    pub fn from_dbm(n_probe: usize, p_t_dbm: f64, noise_dbm: f64, seed: u64) -> Self {
        ProbingConfig {
            n_probe,
            p_t_watt: 10f64.powf((p_t_dbm - 30.0) / 10.0),
            noise_watt: 10f64.powf((noise_dbm - 30.0) / 10.0),
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.n_probe == 0 || self.p_t_watt <= 0.0 || self.noise_watt < 0.0 {
            return Err(Error::InvalidArgument(
                "probing config fields must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Received probing powers: `z_k = |sqrt(P) w_k^H H f_k + w_k^H n_k|^2`,
/// one sequential slot per probe column. Noise draws are seeded per probe
/// index.
pub fn probe_measurements(
    h: &CMat,
    w: &CMat,
    f: &CMat,
    p_t: f64,
    noise_watt: f64,
    seed: u64,
) -> Result<Vec<f64>> {
    if w.rows() != h.rows() || f.rows() != h.cols() || w.cols() != f.cols() {
        return Err(Error::Shape(format!(
            "probing dims: H {}x{}, W {}x{}, F {}x{}",
            h.rows(),
            h.cols(),
            w.rows(),
            w.cols(),
            f.rows(),
            f.cols()
        )));
    }
    let n_probe = w.cols();
    let comp_std = (noise_watt / 2.0).sqrt();
    let mut z = Vec::with_capacity(n_probe);
    for k in 0..n_probe {
        let w_k: Vec<Complex64> = (0..w.rows()).map(|i| w.get(i, k)).collect();
        let f_k: Vec<Complex64> = (0..f.rows()).map(|i| f.get(i, k)).collect();
        let hf = h.matvec(&f_k)?;
        let mut y = vdot(&w_k, &hf) * p_t.sqrt();
        if noise_watt > 0.0 {
            let mut rng = stream(seed, "probe-noise", k as u64);
            let n_k: Vec<Complex64> = (0..w.rows())
                .map(|_| {
                    Complex64::new(
                        comp_std * rng.sample::<f64, _>(StandardNormal),
                        comp_std * rng.sample::<f64, _>(StandardNormal),
                    )
                })
                .collect();
            y += vdot(&w_k, &n_k);
        }
        z.push(y.norm_sqr());
    }
    Ok(z)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BaeArch {
    pub n_r: usize,
    pub n_t: usize,
    pub n_probe: usize,
    pub hidden: usize,
}

// trainable probing/sensing matrices (real/imag parts)
const P_WRE: usize = 0;
const P_WIM: usize = 1;
const P_FRE: usize = 2;
const P_FIM: usize = 3;
// synthesizer trunk and the two beam heads
const P_H1W: usize = 4;
const P_H1B: usize = 5;
const P_H2W: usize = 6;
const P_H2B: usize = 7;
const P_RXW: usize = 8;
const P_RXB: usize = 9;
const P_TXW: usize = 10;
const P_TXB: usize = 11;
const N_PARAMS: usize = 12;

/// Learned probing matrices plus the beam-synthesizer network.
#[derive(Clone, Debug)]
pub struct BaeModel {
    arch: BaeArch,
    params: Vec<Tensor>,
}

impl BaeModel {
    pub fn init(arch: BaeArch, seed: u64) -> Self {
        let r = |label: &str| stream(seed, label, 0);
        let (n_r, n_t, np, hid) = (arch.n_r, arch.n_t, arch.n_probe, arch.hidden);
        let mut model = BaeModel {
            arch,
            params: vec![
                crate::numerics::randn(&[n_r, np], &mut r("wre")),
                crate::numerics::randn(&[n_r, np], &mut r("wim")),
                crate::numerics::randn(&[n_t, np], &mut r("fre")),
                crate::numerics::randn(&[n_t, np], &mut r("fim")),
                xavier(np, hid, &mut r("h1")),
                Tensor::zeros(&[hid]),
                xavier(hid, hid, &mut r("h2")),
                Tensor::zeros(&[hid]),
                xavier(hid, 2 * n_r, &mut r("rx")),
                Tensor::zeros(&[2 * n_r]),
                xavier(hid, 2 * n_t, &mut r("tx")),
                Tensor::zeros(&[2 * n_t]),
            ],
        };
        model.project_probing();
        model
    }

    pub fn arch(&self) -> &BaeArch {
        &self.arch
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut Vec<Tensor> {
        &mut self.params
    }

    /// Element-wise normalization: every probing/sensing entry is forced to
    /// modulus `1/sqrt(n)` for its array.
    pub fn project_probing(&mut self) {
        for (re_i, im_i, n) in [
            (P_WRE, P_WIM, self.arch.n_r),
            (P_FRE, P_FIM, self.arch.n_t),
        ] {
            let target = 1.0 / (n as f64).sqrt();
            let (left, right) = self.params.split_at_mut(im_i);
            let re = left[re_i].data_mut();
            let im = right[0].data_mut();
            for (r, i) in re.iter_mut().zip(im.iter_mut()) {
                let mag = (*r * *r + *i * *i).sqrt();
                if mag == 0.0 {
                    *r = target;
                    *i = 0.0;
                } else {
                    *r *= target / mag;
                    *i *= target / mag;
                }
            }
        }
    }

    /// Sensing matrix `W` as a complex matrix.
    pub fn w_mat(&self) -> CMat {
        tensor_pair_to_cmat(&self.params[P_WRE], &self.params[P_WIM])
    }

    /// Probing matrix `F` as a complex matrix.
    pub fn f_mat(&self) -> CMat {
        tensor_pair_to_cmat(&self.params[P_FRE], &self.params[P_FIM])
    }

    /// Record the synthesizer on a graph: measurement vector `[1, n_probe]`
    /// to a unit-norm beam pair.
    fn synth_graph(
        &self,
        g: &mut Graph,
        ids: &[NodeId],
        z: NodeId,
    ) -> Result<(CxNode, CxNode)> {
        let (n_r, n_t) = (self.arch.n_r, self.arch.n_t);
        // amplitude features, scale-normalized
        let feat = g.add_scalar(z, 1e-12);
        let feat = g.sqrt(feat);
        let feat = g.normalize(feat, 1e-12)?;

        let h1 = g.matmul(feat, ids[P_H1W])?;
        let h1 = g.add_bias(h1, ids[P_H1B])?;
        let h1 = g.relu(h1);
        let h2 = g.matmul(h1, ids[P_H2W])?;
        let h2 = g.add_bias(h2, ids[P_H2B])?;
        let h2 = g.relu(h2);

        let mut head = |w: usize, b: usize, n: usize| -> Result<CxNode> {
            let out = g.matmul(h2, ids[w])?;
            let out = g.add_bias(out, ids[b])?;
            let re = g.slice_cols(out, 0, n)?;
            let im = g.slice_cols(out, n, 2 * n)?;
            let re = g.reshape(re, vec![n, 1])?;
            let im = g.reshape(im, vec![n, 1])?;
            cx_normalize(g, CxNode::new(re, im), 1e-30)
        };
        let v_r = head(P_RXW, P_RXB, n_r)?;
        let v_t = head(P_TXW, P_TXB, n_t)?;
        Ok((v_r, v_t))
    }
}

fn tensor_pair_to_cmat(re: &Tensor, im: &Tensor) -> CMat {
    let (rows, cols) = (re.shape()[0], re.shape()[1]);
    let data = re
        .data()
        .iter()
        .zip(im.data())
        .map(|(&r, &i)| Complex64::new(r, i))
        .collect();
    CMat::from_vec(rows, cols, data).expect("paired tensors share shape")
}

fn cmat_leaf(g: &mut Graph, m: &CMat) -> CxNode {
    let (rows, cols) = (m.rows(), m.cols());
    let re: Vec<f64> = m.data().iter().map(|v| v.re).collect();
    let im: Vec<f64> = m.data().iter().map(|v| v.im).collect();
    CxNode::new(
        g.leaf(Tensor::new(vec![rows, cols], re).expect("dims agree")),
        g.leaf(Tensor::new(vec![rows, cols], im).expect("dims agree")),
    )
}

fn node_to_cvec(g: &Graph, v: CxNode) -> Vec<Complex64> {
    g.value(v.re)
        .data()
        .iter()
        .zip(g.value(v.im).data())
        .map(|(&r, &i)| Complex64::new(r, i))
        .collect()
}

/// Beams synthesized from a measurement vector; unit-norm and deterministic.
pub fn synthesize_beams(
    z: &[f64],
    model: &BaeModel,
) -> Result<(Vec<Complex64>, Vec<Complex64>)> {
    if z.len() != model.arch.n_probe {
        return Err(Error::Shape(format!(
            "measurement length {} vs n_probe {}",
            z.len(),
            model.arch.n_probe
        )));
    }
    let mut g = Graph::new();
    let ids: Vec<NodeId> = model.params.iter().map(|p| g.leaf(p.clone())).collect();
    let zid = g.leaf(Tensor::new(vec![1, z.len()], z.to_vec())?);
    let (v_r, v_t) = model.synth_graph(&mut g, &ids, zid)?;
    Ok((node_to_cvec(&g, v_r), node_to_cvec(&g, v_t)))
}

/// Probe with the model's own matrices, then synthesize.
pub fn bae_select(
    h: &CMat,
    model: &BaeModel,
    probing: &ProbingConfig,
    record_seed: u64,
) -> Result<(Vec<Complex64>, Vec<Complex64>)> {
    let z = probe_measurements(
        h,
        &model.w_mat(),
        &model.f_mat(),
        probing.p_t_watt,
        probing.noise_watt,
        record_seed,
    )?;
    synthesize_beams(&z, model)
}

#[derive(Clone, Copy, Debug)]
pub struct BaeTrainConfig {
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub hidden: usize,
    pub seed: u64,
    pub rx_geometry: ArrayGeometry,
    pub tx_geometry: ArrayGeometry,
    /// Train the probing matrices; frozen random probing when false (the
    /// ablation baseline).
    pub train_probing: bool,
    /// Include seeded measurement noise inside the training-time probing.
    pub measurement_noise: bool,
}

#[derive(Clone, Debug, Default)]
pub struct BaeReport {
    /// Mean achieved gain `|v_r^H H v_t|^2` per epoch.
    pub epoch_gain: Vec<f64>,
}

/// Joint training of probing matrices and synthesizer to maximize the mean
/// beamforming gain; probing entries are re-normalized to unit modulus after
/// every optimizer step.
pub fn train_bae(
    train_ds: &ChannelDataset,
    probing: &ProbingConfig,
    cfg: &BaeTrainConfig,
) -> Result<(BaeModel, BaeReport)> {
    probing.validate()?;
    if cfg.epochs == 0 || cfg.batch == 0 || cfg.lr <= 0.0 || cfg.hidden == 0 {
        return Err(Error::InvalidArgument(
            "bae config fields must be positive".into(),
        ));
    }
    if train_ds.meta.norm_mode != NormMode::Frobenius {
        return Err(Error::InvalidArgument(
            "bae training expects constant-Frobenius-norm channels".into(),
        ));
    }
    if cfg.rx_geometry.elements() != train_ds.n_r()
        || cfg.tx_geometry.elements() != train_ds.n_t()
    {
        return Err(Error::Shape(
            "geometry element counts disagree with dataset".into(),
        ));
    }

    let arch = BaeArch {
        n_r: train_ds.n_r(),
        n_t: train_ds.n_t(),
        n_probe: probing.n_probe,
        hidden: cfg.hidden,
    };
    let mut model = BaeModel::init(arch, cfg.seed);
    let channels: Vec<CMat> = train_ds
        .records
        .iter()
        .map(|r| from_beamspace(&r.channel, cfg.rx_geometry, cfg.tx_geometry).0)
        .collect();

    let np = probing.n_probe;
    let eye = {
        let mut m = Tensor::zeros(&[np, np]);
        for k in 0..np {
            m.data_mut()[k * np + k] = 1.0;
        }
        m
    };
    let ones = Tensor::ones(&[np, 1]);
    let comp_std = (probing.noise_watt / 2.0).sqrt();

    let n = channels.len();
    let mut adam = AdamState::new(model.params(), cfg.lr);
    let mut report = BaeReport::default();
    let mut guard_ref: Option<f64> = None;

    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut stream(cfg.seed, "bae-shuffle", epoch as u64));

        let mut epoch_gain = 0.0;
        for chunk in order.chunks(cfg.batch) {
            let mut g = Graph::new();
            let ids: Vec<NodeId> = model.params.iter().map(|p| g.leaf(p.clone())).collect();
            let w = CxNode::new(ids[P_WRE], ids[P_WIM]);
            let f = CxNode::new(ids[P_FRE], ids[P_FIM]);
            let eye_id = g.leaf(eye.clone());
            let ones_id = g.leaf(ones.clone());

            let mut gain_sum: Option<NodeId> = None;
            for &i in chunk {
                let h = cmat_leaf(&mut g, &channels[i]);
                let wh = cx_hermitian(&mut g, w)?;
                let m1 = cx_matmul(&mut g, wh, h)?;
                let mut y = cx_matmul(&mut g, m1, f)?;
                y = CxNode::new(
                    g.mul_scalar(y.re, probing.p_t_watt.sqrt()),
                    g.mul_scalar(y.im, probing.p_t_watt.sqrt()),
                );
                if cfg.measurement_noise && probing.noise_watt > 0.0 {
                    let draw = (epoch * n + i) as u64;
                    let mut rng = stream(cfg.seed, "bae-noise", draw);
                    let noise = {
                        let data: Vec<Complex64> = (0..arch.n_r * np)
                            .map(|_| {
                                Complex64::new(
                                    comp_std * rng.sample::<f64, _>(StandardNormal),
                                    comp_std * rng.sample::<f64, _>(StandardNormal),
                                )
                            })
                            .collect();
                        CMat::from_vec(arch.n_r, np, data).expect("dims agree")
                    };
                    let n_leaf = cmat_leaf(&mut g, &noise);
                    let wn = cx_matmul(&mut g, wh, n_leaf)?;
                    y = crate::numerics::complex::cx_add(&mut g, y, wn)?;
                }
                let pow = cx_modsq(&mut g, y)?;
                let masked = g.mul(pow, eye_id)?;
                let z_col = g.matmul(masked, ones_id)?;
                let z = g.reshape(z_col, vec![1, np])?;

                let (v_r, v_t) = model.synth_graph(&mut g, &ids, z)?;
                let vrh = cx_hermitian(&mut g, v_r)?;
                let u = cx_matmul(&mut g, vrh, h)?;
                let wout = cx_matmul(&mut g, u, v_t)?;
                let gain_mat = cx_modsq(&mut g, wout)?;
                let gain = g.sum(gain_mat);
                gain_sum = Some(match gain_sum {
                    Some(acc) => g.add(acc, gain)?,
                    None => gain,
                });
            }
            let gain_sum = gain_sum.expect("non-empty chunk");
            let mean_gain = g.mul_scalar(gain_sum, 1.0 / chunk.len() as f64);
            let loss = g.mul_scalar(mean_gain, -1.0);

            let loss_v = g.value(loss).item();
            if !loss_v.is_finite() {
                return Err(Error::Divergence(format!("loss became {loss_v}")));
            }
            match guard_ref {
                None => guard_ref = Some(loss_v.abs().max(f64::MIN_POSITIVE)),
                Some(r) if loss_v.abs() > 1e3 * r => {
                    return Err(Error::Divergence(format!(
                        "gain magnitude {loss_v} exceeds 1000x initial {r}"
                    )));
                }
                _ => {}
            }
            epoch_gain += g.value(mean_gain).item() * chunk.len() as f64;

            let grads = g.backprop(loss)?;
            let mut grad_tensors: Vec<Tensor> = ids.iter().map(|id| grads.get(*id)).collect();
            if !cfg.train_probing {
                for gi in [P_WRE, P_WIM, P_FRE, P_FIM] {
                    grad_tensors[gi] = Tensor::zeros(grad_tensors[gi].shape());
                }
            }
            adam.step(model.params_mut(), &grad_tensors)?;
            model.project_probing();
        }
        report.epoch_gain.push(epoch_gain / n as f64);
    }
    Ok((model, report))
}

/// Mean SNR in dB of selected beams over a test set:
/// `(1/N) sum P_t |v_r^H H v_t|^2 / noise`.
pub fn avg_snr(
    channels: &[CMat],
    p_t: f64,
    noise_watt: f64,
    mut selector: impl FnMut(usize, &CMat) -> Result<(Vec<Complex64>, Vec<Complex64>)>,
) -> Result<f64> {
    if channels.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut acc = 0.0;
    for (i, h) in channels.iter().enumerate() {
        let (v_r, v_t) = selector(i, h)?;
        acc += p_t * beam_gain(h, &v_r, &v_t) / noise_watt;
    }
    Ok(10.0 * (acc / channels.len() as f64).log10())
}

/// `|v_r^H H v_t|^2`
pub fn beam_gain(h: &CMat, v_r: &[Complex64], v_t: &[Complex64]) -> f64 {
    let hv = h.matvec(v_t).expect("beam lengths match channel");
    vdot(v_r, &hv).norm_sqr()
}

/// Unconstrained upper bound: dominant left/right singular vectors via power
/// iteration on `H H^H`.
pub fn baseline_mrt_mrc(h: &CMat) -> Result<(Vec<Complex64>, Vec<Complex64>)> {
    if h.frob_norm() == 0.0 {
        return Err(Error::InvalidArgument("mrt of zero channel".into()));
    }
    let g = h.matmul(&h.hermitian())?;
    let n = g.rows();
    // start from the largest-norm column of G; nonzero for nonzero H
    let mut best = (0usize, -1.0f64);
    for j in 0..n {
        let norm: f64 = (0..n).map(|i| g.get(i, j).norm_sqr()).sum();
        if norm > best.1 {
            best = (j, norm);
        }
    }
    let mut v: Vec<Complex64> = (0..n).map(|i| g.get(i, best.0)).collect();
    let norm = vec_norm(&v);
    for x in v.iter_mut() {
        *x /= norm;
    }
    for _ in 0..300 {
        let next = g.matvec(&v)?;
        let norm = vec_norm(&next);
        if norm == 0.0 {
            break;
        }
        v = next.into_iter().map(|x| x / norm).collect();
    }
    let v_r = v;
    let mut v_t = h.hermitian().matvec(&v_r)?;
    let norm = vec_norm(&v_t);
    for x in v_t.iter_mut() {
        *x /= norm;
    }
    Ok((v_r, v_t))
}

/// Noiseless codebook search: the best pair by `|v_r^H H v_t|^2`.
pub fn baseline_genie_dft(
    h: &CMat,
    bs_cb: &Codebook,
    ue_cb: &Codebook,
) -> Result<(Vec<Complex64>, Vec<Complex64>)> {
    if bs_cb.is_empty() || ue_cb.is_empty() {
        return Err(Error::InvalidArgument("empty codebook".into()));
    }
    let mut best: Option<(f64, usize, usize)> = None;
    for (bi, v_t) in bs_cb.beams.iter().enumerate() {
        let hv = h.matvec(v_t)?;
        for (ui, v_r) in ue_cb.beams.iter().enumerate() {
            let gain = vdot(v_r, &hv).norm_sqr();
            if best.map(|(g0, _, _)| gain > g0).unwrap_or(true) {
                best = Some((gain, bi, ui));
            }
        }
    }
    let (_, bi, ui) = best.expect("codebooks non-empty");
    Ok((ue_cb.beams[ui].clone(), bs_cb.beams[bi].clone()))
}

/// Noisy exhaustive sweep: one measurement per pair, highest received power
/// wins. With zero noise this reduces to the genie selection.
pub fn baseline_exhaustive(
    h: &CMat,
    bs_cb: &Codebook,
    ue_cb: &Codebook,
    p_t: f64,
    noise_watt: f64,
    seed: u64,
) -> Result<(Vec<Complex64>, Vec<Complex64>)> {
    if bs_cb.is_empty() || ue_cb.is_empty() {
        return Err(Error::InvalidArgument("empty codebook".into()));
    }
    let comp_std = (noise_watt / 2.0).sqrt();
    let mut best: Option<(f64, usize, usize)> = None;
    let mut pair = 0u64;
    for (bi, v_t) in bs_cb.beams.iter().enumerate() {
        let hv = h.matvec(v_t)?;
        for (ui, v_r) in ue_cb.beams.iter().enumerate() {
            let mut y = vdot(v_r, &hv) * p_t.sqrt();
            if noise_watt > 0.0 {
                let mut rng = stream(seed, "exhaustive-noise", pair);
                let n_vec: Vec<Complex64> = (0..h.rows())
                    .map(|_| {
                        Complex64::new(
                            comp_std * rng.sample::<f64, _>(StandardNormal),
                            comp_std * rng.sample::<f64, _>(StandardNormal),
                        )
                    })
                    .collect();
                y += vdot(v_r, &n_vec);
            }
            pair += 1;
            let power = y.norm_sqr();
            if best.map(|(p0, _, _)| power > p0).unwrap_or(true) {
                best = Some((power, bi, ui));
            }
        }
    }
    let (_, bi, ui) = best.expect("codebooks non-empty");
    Ok((ue_cb.beams[ui].clone(), bs_cb.beams[bi].clone()))
}

/// BS sweeps its codebook; the UE answers each beam with equal-gain
/// combining (unit-modulus weights phase-matched to `H v_t`).
pub fn baseline_dft_egc(h: &CMat, bs_cb: &Codebook) -> Result<(Vec<Complex64>, Vec<Complex64>)> {
    if bs_cb.is_empty() {
        return Err(Error::InvalidArgument("empty codebook".into()));
    }
    let n_r = h.rows();
    let scale = 1.0 / (n_r as f64).sqrt();
    let mut best: Option<(f64, Vec<Complex64>, usize)> = None;
    for (bi, v_t) in bs_cb.beams.iter().enumerate() {
        let hv = h.matvec(v_t)?;
        let v_r: Vec<Complex64> = hv
            .iter()
            .map(|&x| {
                if x.norm() == 0.0 {
                    Complex64::new(scale, 0.0)
                } else {
                    x / x.norm() * scale
                }
            })
            .collect();
        let gain = vdot(&v_r, &hv).norm_sqr();
        if best.as_ref().map(|(g0, _, _)| gain > *g0).unwrap_or(true) {
            best = Some((gain, v_r, bi));
        }
    }
    let (_, v_r, bi) = best.expect("codebook non-empty");
    Ok((v_r, bs_cb.beams[bi].clone()))
}

const MAGIC: &[u8; 4] = b"CBAE";
const VERSION: u32 = 1;

pub fn save_bae(model: &BaeModel, path: &Path) -> Result<()> {
    let mut w = ByteWriter::new();
    let arch = model.arch();
    w.put_u32(arch.n_r as u32);
    w.put_u32(arch.n_t as u32);
    w.put_u32(arch.n_probe as u32);
    w.put_u32(arch.hidden as u32);
    w.put_u32(model.params().len() as u32);
    for p in model.params() {
        w.put_tensor(p);
    }
    write_checkpoint(path, MAGIC, VERSION, &w.into_bytes())
}

pub fn load_bae(path: &Path) -> Result<BaeModel> {
    let payload = read_checkpoint(path, MAGIC, VERSION)?;
    let mut r = ByteReader::new(&payload);
    let arch = BaeArch {
        n_r: r.get_u32()? as usize,
        n_t: r.get_u32()? as usize,
        n_probe: r.get_u32()? as usize,
        hidden: r.get_u32()? as usize,
    };
    let n = r.get_u32()? as usize;
    if n != N_PARAMS {
        return Err(Error::Format(format!("bae wants {N_PARAMS} tensors, got {n}")));
    }
    let mut params = Vec::with_capacity(n);
    for _ in 0..n {
        params.push(r.get_tensor()?);
    }
    if !r.done() {
        return Err(Error::Format("trailing bytes in checkpoint".into()));
    }
    Ok(BaeModel { arch, params })
}

#[cfg(test)]
mod tests;
