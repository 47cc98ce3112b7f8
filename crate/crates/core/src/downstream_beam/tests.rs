use super::*;
use crate::augment::{ChannelDataset, DatasetMeta, Provenance, Record};
use crate::channelsim::{
    channel_at, sample_position, steering_vector, to_beamspace, ChannelMatrix, Path, PathSet,
    SceneConfig,
};
use crate::rng::stream;

fn upa_scene() -> SceneConfig {
    SceneConfig {
        tx_geometry: ArrayGeometry::Upa(2, 2),
        rx_geometry: ArrayGeometry::Ula(2),
        k_rician: 8.0,
        ..SceneConfig::default()
    }
}

fn random_cmat(rows: usize, cols: usize, rng: &mut impl Rng) -> CMat {
    let data = (0..rows * cols)
        .map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
        .collect();
    CMat::from_vec(rows, cols, data).unwrap()
}

fn random_unit_vec(n: usize, rng: &mut impl Rng) -> Vec<Complex64> {
    let mut v: Vec<Complex64> = (0..n)
        .map(|_| {
            Complex64::new(
                rng.sample::<f64, _>(StandardNormal),
                rng.sample::<f64, _>(StandardNormal),
            )
        })
        .collect();
    let norm = vec_norm(&v);
    for x in v.iter_mut() {
        *x /= norm;
    }
    v
}

fn scene_dataset(cfg: &SceneConfig, n: usize, seed: u64) -> ChannelDataset {
    let mut rng = stream(seed, "beam-pos", 0);
    let records = (0..n)
        .map(|_| {
            let position = sample_position(cfg, &mut rng);
            Record {
                position,
                channel: channel_at(&position, cfg, NormMode::Frobenius).unwrap(),
                provenance: Provenance::Reference,
            }
        })
        .collect();
    ChannelDataset::new(
        records,
        DatasetMeta {
            scene_hash: cfg.content_hash(),
            norm_mode: NormMode::Frobenius,
            creation_seed: seed,
            provenance: Provenance::Reference,
        },
    )
    .unwrap()
}

#[test]
fn codebook_sizes_and_norms() {
    let bs = dft_codebook(ArrayGeometry::Upa(4, 4), 2);
    assert_eq!(bs.len(), 64);
    let ue = dft_codebook(ArrayGeometry::Upa(2, 2), 2);
    assert_eq!(ue.len(), 16);
    for beam in bs.beams.iter().chain(&ue.beams) {
        assert!((vec_norm(beam) - 1.0).abs() < 1e-12);
        // unit-modulus entries scaled by 1/sqrt(n)
        let want = 1.0 / (beam.len() as f64).sqrt();
        for e in beam {
            assert!((e.norm() - want).abs() < 1e-12);
        }
    }
}

#[test]
fn probing_matched_beam_recovers_gain() {
    // single path channel, matched single-probe pair, no noise
    let a_r = steering_vector(0.3, 0.0, ArrayGeometry::Ula(4));
    let a_t = steering_vector(-0.5, 0.0, ArrayGeometry::Ula(8));
    let h = CMat::outer(Complex64::new(2.0, 0.0), &a_r, &a_t);
    let w = CMat::from_vec(4, 1, a_r.clone()).unwrap();
    let f = CMat::from_vec(8, 1, a_t.clone()).unwrap();
    let p_t = 2.5;
    let z = probe_measurements(&h, &w, &f, p_t, 0.0, 1).unwrap();
    // v_r^H H v_t = 2 for matched unit steering vectors
    assert_eq!(z.len(), 1);
    assert!((z[0] - p_t * 4.0).abs() < 1e-10, "z = {}", z[0]);

    let zero = CMat::zeros(4, 8);
    let z = probe_measurements(&zero, &w, &f, p_t, 0.0, 1).unwrap();
    assert!(z[0] == 0.0);
}

/// Monte-Carlo oracle: with a zero channel, E[z_k] equals the noise power
/// because sensing columns are unit-norm.
#[test]
fn probing_noise_energy_is_sigma_squared() {
    let h = CMat::zeros(2, 4);
    let w = {
        let beams = dft_codebook(ArrayGeometry::Ula(2), 1);
        let mut m = CMat::zeros(2, 2);
        for (j, b) in beams.beams.iter().enumerate() {
            for (i, &v) in b.iter().enumerate() {
                m.set(i, j, v);
            }
        }
        m
    };
    let f = {
        let mut m = CMat::zeros(4, 2);
        let beams = dft_codebook(ArrayGeometry::Ula(4), 1);
        for j in 0..2 {
            for i in 0..4 {
                m.set(i, j, beams.beams[j][i]);
            }
        }
        m
    };
    let sigma2 = 0.35;
    let draws = 10_000;
    let mut acc = 0.0;
    for i in 0..draws {
        let z = probe_measurements(&h, &w, &f, 1.0, sigma2, i).unwrap();
        acc += (z[0] + z[1]) / 2.0;
    }
    let mean = acc / draws as f64;
    assert!(
        (mean - sigma2).abs() / sigma2 < 0.05,
        "E[z] = {mean}, want {sigma2}"
    );
}

#[test]
fn synthesized_beams_are_unit_norm_and_deterministic() {
    let arch = BaeArch {
        n_r: 2,
        n_t: 4,
        n_probe: 4,
        hidden: 16,
    };
    let model = BaeModel::init(arch, 3);
    let z = vec![0.5, 1.25, 0.01, 3.0];
    let (v_r, v_t) = synthesize_beams(&z, &model).unwrap();
    assert!((vec_norm(&v_r) - 1.0).abs() < 1e-12);
    assert!((vec_norm(&v_t) - 1.0).abs() < 1e-12);
    let (v_r2, v_t2) = synthesize_beams(&z, &model).unwrap();
    assert_eq!(v_r, v_r2);
    assert_eq!(v_t, v_t2);

    assert!(synthesize_beams(&[1.0], &model).is_err());
}

#[test]
fn probing_matrices_stay_element_normalized() {
    let arch = BaeArch {
        n_r: 2,
        n_t: 4,
        n_probe: 3,
        hidden: 8,
    };
    let model = BaeModel::init(arch, 5);
    for (m, n) in [(model.w_mat(), 2usize), (model.f_mat(), 4usize)] {
        let want = 1.0 / (n as f64).sqrt();
        for v in m.data() {
            assert!((v.norm() - want).abs() < 1e-12);
        }
    }
}

#[test]
fn avg_snr_linearity_in_power() {
    let mut rng = stream(7, "snr-lin", 0);
    let channels: Vec<CMat> = (0..5).map(|_| random_cmat(2, 4, &mut rng)).collect();
    let select =
        |_: usize, h: &CMat| baseline_mrt_mrc(h);
    let a = avg_snr(&channels, 1.0, 1e-9, select).unwrap();
    let b = avg_snr(&channels, 2.0, 1e-9, select).unwrap();
    assert!(
        (b - a - 10.0 * 2f64.log10()).abs() < 1e-12,
        "doubling power moved {a} -> {b}"
    );

    // single-channel set equals the single-sample snr
    let one = avg_snr(&channels[..1], 1.0, 1e-9, select).unwrap();
    let (v_r, v_t) = baseline_mrt_mrc(&channels[0]).unwrap();
    let direct = 10.0 * (beam_gain(&channels[0], &v_r, &v_t) / 1e-9).log10();
    assert!((one - direct).abs() < 1e-12);

    assert!(avg_snr(&[], 1.0, 1e-9, select).is_err());
}

#[test]
fn mrt_mrc_on_rank_one_channel() {
    let a = steering_vector(0.4, 0.0, ArrayGeometry::Ula(4));
    let b = steering_vector(-0.7, 0.0, ArrayGeometry::Ula(8));
    let g = Complex64::new(1.2, -0.8);
    let h = CMat::outer(g, &a, &b);
    let (v_r, v_t) = baseline_mrt_mrc(&h).unwrap();
    // beams align with the path (up to phase)
    assert!((vdot(&v_r, &a).norm() - 1.0).abs() < 1e-8);
    assert!((vdot(&v_t, &b).norm() - 1.0).abs() < 1e-8);
    // gain equals |g|^2 for unit-norm steering
    assert!((beam_gain(&h, &v_r, &v_t) - g.norm_sqr()).abs() < 1e-8);

    // global phase rotation leaves the gain unchanged
    let h2 = h.scale(Complex64::from_polar(1.0, 2.2));
    let (v_r2, v_t2) = baseline_mrt_mrc(&h2).unwrap();
    assert!(
        (beam_gain(&h2, &v_r2, &v_t2) - beam_gain(&h, &v_r, &v_t)).abs() < 1e-8
    );

    assert!(baseline_mrt_mrc(&CMat::zeros(2, 2)).is_err());
}

/// Independent oracle for the MRT/MRC bound: alternating maximization from
/// random starts (v_r closed-form given v_t and vice versa), plus a pure
/// random search that must never beat it.
#[test]
fn mrt_mrc_matches_alternating_maximization() {
    let mut rng = stream(9, "mrt-oracle", 0);
    for trial in 0..20 {
        let h = random_cmat(4, 16, &mut rng);
        let (v_r, v_t) = baseline_mrt_mrc(&h).unwrap();
        let mrt_gain = beam_gain(&h, &v_r, &v_t);

        let mut oracle: f64 = 0.0;
        for start in 0..20 {
            let mut vt = random_unit_vec(16, &mut stream(9, "alt-start", trial * 100 + start));
            let mut vr = vec![Complex64::new(0.0, 0.0); 4];
            for _ in 0..30 {
                let hv = h.matvec(&vt).unwrap();
                let n = vec_norm(&hv);
                vr = hv.into_iter().map(|x| x / n).collect();
                let hh = h.hermitian().matvec(&vr).unwrap();
                let n = vec_norm(&hh);
                vt = hh.into_iter().map(|x| x / n).collect();
            }
            oracle = oracle.max(beam_gain(&h, &vr, &vt));
        }
        let db = |x: f64| 10.0 * x.log10();
        assert!(
            db(mrt_gain) >= db(oracle) - 1e-6,
            "oracle beat mrt: {} vs {}",
            db(oracle),
            db(mrt_gain)
        );
        assert!(
            db(mrt_gain) - db(oracle) < 0.1,
            "mrt {} dB vs oracle {} dB",
            db(mrt_gain),
            db(oracle)
        );

        // 10^4 random unit beam pairs never exceed the bound
        let mut best_random: f64 = 0.0;
        for k in 0..10_000u64 {
            let mut r2 = stream(9, "rand-search", trial as u64 * 10_000 + k);
            let vr = random_unit_vec(4, &mut r2);
            let vt = random_unit_vec(16, &mut r2);
            best_random = best_random.max(beam_gain(&h, &vr, &vt));
        }
        assert!(best_random <= mrt_gain * (1.0 + 1e-9));
    }
}

#[test]
fn mrt_dominates_every_codebook_pair() {
    let mut rng = stream(11, "mrt-dom", 0);
    let bs_cb = dft_codebook(ArrayGeometry::Upa(2, 2), 2);
    let ue_cb = dft_codebook(ArrayGeometry::Ula(2), 2);
    for _ in 0..100 {
        let h = random_cmat(2, 4, &mut rng);
        let (v_r, v_t) = baseline_mrt_mrc(&h).unwrap();
        let bound = beam_gain(&h, &v_r, &v_t);
        for vt in &bs_cb.beams {
            for vr in &ue_cb.beams {
                assert!(beam_gain(&h, vr, vt) <= bound * (1.0 + 1e-9));
            }
        }
    }
}

#[test]
fn exhaustive_with_zero_noise_equals_genie() {
    let mut rng = stream(13, "exh-genie", 0);
    let bs_cb = dft_codebook(ArrayGeometry::Upa(2, 2), 2);
    let ue_cb = dft_codebook(ArrayGeometry::Ula(2), 2);
    for i in 0..50 {
        let h = random_cmat(2, 4, &mut rng);
        let a = baseline_exhaustive(&h, &bs_cb, &ue_cb, 1.0, 0.0, i).unwrap();
        let b = baseline_genie_dft(&h, &bs_cb, &ue_cb).unwrap();
        assert_eq!(a, b);
    }
}

/// Double-loop oracle for the genie selection.
#[test]
fn genie_matches_brute_force_scan() {
    let mut rng = stream(15, "genie-oracle", 0);
    let bs_cb = dft_codebook(ArrayGeometry::Upa(4, 4), 2);
    let ue_cb = dft_codebook(ArrayGeometry::Upa(2, 2), 2);
    assert_eq!(bs_cb.len() * ue_cb.len(), 64 * 16);
    for _ in 0..5 {
        let h = random_cmat(4, 16, &mut rng);
        let (v_r, v_t) = baseline_genie_dft(&h, &bs_cb, &ue_cb).unwrap();
        let got = beam_gain(&h, &v_r, &v_t);
        let mut want: f64 = 0.0;
        for vr in &ue_cb.beams {
            for vt in &bs_cb.beams {
                want = want.max(beam_gain(&h, vr, vt));
            }
        }
        assert!((got - want).abs() < 1e-12);
    }
}

#[test]
fn egc_beats_genie_on_every_channel() {
    let mut rng = stream(17, "egc", 0);
    let bs_cb = dft_codebook(ArrayGeometry::Upa(2, 2), 2);
    let ue_cb = dft_codebook(ArrayGeometry::Ula(2), 2);
    for _ in 0..100 {
        let h = random_cmat(2, 4, &mut rng);
        let (vr_e, vt_e) = baseline_dft_egc(&h, &bs_cb).unwrap();
        let (vr_g, vt_g) = baseline_genie_dft(&h, &bs_cb, &ue_cb).unwrap();
        let egc = beam_gain(&h, &vr_e, &vt_e);
        let genie = beam_gain(&h, &vr_g, &vt_g);
        assert!(egc >= genie * (1.0 - 1e-12), "egc {egc} < genie {genie}");
    }
}

/// Full ordering on scene channels: MRT/MRC >= DFT+EGC >= Genie-DFT, and
/// the noisy exhaustive pick is no better than genie in expectation.
#[test]
fn baseline_ordering_holds() {
    let cfg = upa_scene();
    let ds = scene_dataset(&cfg, 60, 21);
    let channels: Vec<CMat> = ds
        .records
        .iter()
        .map(|r| from_beamspace(&r.channel, cfg.rx_geometry, cfg.tx_geometry).0)
        .collect();
    let bs_cb = dft_codebook(cfg.tx_geometry, 2);
    let ue_cb = dft_codebook(cfg.rx_geometry, 2);

    let (p_t, noise) = (1.0, 1e-3);
    let snr_mrt = avg_snr(&channels, p_t, noise, |_, h| baseline_mrt_mrc(h)).unwrap();
    let snr_egc = avg_snr(&channels, p_t, noise, |_, h| baseline_dft_egc(h, &bs_cb)).unwrap();
    let snr_genie = avg_snr(&channels, p_t, noise, |_, h| {
        baseline_genie_dft(h, &bs_cb, &ue_cb)
    })
    .unwrap();
    assert!(snr_mrt >= snr_egc - 1e-9);
    assert!(snr_egc >= snr_genie - 1e-9);

    // exhaustive under strong noise, averaged over draws
    let mut acc = 0.0;
    let draws = 20;
    for d in 0..draws {
        let snr = avg_snr(&channels, p_t, noise, |i, h| {
            baseline_exhaustive(h, &bs_cb, &ue_cb, p_t, 0.5, d * 1000 + i as u64)
        })
        .unwrap();
        acc += 10f64.powf(snr / 10.0);
    }
    let snr_exh = 10.0 * (acc / draws as f64).log10();
    assert!(
        snr_exh <= snr_genie + 1e-9,
        "noisy exhaustive {snr_exh} beat genie {snr_genie}"
    );
}

fn los_only_dataset(cfg: &SceneConfig, n: usize, seed: u64) -> ChannelDataset {
    let mut rng = stream(seed, "los-pos", 0);
    let records = (0..n)
        .map(|_| {
            let position = sample_position(cfg, &mut rng);
            let ps = crate::channelsim::sample_paths(&position, cfg).unwrap();
            let los = PathSet {
                paths: vec![*ps.los()],
                los_index: 0,
            };
            let h = crate::channelsim::assemble_channel(&los, cfg);
            let hv = to_beamspace(&h, cfg.rx_geometry, cfg.tx_geometry);
            Record {
                position,
                channel: crate::channelsim::normalize(&hv, NormMode::Frobenius).unwrap(),
                provenance: Provenance::Reference,
            }
        })
        .collect();
    ChannelDataset::new(
        records,
        DatasetMeta {
            scene_hash: cfg.content_hash(),
            norm_mode: NormMode::Frobenius,
            creation_seed: seed,
            provenance: Provenance::Reference,
        },
    )
    .unwrap()
}

/// End-to-end sanity on an easy single-path scene: the trained pipeline
/// reaches within 3 dB of the MRT/MRC bound, training gain climbs, and runs
/// are reproducible.
#[test]
fn bae_trains_on_single_los_scene() {
    let cfg = upa_scene();
    let train = los_only_dataset(&cfg, 150, 31);
    let test = los_only_dataset(&cfg, 40, 32);
    let probing = ProbingConfig {
        n_probe: 4,
        p_t_watt: 1.0,
        noise_watt: 1e-9,
        seed: 5,
    };
    let tcfg = BaeTrainConfig {
        epochs: 120,
        batch: 16,
        lr: 2e-3,
        hidden: 48,
        seed: 33,
        rx_geometry: cfg.rx_geometry,
        tx_geometry: cfg.tx_geometry,
        train_probing: true,
        measurement_noise: false,
    };
    let (model, report) = train_bae(&train, &probing, &tcfg).unwrap();

    // objective non-decreasing under a 20-epoch moving average
    let ma: Vec<f64> = report
        .epoch_gain
        .windows(20)
        .map(|w| w.iter().sum::<f64>() / 20.0)
        .collect();
    for w in ma.windows(2) {
        assert!(w[1] >= w[0] * 0.999, "gain MA fell: {} -> {}", w[0], w[1]);
    }
    assert!(ma.last().unwrap() > ma.first().unwrap());

    let channels: Vec<CMat> = test
        .records
        .iter()
        .map(|r| from_beamspace(&r.channel, cfg.rx_geometry, cfg.tx_geometry).0)
        .collect();
    let snr_bae = avg_snr(&channels, probing.p_t_watt, probing.noise_watt, |i, h| {
        bae_select(h, &model, &probing, i as u64)
    })
    .unwrap();
    let snr_mrt = avg_snr(&channels, probing.p_t_watt, probing.noise_watt, |_, h| {
        baseline_mrt_mrc(h)
    })
    .unwrap();
    assert!(
        snr_mrt - snr_bae < 3.0,
        "bae {snr_bae} dB vs mrt bound {snr_mrt} dB"
    );

    // probing entries still element-normalized after training
    for (m, n) in [(model.w_mat(), cfg.n_r()), (model.f_mat(), cfg.n_t())] {
        let want = 1.0 / (n as f64).sqrt();
        for v in m.data() {
            assert!((v.norm() - want).abs() < 1e-9);
        }
    }

    // reproducibility
    let (model2, report2) = train_bae(&train, &probing, &tcfg).unwrap();
    assert_eq!(report.epoch_gain, report2.epoch_gain);
    for (a, b) in model.params().iter().zip(model2.params()) {
        assert_eq!(a, b);
    }
}

/// Ablation: learned probing beats frozen random probing on held-out data.
#[test]
fn learned_probing_beats_random_probing() {
    let cfg = upa_scene();
    let train = scene_dataset(&cfg, 200, 41);
    let test = scene_dataset(&cfg, 60, 42);
    let probing = ProbingConfig {
        n_probe: 3,
        p_t_watt: 1.0,
        noise_watt: 1e-9,
        seed: 5,
    };
    let base = BaeTrainConfig {
        epochs: 100,
        batch: 16,
        lr: 2e-3,
        hidden: 48,
        seed: 43,
        rx_geometry: cfg.rx_geometry,
        tx_geometry: cfg.tx_geometry,
        train_probing: true,
        measurement_noise: false,
    };
    let (learned, _) = train_bae(&train, &probing, &base).unwrap();
    let frozen_cfg = BaeTrainConfig {
        train_probing: false,
        ..base
    };
    let (frozen, _) = train_bae(&train, &probing, &frozen_cfg).unwrap();

    let channels: Vec<CMat> = test
        .records
        .iter()
        .map(|r| from_beamspace(&r.channel, cfg.rx_geometry, cfg.tx_geometry).0)
        .collect();
    let snr = |m: &BaeModel| {
        avg_snr(&channels, probing.p_t_watt, probing.noise_watt, |i, h| {
            bae_select(h, m, &probing, i as u64)
        })
        .unwrap()
    };
    let s_learned = snr(&learned);
    let s_frozen = snr(&frozen);
    assert!(
        s_learned > s_frozen,
        "learned {s_learned} dB vs frozen {s_frozen} dB"
    );
}

#[test]
fn bae_checkpoint_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bae.ckpt");
    let model = BaeModel::init(
        BaeArch {
            n_r: 2,
            n_t: 4,
            n_probe: 3,
            hidden: 8,
        },
        51,
    );
    save_bae(&model, &path).unwrap();
    let back = load_bae(&path).unwrap();
    assert_eq!(back.arch(), model.arch());
    for (a, b) in back.params().iter().zip(model.params()) {
        assert_eq!(a, b);
    }
}
