use chanforge::augment::*;
use chanforge::channelsim::*;
use chanforge::diffusion::*;
use chanforge::evaluation::*;
use chanforge::numerics::{randn, Tensor};
use chanforge::rng::stream;
use std::time::Instant;

fn gen_ds(cfg: &SceneConfig, n: usize, label: &str, seed: u64) -> ChannelDataset {
    let mut rng = stream(seed, label, 0);
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

fn peak_match(est_rows: &[Vec<f64>], refs: &ChannelDataset) -> f64 {
    let (n_r, n_t) = (refs.n_r(), refs.n_t());
    let mut hits = 0usize;
    for (row, rec) in est_rows.iter().zip(&refs.records) {
        let est = BeamspaceChannel(CMat::from_real_vec(n_r, n_t, row).unwrap());
        if peak_bs_index(&est).unwrap() == peak_bs_index(&rec.channel).unwrap() {
            hits += 1;
        }
    }
    hits as f64 / refs.len() as f64
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let n_train: usize = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(100);
    let epochs: usize = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(200);
    let lr: f64 = args.get(3).map(|s| s.parse().unwrap()).unwrap_or(2e-3);
    let eval_train: bool = args.get(4).map(|s| s == "train").unwrap_or(true);

    let scene = SceneConfig::default();
    let train = gen_ds(&scene, n_train, "train", 101);
    let test = if eval_train {
        ChannelDataset::new(train.records[..200.min(n_train)].to_vec(), train.meta).unwrap()
    } else {
        gen_ds(&scene, 200, "test", 202)
    };

    let sched = ScheduleSpec::default().build().unwrap();
    let tcfg = TrainConfig {
        epochs,
        batch: 32,
        lr,
        hidden_mult: 4,
        scene_radius: scene.radius_m,
        seed: 7,
    };
    let t0 = Instant::now();
    let (model, report) = train_cddim(&train, &sched, &tcfg).unwrap();
    println!(
        "n={} epochs={} lr={} in {:.0}s; loss {:.4} -> {:.4}",
        n_train,
        epochs,
        lr,
        t0.elapsed().as_secs_f64(),
        report.epoch_loss[0],
        report.epoch_loss.last().unwrap()
    );

    let d = 2 * scene.n_r() * scene.n_t();
    let n_eval = test.len();
    let positions = test.positions();
    let t_max = sched.t_max();

    // single-shot x0 estimate from pure noise at t = T
    let h_t = randn(&[n_eval, d], &mut stream(9, "probe-init", 0));
    let ts = vec![t_max; n_eval];
    let est = denoiser_forward_batch(&h_t, &positions, &ts, &model, t_max).unwrap();
    let (a, s) = (sched.alpha_bar(t_max).sqrt(), sched.sigma(t_max));
    let rows: Vec<Vec<f64>> = (0..n_eval)
        .map(|i| {
            (0..d)
                .map(|j| (h_t.data()[i * d + j] - s * est.data()[i * d + j]) / a)
                .collect()
        })
        .collect();
    println!("single-shot x0 from t=T: peak match {:.3}", peak_match(&rows, &test));

    // single-shot x0 from a mid-level forward point of the TRUE channel
    let t_mid = t_max / 2;
    let (a, s) = (sched.alpha_bar(t_mid).sqrt(), sched.sigma(t_mid));
    let noise = randn(&[n_eval, d], &mut stream(9, "probe-mid", 0));
    let mut hmid = Tensor::zeros(&[n_eval, d]);
    for (i, rec) in test.records.iter().enumerate() {
        let row = rec.channel.0.to_real_vec();
        for j in 0..d {
            hmid.data_mut()[i * d + j] = a * row[j] + s * noise.data()[i * d + j];
        }
    }
    let ts = vec![t_mid; n_eval];
    let est = denoiser_forward_batch(&hmid, &positions, &ts, &model, t_max).unwrap();
    let rows: Vec<Vec<f64>> = (0..n_eval)
        .map(|i| {
            (0..d)
                .map(|j| (hmid.data()[i * d + j] - s * est.data()[i * d + j]) / a)
                .collect()
        })
        .collect();
    println!("single-shot x0 from t=T/2 (true fwd): peak match {:.3}", peak_match(&rows, &test));

    // full DDIM descent
    let seeds: Vec<u64> = (0..n_eval as u64).map(|i| 100 + i).collect();
    let sampled = sample_batch(&positions, &model, &sched, &seeds);
    let rows: Vec<Vec<f64>> = sampled.iter().map(|c| c.0.to_real_vec()).collect();
    println!("full DDIM descent: peak match {:.3}", peak_match(&rows, &test));
}
