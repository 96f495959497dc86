use ballpath_core::models::{build_model, EmbeddingSet, ModelConfig, Variant};
use ballpath_core::pipeline::make_windows;
use ballpath_core::sim::{generate_match, script_library};
use ballpath_core::train::{train_model, TrainConfig};
use ballpath_core::types::Window;

fn training_windows(episode_count: usize, window_len: usize, stride: usize) -> Vec<Window> {
    let mut windows = Vec::new();
    let base = script_library();
    let mut k = 0usize;
    'outer: for round in 0..10 {
        for tpl in [&base[1], &base[5], &base[2]] {
            let mut script = tpl.clone();
            script.seed = 1000 + 37 * round as u64 + k as u64;
            script.name = format!("{}-{round}", script.name);
            if script.players_per_team > 4 {
                continue; // keep the probe small
            }
            let sim = generate_match(&script).unwrap();
            for (ep, (truth, labels)) in sim
                .episodes
                .iter()
                .zip(sim.ball_truth.iter().zip(sim.labels.iter()))
            {
                windows.extend(
                    make_windows(ep, truth, labels, &sim.agents, window_len, stride).unwrap(),
                );
            }
            k += 1;
            if k >= episode_count {
                break 'outer;
            }
        }
    }
    windows
}

#[test]
#[ignore]
fn overfit_probe() {
    let t0 = std::time::Instant::now();
    let windows = training_windows(10, 100, 10);
    println!("windows: {} (built in {:?})", windows.len(), t0.elapsed());

    let mut config = ModelConfig::tiny(Variant::HLstm);
    config.d_g = 8;
    config.d_btr = 32;
    config.lstm_hidden = 32;
    config.lstm_layers = 1;
    config.heads = 2;
    config.dropout = 0.0;
    config.embeddings = EmbeddingSet::default();
    let mut bundle = build_model::<f32>(config, 42).unwrap();

    let cfg = TrainConfig {
        learning_rate: 0.003,
        batch_size: 16,
        max_epochs: 30,
        patience: 1000,
        augment_flips: false,
        ..TrainConfig::default()
    };
    let t1 = std::time::Instant::now();
    train_model(&mut bundle, &windows, &[], &cfg, |log| {
        if log.epoch % 5 == 0 || log.epoch == cfg.max_epochs - 1 {
            println!(
                "epoch {:3} total {:9.4} mse {:9.4} real {:7.4} ce {:7.4}  ({:?})",
                log.epoch, log.train_total, log.train_mse, log.train_reality, log.train_ce,
                t1.elapsed()
            );
        }
    })
    .unwrap();
    let report = ballpath_core::train::evaluate_windows(&bundle, &windows).unwrap();
    println!(
        "train PE {:.3} RL {:.4} PPA {:.3} TPA {:.3} in {:?}",
        report.pe, report.rl, report.ppa, report.tpa, t1.elapsed()
    );
}
