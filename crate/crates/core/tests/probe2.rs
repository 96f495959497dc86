use ballpath_core::autodiff::nn::Fwd;
use ballpath_core::autodiff::Tape;
use ballpath_core::losses::{self, LossWeights};
use ballpath_core::models::{build_model, ModelConfig, Variant, WindowBatch};
use ballpath_core::pipeline::make_windows;
use ballpath_core::sim::{generate_match, script_library};
use ballpath_core::types::Window;

#[test]
fn first_batch_grads() {
    let mut windows: Vec<Window> = Vec::new();
    let mut script = script_library()[5].clone();
    script.seed = 1001;
    let sim = generate_match(&script).unwrap();
    for (ep, (truth, labels)) in sim.episodes.iter().zip(sim.ball_truth.iter().zip(sim.labels.iter())) {
        windows.extend(make_windows(ep, truth, labels, &sim.agents, 100, 10).unwrap());
    }
    let mut config = ModelConfig::tiny(Variant::HLstm);
    config.d_g = 8;
    config.d_btr = 32;
    config.lstm_hidden = 32;
    config.lstm_layers = 1;
    config.heads = 2;
    config.dropout = 0.0;
    let bundle = build_model::<f32>(config, 42).unwrap();
    let refs: Vec<&Window> = windows.iter().take(16).collect();
    let batch = WindowBatch::<f32>::batch(&refs).unwrap();
    let tape = Tape::<f32>::new();
    let f = Fwd::train(&tape, &bundle.store, 7);
    let out = bundle.forward(&f, &batch, 7).unwrap();
    let truth = tape.constant(batch.ball_truth.clone());
    let mse = losses::mse_loss(&tape, out.pred, truth).unwrap();
    let real = losses::reality_loss(&tape, out.pred, &batch.player_positions).unwrap();
    let ce = losses::ce_from_scores(&tape, out.scores.unwrap(), &batch.labels).unwrap();
    println!("mse {} real {} ce {}", tape.scalar(mse), tape.scalar(real), tape.scalar(ce));
    let total = losses::total_loss(&tape, mse, real, ce, LossWeights::default());
    let grads = tape.backward(total);
    let named = tape.param_grads(&grads);
    for (name, g) in &named {
        let finite = g.iter().all(|v| v.is_finite());
        let max = g.iter().fold(0.0f32, |m, v| m.max(v.abs()));
        if !finite || max > 1e6 {
            println!("{name}: finite={finite} max={max:.3e}");
        }
    }
    println!("checked {} tensors", named.len());
}
