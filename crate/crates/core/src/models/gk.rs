//! Goalkeeper synthesis: a team possession classifier over outfield
//! players feeding a goalkeeper trajectory regressor, used to complete
//! rosters when goalkeepers are not tracked.

use ndarray::{Array2, Array3};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::nn::{BiLstm, Fwd, Init, Linear};
use crate::autodiff::{ParamStore, Scalar, Tape, Var};
use crate::encoders::{PpiEncoder, SetEncoderConfig};
use crate::error::{Error, Result};
use crate::types::Window;

use super::{denormalize_positions, ModelConfig, WindowBatch};

/// Team possession classifier + goalkeeper trajectory regressor.
pub struct GkModel {
    context: PpiEncoder,
    tpc_core: BiLstm,
    tpc_fc: Linear,
    gtr_core: BiLstm,
    gtr_fc: Linear,
}

/// Tape-level outputs: two-way team probabilities and two goalkeeper
/// positions per frame.
pub struct GkForward {
    /// `[B, T, 2]` rows on the simplex.
    pub team_probs: Var,
    /// `[B, T, 2]` pre-softmax scores.
    pub team_scores: Var,
    /// `[B, T, 4]` goalkeeper coordinates `(x1, y1, x2, y2)`.
    pub positions: Var,
}

/// Dense single-window outputs.
pub struct GkOutput {
    /// `[T, 2]` team possession probabilities.
    pub team_probs: Array2<f64>,
    /// `[T, 2, 2]` one `(x, y)` per team.
    pub gk_positions: Array3<f64>,
}

impl GkModel {
    pub fn new<F: Scalar>(init: &mut Init<F>, config: &ModelConfig) -> Self {
        let d = config.d_btr;
        let enc_cfg = SetEncoderConfig::new(d, config.heads);
        let context = PpiEncoder::new(init, "gk.ctx", 6, enc_cfg, false);
        let tpc_core = BiLstm::new(
            init,
            "gk.tpc",
            d,
            config.lstm_hidden,
            config.lstm_layers,
            config.dropout,
        );
        let tpc_fc = Linear::new(init, "gk.tpc_fc", 2 * config.lstm_hidden, 2);
        let gtr_core = BiLstm::new(
            init,
            "gk.gtr",
            d + 2,
            config.lstm_hidden,
            config.lstm_layers,
            config.dropout,
        );
        let gtr_fc = Linear::new(init, "gk.gtr_fc", 2 * config.lstm_hidden, 4);
        GkModel {
            context,
            tpc_core,
            tpc_fc,
            gtr_core,
            gtr_fc,
        }
    }

    /// `batch` must contain outfield players only.
    pub fn forward<F: Scalar>(&self, f: &Fwd<F>, batch: &WindowBatch<F>) -> Result<GkForward> {
        let tape = f.tape;
        let features = tape.constant(batch.features.clone());
        let n = batch.n;
        let outfield = tape.slice_ax(features, 2, 0, 2 * n);
        let ctx = self.context.encode(f, outfield, n)?.fused; // [B, T, d]

        let run = |core: &BiLstm, x: Var| -> Var {
            let shape = tape.shape(x);
            let (b, t, d) = (shape[0], shape[1], shape[2]);
            let steps: Vec<Var> = (0..t)
                .map(|ti| tape.reshape(tape.slice_ax(x, 1, ti, ti + 1), &[b, d]))
                .collect();
            tape.stack(1, &core.apply(f, &steps))
        };

        let tpc_states = run(&self.tpc_core, ctx);
        let team_scores = self.tpc_fc.apply(f, tpc_states);
        let team_probs = tape.softmax_last(team_scores);

        let gtr_in = tape.concat(2, &[ctx, team_probs]);
        let gtr_states = run(&self.gtr_core, gtr_in);
        let raw = self.gtr_fc.apply(f, gtr_states); // [B, T, 4]
        let shape = tape.shape(raw);
        let (b, t) = (shape[0], shape[1]);
        let pairs = tape.reshape(raw, &[b, t, 2, 2]);
        let meters = denormalize_positions(tape, pairs, batch.half_pitch);
        let positions = tape.reshape(meters, &[b, t, 4]);
        Ok(GkForward {
            team_probs,
            team_scores,
            positions,
        })
    }
}

/// A goalkeeper model together with its parameters.
pub struct GkBundle<F: Scalar> {
    pub config: ModelConfig,
    pub store: ParamStore<F>,
    pub model: GkModel,
}

/// Build a goalkeeper model with seeded initialization.
pub fn build_gk_model<F: Scalar>(config: ModelConfig, seed: u64) -> Result<GkBundle<F>> {
    config.validate()?;
    let mut store = ParamStore::<F>::new();
    let mut rng: ChaCha8Rng = rand::SeedableRng::seed_from_u64(seed);
    let mut init = Init {
        store: &mut store,
        rng: &mut rng,
    };
    let model = GkModel::new(&mut init, &config);
    Ok(GkBundle {
        config,
        store,
        model,
    })
}

impl<F: Scalar> GkBundle<F> {
    /// Dense inference on one goalkeeper-free window. `goalkeepers` lists
    /// the ids that must NOT be present in the roster.
    pub fn infer(&self, window: &Window, goalkeepers: &[String]) -> Result<GkOutput> {
        for gk in goalkeepers {
            if window.agents.class_of(gk).is_some() {
                return Err(Error::Config(format!(
                    "roster still contains goalkeeper {gk}"
                )));
            }
        }
        let tape = Tape::<F>::new();
        let f = Fwd::eval(&tape, &self.store);
        let batch = WindowBatch::<F>::batch(&[window])?;
        let out = self.model.forward(&f, &batch)?;
        let t = batch.frames();
        let probs_val = tape.value(out.team_probs);
        let pos_val = tape.value(out.positions);
        let mut team_probs = Array2::<f64>::zeros((t, 2));
        let mut gk_positions = Array3::<f64>::zeros((t, 2, 2));
        for ti in 0..t {
            team_probs[[ti, 0]] = probs_val[[0, ti, 0]].as_f64();
            team_probs[[ti, 1]] = probs_val[[0, ti, 1]].as_f64();
            for k in 0..2 {
                gk_positions[[ti, k, 0]] = pos_val[[0, ti, 2 * k]].as_f64();
                gk_positions[[ti, k, 1]] = pos_val[[0, ti, 2 * k + 1]].as_f64();
            }
        }
        Ok(GkOutput {
            team_probs,
            gk_positions,
        })
    }
}
