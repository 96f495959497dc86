//! Generative recurrent baseline. A latent-variable recurrence generates
//! ball locations conditioned on a team-wise invariant context embedding
//! of the player trajectories: the forward recurrence consumes the
//! context, the (observed or generated) ball location and the latent
//! sample, while the backward recurrence consumes the context only.
//! Prior, encoder and decoder heads parameterize diagonal Gaussians; their
//! scale is floored at 1e-4.

use ndarray::{ArrayD, IxDyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::nn::{Fwd, Init, Linear};
use crate::autodiff::{init_uniform, Scalar, Tape, Var};
use crate::encoders::{PpiEncoder, SetEncoderConfig};
use crate::error::Result;

use super::{denormalize_positions, ForwardOut, ModelConfig, WindowBatch, KINEMATIC_SCALE};

/// Where latent samples come from during generation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleSource {
    /// Sample from the prior and feed generated locations back in.
    Prior,
    /// Sample from the encoder posterior (requires the true trajectory).
    Posterior,
}

const SIGMA_FLOOR: f64 = 1e-4;
const SIGMA_LOG_CEIL: f64 = 3.0;

struct LstmStep {
    wx: String,
    wh: String,
    b: String,
    hidden: usize,
}

impl LstmStep {
    fn new<F: Scalar>(init: &mut Init<F>, name: &str, input: usize, hidden: usize) -> Self {
        init.store.insert(
            format!("{name}.wx"),
            init_uniform(init.rng, &[input, 4 * hidden], hidden),
        );
        init.store.insert(
            format!("{name}.wh"),
            init_uniform(init.rng, &[hidden, 4 * hidden], hidden),
        );
        init.store.insert(
            format!("{name}.b"),
            init_uniform(init.rng, &[4 * hidden], hidden),
        );
        LstmStep {
            wx: format!("{name}.wx"),
            wh: format!("{name}.wh"),
            b: format!("{name}.b"),
            hidden,
        }
    }

    fn step<F: Scalar>(&self, f: &Fwd<F>, x: Var, h: Var, c: Var) -> (Var, Var) {
        let wx = f.param(&self.wx);
        let wh = f.param(&self.wh);
        let b = f.param(&self.b);
        f.tape.lstm_cell(x, h, c, wx, wh, b)
    }

    fn zero_state<F: Scalar>(&self, tape: &Tape<F>, batch: usize) -> (Var, Var) {
        let z = ArrayD::<F>::zeros(IxDyn(&[batch, self.hidden]));
        (tape.constant(z.clone()), tape.constant(z))
    }
}

pub struct VrnnModel {
    context: PpiEncoder,
    fwd: LstmStep,
    bwd: LstmStep,
    prior: Linear,
    encoder: Linear,
    decoder: Linear,
    latent: usize,
    hidden: usize,
}

impl VrnnModel {
    pub fn new<F: Scalar>(init: &mut Init<F>, config: &ModelConfig) -> Self {
        let d = config.d_btr;
        let hidden = config.lstm_hidden;
        let latent = config.vrnn_latent;
        let enc_cfg = SetEncoderConfig::new(d, config.heads);
        let context = PpiEncoder::new(init, "vrnn.ctx", 6, enc_cfg, false);
        let fwd = LstmStep::new(init, "vrnn.fwd", d + 2 + latent, hidden);
        let bwd = LstmStep::new(init, "vrnn.bwd", d, hidden);
        // heads consume the joint (forward, backward) state
        let prior = Linear::new(init, "vrnn.prior", 2 * hidden, 2 * latent);
        let encoder = Linear::new(init, "vrnn.enc", 2 + 2 * hidden, 2 * latent);
        let decoder = Linear::new(init, "vrnn.dec", latent + 2 * hidden, 4);
        VrnnModel {
            context,
            fwd,
            bwd,
            prior,
            encoder,
            decoder,
            latent,
            hidden,
        }
    }

    /// Split a `[B, 2k]` head output into a mean and a floored scale.
    fn gaussian<F: Scalar>(&self, tape: &Tape<F>, head: Var, k: usize) -> (Var, Var) {
        let mu = tape.slice_ax(head, 1, 0, k);
        let raw = tape.slice_ax(head, 1, k, 2 * k);
        let log_sigma = tape.clamp(raw, F::cast(SIGMA_FLOOR.ln()), F::cast(SIGMA_LOG_CEIL));
        (mu, tape.exp(log_sigma))
    }

    pub fn forward<F: Scalar>(
        &self,
        f: &Fwd<F>,
        batch: &WindowBatch<F>,
        source: SampleSource,
        rng_seed: u64,
    ) -> Result<ForwardOut> {
        let tape = f.tape;
        let (b, t) = (batch.batch_size(), batch.frames());
        let n = batch.n;
        let features = tape.constant(batch.features.clone());
        // context from the outfield agents only
        let players = tape.slice_ax(features, 2, 0, 2 * n);
        let ctx = self.context.encode(f, players, n)?.fused; // [B, T, d]

        let d_ctx = tape.shape(ctx)[2];
        let ctx_steps: Vec<Var> = (0..t)
            .map(|ti| tape.reshape(tape.slice_ax(ctx, 1, ti, ti + 1), &[b, d_ctx]))
            .collect();

        // backward recurrence over the context alone
        let (mut hb, mut cb) = self.bwd.zero_state(tape, b);
        let mut back_states = vec![hb; t];
        for ti in (0..t).rev() {
            let (nh, nc) = self.bwd.step(f, ctx_steps[ti], hb, cb);
            hb = nh;
            cb = nc;
            back_states[ti] = hb;
        }

        let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
        let mut noise = |shape: &[usize]| -> ArrayD<F> {
            ArrayD::from_shape_simple_fn(IxDyn(shape), || {
                // Box-Muller from two uniforms
                let u1: f64 = rng.random_range(1e-12..1.0);
                let u2: f64 = rng.random_range(0.0..1.0);
                F::cast((-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos())
            })
        };

        // internal recurrence runs in normalized coordinates
        let _ = KINEMATIC_SCALE;
        let truth_norm = {
            let mut arr = batch.ball_truth.clone();
            let (hx, hy) = (
                F::cast(batch.half_pitch[0]),
                F::cast(batch.half_pitch[1]),
            );
            for bi in 0..b {
                for ti in 0..t {
                    arr[[bi, ti, 0]] = (arr[[bi, ti, 0]] - hx) / hx;
                    arr[[bi, ti, 1]] = (arr[[bi, ti, 1]] - hy) / hy;
                }
            }
            arr
        };
        let truth = tape.constant(truth_norm);
        let (mut hf, mut cf) = self.fwd.zero_state(tape, b);
        let mut preds = Vec::with_capacity(t);
        let mut kls = Vec::with_capacity(t);
        let mut nlls = Vec::with_capacity(t);
        for ti in 0..t {
            // asymmetric joint state: past through the forward half,
            // present-and-future context through the backward half
            let joint = tape.concat(1, &[hf, back_states[ti]]);
            let (mu_pri, sig_pri) = self.gaussian(tape, self.prior.apply(f, joint), self.latent);
            let x_true = tape.reshape(tape.slice_ax(truth, 1, ti, ti + 1), &[b, 2]);

            let eps = tape.constant(noise(&[b, self.latent]));
            let (z, kl) = match source {
                SampleSource::Posterior => {
                    let enc_in = tape.concat(1, &[x_true, joint]);
                    let (mu_enc, sig_enc) =
                        self.gaussian(tape, self.encoder.apply(f, enc_in), self.latent);
                    let z = tape.add(mu_enc, tape.mul(sig_enc, eps));
                    // KL(q || p) of two diagonal Gaussians
                    let tiny = F::cast(1e-12);
                    let log_ratio = tape.sub(
                        tape.ln_clamped(sig_pri, tiny),
                        tape.ln_clamped(sig_enc, tiny),
                    );
                    let var_q = tape.mul(sig_enc, sig_enc);
                    let dmu = tape.sub(mu_enc, mu_pri);
                    let num = tape.add(var_q, tape.mul(dmu, dmu));
                    let den = tape.scale(tape.mul(sig_pri, sig_pri), F::cast(2.0));
                    let kl_el = tape.add_scalar(
                        tape.add(log_ratio, tape.div(num, den)),
                        F::cast(-0.5),
                    );
                    (z, Some(tape.sum_last(kl_el)))
                }
                SampleSource::Prior => {
                    let z = tape.add(mu_pri, tape.mul(sig_pri, eps));
                    (z, None)
                }
            };

            let dec_in = tape.concat(1, &[z, joint]);
            let (mu_dec, sig_dec) = self.gaussian(tape, self.decoder.apply(f, dec_in), 2);
            preds.push(mu_dec);
            if let Some(kl) = kl {
                kls.push(kl);
            }
            if source == SampleSource::Posterior {
                // Gaussian negative log likelihood of the true location
                let diff = tape.div(tape.sub(x_true, mu_dec), sig_dec);
                let quad = tape.scale(tape.mul(diff, diff), F::cast(0.5));
                let nll_el = tape.add(quad, tape.ln_clamped(sig_dec, F::cast(1e-12)));
                nlls.push(tape.sum_last(nll_el));
            }

            // the forward recurrence sees the true location when available
            let x_in = match source {
                SampleSource::Posterior => x_true,
                SampleSource::Prior => preds[ti],
            };
            let step_in = tape.concat(1, &[ctx_steps[ti], x_in, z]);
            let (nh, nc) = self.fwd.step(f, step_in, hf, cf);
            hf = nh;
            cf = nc;
        }

        let pred_norm = tape.stack(1, &preds); // [B, T, 2] normalized
        let pred = denormalize_positions(tape, pred_norm, batch.half_pitch);
        let aux = if source == SampleSource::Posterior {
            let kl = tape.mean_all(tape.stack(1, &kls));
            let nll = tape.mean_all(tape.stack(1, &nlls));
            Some(tape.add(nll, kl))
        } else {
            None
        };
        Ok(ForwardOut {
            probs: None,
            scores: None,
            hidden: None,
            pred,
            aux_loss: aux,
        })
    }

    pub fn latent_dim(&self) -> usize {
        self.latent
    }

    pub fn hidden_dim(&self) -> usize {
        self.hidden
    }
}
