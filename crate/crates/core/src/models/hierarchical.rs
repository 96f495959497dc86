//! The hierarchical model: a player possession classifier feeding a ball
//! trajectory regressor.
//!
//! The classifier runs one shared sequence core per agent over
//! context-enriched features (PPE/FPE/FPI embeddings) and normalizes
//! per-frame scores across the `2n + 4` possession classes. The regressor
//! concatenates each agent's input features, classifier hidden state and
//! possession probability, pools them with the team-wise invariant encoder
//! and regresses ball coordinates with a second sequence core. Gradients
//! flow end-to-end through the probabilities and hidden states.

use crate::autodiff::nn::{Fwd, Init, Linear};
use crate::autodiff::{Scalar, Var};
use crate::encoders::{PpeEncoder, PpiEncoder, SetEncoderConfig, StEncoder, StFull};
use crate::error::Result;
use crate::types::Window;

use super::{
    denormalize_positions, overwrite_observed, ForwardOut, ModelConfig, SeqCore, Variant,
    WindowBatch,
};

/// Possession classifier stage.
pub struct PossessionClassifier {
    ppe: Option<PpeEncoder>,
    fpe: Option<StEncoder>,
    fpi: Option<StFull>,
    core: SeqCore,
    fc: Linear,
    d_g: usize,
}

/// Tape-level outputs of the possession classifier.
pub struct PpcForward {
    /// `[B, T, A]` rows on the simplex.
    pub probs: Var,
    /// `[B, T, A]` pre-softmax scores.
    pub scores: Var,
    /// `[B, T, A, H]` per-agent hidden states.
    pub hidden: Var,
}

impl PossessionClassifier {
    pub fn new<F: Scalar>(init: &mut Init<F>, config: &ModelConfig, recurrent: bool) -> Self {
        let enc_cfg = SetEncoderConfig::new(config.d_g, config.heads);
        let ppe = config
            .embeddings
            .ppe
            .then(|| PpeEncoder::new(init, "ppc.ppe", 6, enc_cfg));
        let fpe = config
            .embeddings
            .fpe
            .then(|| StEncoder::new(init, "ppc.fpe", 6, enc_cfg));
        let fpi = config
            .embeddings
            .fpi
            .then(|| StFull::new(init, "ppc.fpi", 6, enc_cfg));
        let input_dim = 6 + config.embeddings.count() * config.d_g;
        let core = SeqCore::new(init, "ppc.core", config, recurrent, input_dim);
        let fc = Linear::new(init, "ppc.fc", core.out_dim(), 1);
        PossessionClassifier {
            ppe,
            fpe,
            fpi,
            core,
            fc,
            d_g: config.d_g,
        }
    }

    /// `features` is `[B, T, A, 6]`.
    pub fn forward<F: Scalar>(
        &self,
        f: &Fwd<F>,
        features: Var,
        n: usize,
    ) -> Result<PpcForward> {
        let tape = f.tape;
        let shape = tape.shape(features);
        let (b, t, a) = (shape[0], shape[1], shape[2]);

        let mut parts = vec![features];
        if let Some(ppe) = &self.ppe {
            parts.push(ppe.encode(f, features, n)?);
        }
        if let Some(fpe) = &self.fpe {
            parts.push(fpe.encode(f, features)?);
        }
        if let Some(fpi) = &self.fpi {
            let ctx = fpi.encode(f, features)?; // [B, T, d_g]
            let ctx = tape.reshape(ctx, &[b, t, 1, self.d_g]);
            let zeros = tape.constant(ndarray::ArrayD::<F>::zeros(
                vec![b, t, a, self.d_g].as_slice(),
            ));
            parts.push(tape.add(ctx, zeros));
        }
        let x_in = tape.concat(3, &parts);
        let d_in = tape.shape(x_in)[3];

        // shared-weight sequence core per agent: fold agents into the batch
        let per_agent = tape.permute(x_in, &[0, 2, 1, 3]);
        let folded = tape.reshape(per_agent, &[b * a, t, d_in]);
        let states = self.core.run(f, folded);
        let h = self.core.out_dim();
        let unfolded = tape.reshape(states, &[b, a, t, h]);
        let hidden = tape.permute(unfolded, &[0, 2, 1, 3]);

        let scores = self.fc.apply(f, hidden); // [B, T, A, 1]
        let scores = tape.reshape(scores, &[b, t, a]);
        let probs = tape.softmax_last(scores);
        Ok(PpcForward {
            probs,
            scores,
            hidden,
        })
    }
}

/// Trajectory regressor stage.
pub struct TrajectoryRegressor {
    ppi: PpiEncoder,
    core: SeqCore,
    fc: Linear,
}

impl TrajectoryRegressor {
    pub fn new<F: Scalar>(
        init: &mut Init<F>,
        config: &ModelConfig,
        recurrent: bool,
        agent_dim: usize,
    ) -> Self {
        let enc_cfg = SetEncoderConfig::new(config.d_btr, config.heads);
        let ppi = PpiEncoder::new(init, "btr.ppi", agent_dim, enc_cfg, true);
        let core_in = config.d_btr + if config.imputation { 3 } else { 0 };
        let core = SeqCore::new(init, "btr.core", config, recurrent, core_in);
        let fc = Linear::new(init, "btr.fc", core.out_dim(), 2);
        TrajectoryRegressor { ppi, core, fc }
    }

    /// `agent_features` is `[B, T, A, agent_dim]`.
    pub fn forward<F: Scalar>(
        &self,
        f: &Fwd<F>,
        agent_features: Var,
        batch: &WindowBatch<F>,
        imputation: bool,
    ) -> Result<Var> {
        let tape = f.tape;
        let parts = self.ppi.encode(f, agent_features, batch.n)?;
        let ctx = if imputation {
            let obs = tape.constant(batch.observations.clone());
            tape.concat(2, &[parts.fused, obs])
        } else {
            parts.fused
        };
        let states = self.core.run(f, ctx);
        let pred = denormalize_positions(tape, self.fc.apply(f, states), batch.half_pitch);
        Ok(if imputation {
            overwrite_observed(tape, pred, batch)
        } else {
            pred
        })
    }
}

/// Possession classifier plus trajectory regressor.
pub struct HierarchicalModel {
    pub ppc: PossessionClassifier,
    btr: TrajectoryRegressor,
}

impl HierarchicalModel {
    pub fn new<F: Scalar>(init: &mut Init<F>, config: &ModelConfig) -> Self {
        let recurrent = config.variant == Variant::HLstm;
        let ppc = PossessionClassifier::new(init, config, recurrent);
        let agent_dim = 6 + ppc.core.out_dim() + 1;
        let btr = TrajectoryRegressor::new(init, config, recurrent, agent_dim);
        HierarchicalModel { ppc, btr }
    }

    /// Timing hook used by benchmarks: run only the regressor stage.
    pub fn forward_btr_for_timing<F: Scalar>(
        &self,
        f: &Fwd<F>,
        agent_features: crate::autodiff::Var,
        batch: &WindowBatch<F>,
    ) -> Result<crate::autodiff::Var> {
        self.btr.forward(f, agent_features, batch, false)
    }

    pub fn forward<F: Scalar>(
        &self,
        f: &Fwd<F>,
        batch: &WindowBatch<F>,
        imputation: bool,
    ) -> Result<ForwardOut> {
        let tape = f.tape;
        let features = tape.constant(batch.features.clone());
        let ppc = self.ppc.forward(f, features, batch.n)?;
        let shape = tape.shape(ppc.probs);
        let (b, t, a) = (shape[0], shape[1], shape[2]);
        let probs_col = tape.reshape(ppc.probs, &[b, t, a, 1]);
        let agent_features = tape.concat(3, &[features, ppc.hidden, probs_col]);
        let pred = self.btr.forward(f, agent_features, batch, imputation)?;
        Ok(ForwardOut {
            probs: Some(ppc.probs),
            scores: Some(ppc.scores),
            hidden: Some(ppc.hidden),
            pred,
            aux_loss: None,
        })
    }
}

/// Run only the possession classifier of a bundle on one window (dense
/// output); used where the trajectory stage is not needed.
pub fn classify_possession<F: Scalar>(
    bundle: &super::ModelBundle<F>,
    window: &Window,
) -> Result<super::PossessionOutput> {
    let (poss, _) = bundle.infer(window)?;
    poss.ok_or_else(|| {
        crate::error::Error::Config("variant has no possession classifier".into())
    })
}
