//! Non-hierarchical baselines: the team-wise invariant context encoder on
//! raw player features followed by a single sequence core that regresses
//! the ball directly, with no possession supervision.

use crate::autodiff::nn::{Fwd, Init, Linear};
use crate::autodiff::Scalar;
use crate::encoders::{PpiEncoder, SetEncoderConfig};
use crate::error::Result;

use super::{denormalize_positions, overwrite_observed, ForwardOut, ModelConfig, SeqCore, Variant, WindowBatch};

pub struct DirectModel {
    ppi: PpiEncoder,
    core: SeqCore,
    fc: Linear,
}

impl DirectModel {
    pub fn new<F: Scalar>(init: &mut Init<F>, config: &ModelConfig) -> Self {
        let recurrent = config.variant == Variant::Lstm;
        let enc_cfg = SetEncoderConfig::new(config.d_btr, config.heads);
        let ppi = PpiEncoder::new(init, "direct.ppi", 6, enc_cfg, true);
        let core_in = config.d_btr + if config.imputation { 3 } else { 0 };
        let core = SeqCore::new(init, "direct.core", config, recurrent, core_in);
        let fc = Linear::new(init, "direct.fc", core.out_dim(), 2);
        DirectModel { ppi, core, fc }
    }

    pub fn forward<F: Scalar>(
        &self,
        f: &Fwd<F>,
        batch: &WindowBatch<F>,
        imputation: bool,
    ) -> Result<ForwardOut> {
        let tape = f.tape;
        let features = tape.constant(batch.features.clone());
        let parts = self.ppi.encode(f, features, batch.n)?;
        let ctx = if imputation {
            let obs = tape.constant(batch.observations.clone());
            tape.concat(2, &[parts.fused, obs])
        } else {
            parts.fused
        };
        let states = self.core.run(f, ctx);
        let pred = denormalize_positions(tape, self.fc.apply(f, states), batch.half_pitch);
        let pred = if imputation {
            overwrite_observed(tape, pred, batch)
        } else {
            pred
        };
        Ok(ForwardOut {
            probs: None,
            scores: None,
            hidden: None,
            pred,
            aux_loss: None,
        })
    }
}
