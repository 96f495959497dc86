//! Masked-trajectory imputation evaluation: mask the true ball track at a
//! set of rates, let the model fill the gaps, and report metrics before
//! and after rule-based postprocessing. Position error is evaluated on all
//! frames; observed frames contribute zero through the overwrite rule.

use crate::autodiff::Scalar;
use crate::error::{Error, Result};
use crate::metrics::{self, MetricsReport};
use crate::models::ModelBundle;
use crate::pipeline::mask_ball;
use crate::postprocess::{postprocess, PostprocessConfig};
use crate::types::Window;

/// Metrics at one masking rate.
#[derive(Debug, Clone, Copy)]
pub struct ImputationReport {
    pub masking_rate: f64,
    pub before: MetricsReport,
    pub after: MetricsReport,
}

impl ImputationReport {
    pub const CSV_HEADER: &'static str = "masking_rate,step,pe,rl,ppa,tpa";

    pub fn csv_rows(&self) -> String {
        format!(
            "{:.2},before,{}\n{:.2},after,{}\n",
            self.masking_rate,
            self.before.csv_row(),
            self.masking_rate,
            self.after.csv_row()
        )
    }
}

/// Evaluate an imputation-mode model at several masking rates. The model
/// must carry a possession classifier (postprocessing needs possession
/// probabilities).
pub fn evaluate_imputation<F: Scalar>(
    bundle: &ModelBundle<F>,
    windows: &[Window],
    masking_rates: &[f64],
    seed: u64,
    pp: &PostprocessConfig,
) -> Result<Vec<ImputationReport>> {
    if !bundle.config.imputation {
        return Err(Error::Config(
            "model was not built in imputation mode".into(),
        ));
    }
    if windows.is_empty() {
        return Err(Error::Config("no windows to evaluate".into()));
    }
    let mut out = Vec::with_capacity(masking_rates.len());
    for (ri, &rate) in masking_rates.iter().enumerate() {
        if !(0.0..=1.0).contains(&rate) {
            return Err(Error::Config(format!("masking rate {rate} outside [0, 1]")));
        }
        let mut sums = [MetricsSums::default(), MetricsSums::default()];
        for (wi, window) in windows.iter().enumerate() {
            let masked = mask_ball(
                window,
                1.0 - rate,
                seed.wrapping_add((ri * 1_000_003 + wi) as u64),
            )?;
            let (poss, pred) = bundle.infer(&masked)?;
            let poss = poss.ok_or_else(|| {
                Error::Config("imputation evaluation needs a possession classifier".into())
            })?;
            let t = window.len();
            let players = window.player_positions();
            let agent_positions = window.agent_positions();

            let (ppa, tpa) = metrics::possession_accuracy(
                &poss.probs,
                &window.possession_labels,
                &window.agents,
            )?;
            let pe = metrics::position_error(&pred.positions, &window.ball_truth)?;
            let rl = metrics::reality_metric(&pred.positions, &players)?;
            sums[0].add(t, pe, rl, ppa, tpa);

            let (_, rebuilt) = postprocess(&poss.probs, &pred.positions, &agent_positions, pp)?;
            let pe_pp = metrics::position_error(&rebuilt, &window.ball_truth)?;
            let rl_pp = metrics::reality_metric(&rebuilt, &players)?;
            sums[1].add(t, pe_pp, rl_pp, ppa, tpa);
        }
        out.push(ImputationReport {
            masking_rate: rate,
            before: sums[0].report(),
            after: sums[1].report(),
        });
    }
    Ok(out)
}

#[derive(Default)]
struct MetricsSums {
    frames: usize,
    pe: f64,
    rl: f64,
    ppa: f64,
    tpa: f64,
}

impl MetricsSums {
    fn add(&mut self, t: usize, pe: f64, rl: f64, ppa: f64, tpa: f64) {
        self.frames += t;
        self.pe += pe * t as f64;
        self.rl += rl * t as f64;
        self.ppa += ppa * t as f64;
        self.tpa += tpa * t as f64;
    }

    fn report(&self) -> MetricsReport {
        let f = self.frames.max(1) as f64;
        MetricsReport {
            pe: self.pe / f,
            rl: self.rl / f,
            ppa: self.ppa / f,
            tpa: self.tpa / f,
        }
    }
}
