//! Rule-based postprocessing: possession scores, touch/transition
//! assignment and physically plausible trajectory reconstruction.
//!
//! The possession score of an agent is its possession probability divided
//! by its distance to the predicted ball (floored at
//! [`PostprocessConfig::distance_floor`]). Touches are assigned by three
//! rules: a score above the touch threshold is a touch; a score in the
//! local-maximum band that peaks the smoothed max-score series is a touch
//! (one-touch passes leave no time for the probability to rise); everything
//! else is a transition. Touched frames pin the ball to the toucher and
//! transitions are re-filled by linear interpolation between the anchors.

use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::AgentSet;

/// Thresholds of the touch rules; defaults follow the 0.5 / 0.2 score
/// bands with a 0.5 m distance floor and a 0.5 s smoothing window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PostprocessConfig {
    pub touch_threshold: f64,
    pub local_max_threshold: f64,
    pub distance_floor: f64,
    /// Width (frames) of the moving average applied to the max-score
    /// series before the local-maximum test.
    pub smooth_window: usize,
    /// Half-width (frames) of the neighborhood a local maximum must
    /// dominate.
    pub neighborhood: usize,
}

impl Default for PostprocessConfig {
    fn default() -> Self {
        PostprocessConfig {
            touch_threshold: 0.5,
            local_max_threshold: 0.2,
            distance_floor: 0.5,
            smooth_window: 5,
            neighborhood: 5,
        }
    }
}

/// Per-frame, per-agent possession scores.
#[derive(Debug, Clone)]
pub struct PossessionScoreSeries {
    /// `[T, 2n+4]`, nonnegative and finite.
    pub scores: Array2<f64>,
}

/// Whether a frame run is a single touch, a merged carry or a transition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum IntervalKind {
    Touch,
    Carry,
    Transition,
}

impl IntervalKind {
    pub fn label(&self) -> &'static str {
        match self {
            IntervalKind::Touch => "TOUCH",
            IntervalKind::Carry => "CARRY",
            IntervalKind::Transition => "TRANSITION",
        }
    }
}

/// A maximal run of frames with one owner (or none for transitions);
/// bounds are inclusive frame indices.
#[derive(Debug, Clone, PartialEq)]
pub struct TouchInterval {
    pub agent: Option<usize>,
    pub start: usize,
    pub end: usize,
    pub kind: IntervalKind,
}

/// Frame-complete, non-overlapping, time-ordered touch assignment.
#[derive(Debug, Clone)]
pub struct TouchAssignment {
    pub intervals: Vec<TouchInterval>,
    /// Per-frame toucher class (None = transition).
    pub touched: Vec<Option<usize>>,
}

impl TouchAssignment {
    /// CSV export `t_start,t_end,agent,kind`; times in seconds.
    pub fn to_csv(&self, agents: &AgentSet, start_time: f64, dt: f64) -> String {
        let mut out = String::from("t_start,t_end,agent,kind\n");
        for iv in &self.intervals {
            let agent = iv
                .agent
                .and_then(|c| agents.id_of(c))
                .unwrap_or("");
            out.push_str(&format!(
                "{:.1},{:.1},{},{}\n",
                start_time + iv.start as f64 * dt,
                start_time + iv.end as f64 * dt,
                agent,
                iv.kind.label()
            ));
        }
        out
    }
}

/// Divide possession probabilities by the (floored) agent-ball distance.
pub fn possession_scores(
    probs: &Array2<f64>,
    pred: &Array2<f64>,
    agent_positions: &Array3<f64>,
    cfg: &PostprocessConfig,
) -> Result<PossessionScoreSeries> {
    let (t, k) = (probs.shape()[0], probs.shape()[1]);
    if pred.shape() != [t, 2] {
        return Err(Error::Shape(format!(
            "prediction shape {:?} does not match {t} frames",
            pred.shape()
        )));
    }
    if agent_positions.shape() != [t, k, 2] {
        return Err(Error::Shape(format!(
            "agent positions {:?} do not match probabilities [{t}, {k}]",
            agent_positions.shape()
        )));
    }
    let mut scores = Array2::<f64>::zeros((t, k));
    for i in 0..t {
        for p in 0..k {
            let dx = pred[[i, 0]] - agent_positions[[i, p, 0]];
            let dy = pred[[i, 1]] - agent_positions[[i, p, 1]];
            let dist = (dx * dx + dy * dy).sqrt().max(cfg.distance_floor);
            scores[[i, p]] = probs[[i, p]] / dist;
        }
    }
    if scores.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::Numeric("possession scores not finite".into()));
    }
    Ok(PossessionScoreSeries { scores })
}

fn moving_average(series: &[f64], window: usize) -> Vec<f64> {
    if window <= 1 {
        return series.to_vec();
    }
    let half = window / 2;
    let n = series.len();
    (0..n)
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half + 1).min(n);
            series[lo..hi].iter().sum::<f64>() / (hi - lo) as f64
        })
        .collect()
}

/// Apply the three touch rules and merge runs into intervals.
pub fn assign_touches(
    series: &PossessionScoreSeries,
    cfg: &PostprocessConfig,
) -> TouchAssignment {
    let (t, k) = (series.scores.shape()[0], series.scores.shape()[1]);
    let mut max_score = vec![0.0f64; t];
    let mut argmax = vec![0usize; t];
    for i in 0..t {
        let mut best = 0usize;
        for p in 1..k {
            if series.scores[[i, p]] > series.scores[[i, best]] {
                best = p;
            }
        }
        argmax[i] = best;
        max_score[i] = series.scores[[i, best]];
    }
    let smoothed = moving_average(&max_score, cfg.smooth_window);

    let is_local_max = |i: usize| -> bool {
        let lo = i.saturating_sub(cfg.neighborhood);
        let hi = (i + cfg.neighborhood + 1).min(t);
        let peak = smoothed[lo..hi]
            .iter()
            .cloned()
            .fold(f64::NEG_INFINITY, f64::max);
        // first index attaining the neighborhood peak wins plateaus
        smoothed[i] == peak && (lo..i).all(|j| smoothed[j] < peak)
    };

    let mut touched: Vec<Option<usize>> = vec![None; t];
    for i in 0..t {
        if max_score[i] > cfg.touch_threshold {
            touched[i] = Some(argmax[i]);
        } else if max_score[i] > cfg.local_max_threshold && is_local_max(i) {
            touched[i] = Some(argmax[i]);
        }
    }

    let mut intervals: Vec<TouchInterval> = Vec::new();
    let mut i = 0usize;
    while i < t {
        let owner = touched[i];
        let start = i;
        while i + 1 < t && touched[i + 1] == owner {
            i += 1;
        }
        let kind = match owner {
            None => IntervalKind::Transition,
            Some(_) if i == start => IntervalKind::Touch,
            Some(_) => IntervalKind::Carry,
        };
        intervals.push(TouchInterval {
            agent: owner,
            start,
            end: i,
            kind,
        });
        i += 1;
    }
    TouchAssignment { intervals, touched }
}

/// Pin touched frames to the toucher, re-fill transitions by linear
/// interpolation between the surrounding anchors, and keep the raw
/// prediction on leading/trailing unanchored frames.
pub fn rebuild_trajectory(
    assignment: &TouchAssignment,
    agent_positions: &Array3<f64>,
    pred: &Array2<f64>,
) -> Result<Array2<f64>> {
    let t = pred.shape()[0];
    if assignment.touched.len() != t {
        return Err(Error::Shape(format!(
            "assignment covers {} frames, prediction has {t}",
            assignment.touched.len()
        )));
    }
    let mut out = pred.clone();
    let anchors: Vec<usize> = (0..t).filter(|&i| assignment.touched[i].is_some()).collect();
    for &i in &anchors {
        let p = assignment.touched[i].unwrap();
        out[[i, 0]] = agent_positions[[i, p, 0]];
        out[[i, 1]] = agent_positions[[i, p, 1]];
    }
    for pair in anchors.windows(2) {
        let (a, b) = (pair[0], pair[1]);
        for i in a + 1..b {
            let w = (i - a) as f64 / (b - a) as f64;
            out[[i, 0]] = out[[a, 0]] + w * (out[[b, 0]] - out[[a, 0]]);
            out[[i, 1]] = out[[a, 1]] + w * (out[[b, 1]] - out[[a, 1]]);
        }
    }
    Ok(out)
}

/// Convenience: scores, touches and the rebuilt trajectory in one call.
pub fn postprocess(
    probs: &Array2<f64>,
    pred: &Array2<f64>,
    agent_positions: &Array3<f64>,
    cfg: &PostprocessConfig,
) -> Result<(TouchAssignment, Array2<f64>)> {
    let scores = possession_scores(probs, pred, agent_positions, cfg)?;
    let assignment = assign_touches(&scores, cfg);
    let rebuilt = rebuild_trajectory(&assignment, agent_positions, pred)?;
    Ok((assignment, rebuilt))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> PostprocessConfig {
        PostprocessConfig::default()
    }

    #[test]
    fn scores_divide_by_floored_distance() {
        let probs = Array2::from_shape_vec((1, 2), vec![0.8, 0.2]).unwrap();
        let pred = Array2::from_shape_vec((1, 2), vec![0.0, 0.0]).unwrap();
        let mut agents = Array3::zeros((1, 2, 2));
        agents[[0, 0, 0]] = 2.0; // 2 m away
        agents[[0, 1, 0]] = 0.1; // inside the floor
        let s = possession_scores(&probs, &pred, &agents, &cfg()).unwrap();
        assert!((s.scores[[0, 0]] - 0.4).abs() < 1e-12);
        assert!((s.scores[[0, 1]] - 0.2 / 0.5).abs() < 1e-12);
    }

    #[test]
    fn scores_match_naive_loop() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let (t, k) = (30, 6);
        let probs = Array2::from_shape_simple_fn((t, k), || rng.random_range(0.0..1.0));
        let pred = Array2::from_shape_simple_fn((t, 2), || rng.random_range(0.0..100.0));
        let agents = Array3::from_shape_simple_fn((t, k, 2), || rng.random_range(0.0..100.0));
        let s = possession_scores(&probs, &pred, &agents, &cfg()).unwrap();
        for i in 0..t {
            for p in 0..k {
                let d = ((pred[[i, 0]] - agents[[i, p, 0]]).powi(2)
                    + (pred[[i, 1]] - agents[[i, p, 1]]).powi(2))
                .sqrt()
                .max(0.5);
                assert!((s.scores[[i, p]] - probs[[i, p]] / d).abs() < 1e-9);
            }
        }
    }

    fn series_from_max(values: &[f64]) -> PossessionScoreSeries {
        // one agent carries the max score, a second stays at zero
        let t = values.len();
        let mut scores = Array2::zeros((t, 2));
        for (i, v) in values.iter().enumerate() {
            scores[[i, 0]] = *v;
        }
        PossessionScoreSeries { scores }
    }

    #[test]
    fn rule_one_and_rule_three() {
        let s = series_from_max(&[0.6, 0.15, 0.6]);
        let a = assign_touches(&s, &cfg());
        assert_eq!(a.touched[0], Some(0), "score above 0.5 touches");
        assert_eq!(a.touched[1], None, "low score is a transition");
        assert_eq!(a.touched[2], Some(0));
    }

    #[test]
    fn rule_two_fires_exactly_at_the_local_peak() {
        // ramp up to a 0.3 peak and back down: only the peak frame touches
        let vals = [0.05, 0.1, 0.15, 0.22, 0.3, 0.22, 0.15, 0.1, 0.05];
        let mut c = cfg();
        c.smooth_window = 1; // no smoothing for the synthetic ramp
        let a = assign_touches(&series_from_max(&vals), &c);
        for (i, touched) in a.touched.iter().enumerate() {
            if i == 4 {
                assert_eq!(*touched, Some(0), "peak frame must be a touch");
            } else {
                assert_eq!(*touched, None, "frame {i} must be a transition");
            }
        }
        let touch = a.intervals.iter().find(|iv| iv.agent.is_some()).unwrap();
        assert_eq!(touch.kind, IntervalKind::Touch);
    }

    #[test]
    fn assignment_is_deterministic_and_frame_complete() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let scores = Array2::from_shape_simple_fn((50, 4), || rng.random_range(0.0..0.8));
        let series = PossessionScoreSeries { scores };
        let a = assign_touches(&series, &cfg());
        let b = assign_touches(&series, &cfg());
        assert_eq!(a.intervals, b.intervals);
        // intervals tile the frame range without overlap
        let mut covered = 0usize;
        for iv in &a.intervals {
            assert_eq!(iv.start, covered);
            assert!(iv.end >= iv.start);
            covered = iv.end + 1;
        }
        assert_eq!(covered, 50);
    }

    #[test]
    fn rebuild_pins_and_interpolates() {
        // anchors at frames 0 and 10, transition between
        let t = 11;
        let mut touched = vec![None; t];
        touched[0] = Some(0);
        touched[10] = Some(1);
        let assignment = TouchAssignment {
            intervals: vec![],
            touched,
        };
        let mut agents = Array3::zeros((t, 2, 2));
        for i in 0..t {
            agents[[i, 1, 0]] = 10.0;
        }
        let pred = Array2::from_elem((t, 2), 99.0);
        let out = rebuild_trajectory(&assignment, &agents, &pred).unwrap();
        assert!((out[[0, 0]] - 0.0).abs() < 1e-12);
        assert!((out[[5, 0]] - 5.0).abs() < 1e-12);
        assert!((out[[5, 1]] - 0.0).abs() < 1e-12);
        assert!((out[[10, 0]] - 10.0).abs() < 1e-12);
    }

    #[test]
    fn rebuild_keeps_raw_prediction_outside_anchors() {
        let t = 9;
        let mut touched = vec![None; t];
        touched[4] = Some(0);
        let assignment = TouchAssignment {
            intervals: vec![],
            touched,
        };
        let agents = Array3::zeros((t, 1, 2));
        let pred = Array2::from_shape_fn((t, 2), |(i, c)| (i * 2 + c) as f64);
        let out = rebuild_trajectory(&assignment, &agents, &pred).unwrap();
        for i in 0..t {
            if i == 4 {
                assert_eq!(out[[i, 0]], 0.0);
            } else {
                assert_eq!(out[[i, 0]], pred[[i, 0]], "frame {i} keeps the raw value");
            }
        }
    }
}
