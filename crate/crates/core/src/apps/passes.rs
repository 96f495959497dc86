//! Pass detection from touch assignments and accuracy scoring against
//! annotated passes.

use crate::error::{Error, Result};
use crate::postprocess::TouchAssignment;
use crate::types::AgentSet;

/// A detected or annotated pass: `passer` releases at `t0`, `receiver`
/// first touches at `t1`, the ball is in transition in between.
#[derive(Debug, Clone, PartialEq)]
pub struct PassEvent {
    pub passer: String,
    pub receiver: String,
    pub t0: f64,
    pub t1: f64,
}

impl PassEvent {
    pub fn validate(&self) -> Result<()> {
        if self.t1 <= self.t0 {
            return Err(Error::Label(format!(
                "pass must end after it starts ({}..{})",
                self.t0, self.t1
            )));
        }
        if self.passer == self.receiver {
            return Err(Error::Label("passer equals receiver".into()));
        }
        Ok(())
    }

    pub const CSV_HEADER: &'static str = "passer,receiver,t0,t1";

    pub fn csv_row(&self) -> String {
        format!("{},{},{:.1},{:.1}", self.passer, self.receiver, self.t0, self.t1)
    }
}

/// Emit one pass for every ordered pair of consecutive touch intervals by
/// distinct players with only transition frames between them. Intervals
/// owned by ball-out pseudo-agents end possession chains instead of
/// producing passes.
pub fn detect_passes(
    assignment: &TouchAssignment,
    agents: &AgentSet,
    start_time: f64,
    dt: f64,
) -> Vec<PassEvent> {
    let mut out = Vec::new();
    let owned: Vec<(usize, usize, usize)> = assignment
        .intervals
        .iter()
        .filter_map(|iv| iv.agent.map(|a| (a, iv.start, iv.end)))
        .collect();
    for pair in owned.windows(2) {
        let (p, _, p_end) = pair[0];
        let (q, q_start, _) = pair[1];
        if p == q {
            continue; // consecutive control by the same player is a carry
        }
        if agents.is_ball_out(p) || agents.is_ball_out(q) {
            continue; // out-balls and restarts are not passes
        }
        out.push(PassEvent {
            passer: agents.id_of(p).unwrap().to_string(),
            receiver: agents.id_of(q).unwrap().to_string(),
            t0: start_time + p_end as f64 * dt,
            t1: start_time + q_start as f64 * dt,
        });
    }
    out
}

/// F1 scores for pass/passer/receiver detection plus R2 of per-player pass
/// and receive counts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PassMatchReport {
    pub pass_f1: f64,
    pub passer_f1: f64,
    pub receiver_f1: f64,
    pub passes_r2: f64,
    pub receives_r2: f64,
    pub detected: usize,
    pub truth: usize,
}

impl PassMatchReport {
    pub const CSV_HEADER: &'static str = "pass_f1,passer_f1,receiver_f1,passes_r2,receives_r2";

    pub fn csv_row(&self) -> String {
        format!(
            "{:.4},{:.4},{:.4},{:.4},{:.4}",
            self.pass_f1, self.passer_f1, self.receiver_f1, self.passes_r2, self.receives_r2
        )
    }
}

fn f1_greedy(
    detected: &[PassEvent],
    truth: &[PassEvent],
    tolerance: f64,
    matches: impl Fn(&PassEvent, &PassEvent) -> bool,
) -> f64 {
    let mut used = vec![false; truth.len()];
    let mut hits = 0usize;
    for d in detected {
        // earliest-first greedy one-to-one matching
        let found = truth.iter().enumerate().position(|(i, t)| {
            !used[i] && d.t0 > t.t0 - tolerance && d.t1 < t.t1 + tolerance && matches(d, t)
        });
        if let Some(i) = found {
            used[i] = true;
            hits += 1;
        }
    }
    if detected.is_empty() && truth.is_empty() {
        return 1.0;
    }
    if detected.is_empty() || truth.is_empty() || hits == 0 {
        return 0.0;
    }
    let precision = hits as f64 / detected.len() as f64;
    let recall = hits as f64 / truth.len() as f64;
    2.0 * precision * recall / (precision + recall)
}

fn r2(pairs: &[(f64, f64)]) -> f64 {
    if pairs.is_empty() {
        return 1.0;
    }
    let mean_t = pairs.iter().map(|(_, t)| t).sum::<f64>() / pairs.len() as f64;
    let ss_res: f64 = pairs.iter().map(|(e, t)| (e - t) * (e - t)).sum();
    let ss_tot: f64 = pairs.iter().map(|(_, t)| (t - mean_t) * (t - mean_t)).sum();
    if ss_tot == 0.0 {
        return if ss_res == 0.0 { 1.0 } else { 0.0 };
    }
    1.0 - ss_res / ss_tot
}

/// Score detected passes against the truth. A true pass is matched by a
/// detected pass with the required endpoints starting after `t0 -
/// tolerance` and ending before `t1 + tolerance`; matching is greedy
/// earliest-first and one-to-one. R2 is computed over per-player pass and
/// receive counts across the roster.
pub fn match_passes(
    detected: &[PassEvent],
    truth: &[PassEvent],
    tolerance: f64,
    agents: &AgentSet,
) -> PassMatchReport {
    let mut detected: Vec<PassEvent> = detected.to_vec();
    detected.sort_by(|a, b| a.t0.total_cmp(&b.t0));
    let mut truth: Vec<PassEvent> = truth.to_vec();
    truth.sort_by(|a, b| a.t0.total_cmp(&b.t0));

    let pass_f1 = f1_greedy(&detected, &truth, tolerance, |d, t| {
        d.passer == t.passer && d.receiver == t.receiver
    });
    let passer_f1 = f1_greedy(&detected, &truth, tolerance, |d, t| d.passer == t.passer);
    let receiver_f1 = f1_greedy(&detected, &truth, tolerance, |d, t| {
        d.receiver == t.receiver
    });

    let players: Vec<&String> = agents.team1.iter().chain(agents.team2.iter()).collect();
    let count =
        |list: &[PassEvent], pick: &dyn Fn(&PassEvent) -> &String, id: &String| -> f64 {
            list.iter().filter(|p| pick(p) == id).count() as f64
        };
    let passes_pairs: Vec<(f64, f64)> = players
        .iter()
        .map(|id| {
            (
                count(&detected, &|p| &p.passer, id),
                count(&truth, &|p| &p.passer, id),
            )
        })
        .collect();
    let receives_pairs: Vec<(f64, f64)> = players
        .iter()
        .map(|id| {
            (
                count(&detected, &|p| &p.receiver, id),
                count(&truth, &|p| &p.receiver, id),
            )
        })
        .collect();

    PassMatchReport {
        pass_f1,
        passer_f1,
        receiver_f1,
        passes_r2: r2(&passes_pairs),
        receives_r2: r2(&receives_pairs),
        detected: detected.len(),
        truth: truth.len(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::postprocess::{IntervalKind, TouchInterval};
    use crate::types::PitchConfig;

    fn agents() -> AgentSet {
        AgentSet::new(
            vec!["a".into(), "b".into()],
            vec!["c".into(), "d".into()],
            PitchConfig::default(),
        )
        .unwrap()
    }

    fn assignment(owners: &[(Option<usize>, usize, usize)]) -> TouchAssignment {
        let mut touched = Vec::new();
        let mut intervals = Vec::new();
        for (owner, start, end) in owners {
            for _ in *start..=*end {
                touched.push(*owner);
            }
            intervals.push(TouchInterval {
                agent: *owner,
                start: *start,
                end: *end,
                kind: match owner {
                    None => IntervalKind::Transition,
                    Some(_) if start == end => IntervalKind::Touch,
                    Some(_) => IntervalKind::Carry,
                },
            });
        }
        TouchAssignment { intervals, touched }
    }

    #[test]
    fn consecutive_distinct_touches_make_a_pass() {
        let a = assignment(&[(Some(0), 0, 10), (None, 11, 29), (Some(2), 30, 35)]);
        let passes = detect_passes(&a, &agents(), 0.0, 0.1);
        assert_eq!(
            passes,
            vec![PassEvent {
                passer: "a".into(),
                receiver: "c".into(),
                t0: 1.0,
                t1: 3.0,
            }]
        );
    }

    #[test]
    fn carries_and_out_balls_make_no_pass() {
        let carry = assignment(&[(Some(1), 0, 5), (None, 6, 9), (Some(1), 10, 15)]);
        assert!(detect_passes(&carry, &agents(), 0.0, 0.1).is_empty());
        // interval owned by a pseudo-agent (class 4 = first ball-out slot)
        let out = assignment(&[(Some(0), 0, 5), (None, 6, 9), (Some(4), 10, 10)]);
        assert!(detect_passes(&out, &agents(), 0.0, 0.1).is_empty());
    }

    #[test]
    fn perfect_detection_scores_one_everywhere() {
        let truth = vec![
            PassEvent { passer: "a".into(), receiver: "b".into(), t0: 1.0, t1: 2.0 },
            PassEvent { passer: "b".into(), receiver: "c".into(), t0: 5.0, t1: 6.5 },
        ];
        let r = match_passes(&truth, &truth, 2.0, &agents());
        assert_eq!(r.pass_f1, 1.0);
        assert_eq!(r.passer_f1, 1.0);
        assert_eq!(r.receiver_f1, 1.0);
        assert_eq!(r.passes_r2, 1.0);
        assert_eq!(r.receives_r2, 1.0);
    }

    #[test]
    fn endpoint_scores_count_partial_matches() {
        let truth = vec![PassEvent {
            passer: "a".into(),
            receiver: "b".into(),
            t0: 10.0,
            t1: 11.0,
        }];
        // right passer / wrong receiver inside the window
        let detected = vec![PassEvent {
            passer: "a".into(),
            receiver: "c".into(),
            t0: 10.1,
            t1: 11.2,
        }];
        let r = match_passes(&detected, &truth, 2.0, &agents());
        assert_eq!(r.pass_f1, 0.0);
        assert_eq!(r.passer_f1, 1.0);
        assert_eq!(r.receiver_f1, 0.0);
    }

    #[test]
    fn matching_window_is_enforced() {
        let truth = vec![PassEvent {
            passer: "a".into(),
            receiver: "b".into(),
            t0: 10.0,
            t1: 11.0,
        }];
        // same endpoints but starts too early (10.0 - 2.0 = 8.0 cutoff)
        let detected = vec![PassEvent {
            passer: "a".into(),
            receiver: "b".into(),
            t0: 7.5,
            t1: 11.0,
        }];
        let r = match_passes(&detected, &truth, 2.0, &agents());
        assert_eq!(r.pass_f1, 0.0);
    }
}
