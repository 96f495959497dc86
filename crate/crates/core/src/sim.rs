//! Deterministic scripted-match generator.
//!
//! Players wander on smoothstep-interpolated waypoints around formation
//! anchors; the ball sticks to its controller during control and flies in a
//! straight constant-speed segment between touch anchors. Receivers hold
//! position while a pass is in flight, so flights end exactly on the
//! receiver. Possession labels follow the next-controller rule: they flip
//! to the receiver immediately after release.
//!
//! Pass flights are kept faster than 20.5 m/s so that a perfect possession
//! score (probability one divided by ball distance) crosses the 0.5 touch
//! threshold only at the arrival frame; this keeps the generator an exact
//! oracle for the rule-based postprocessing. Out-balls are aimed at the
//! pitch-line midpoints where the ball-out pseudo-agents sit.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::pipeline::{attach_kinematics, segment_episodes, KinematicsConfig};
use crate::types::{
    AgentSet, Episode, EventRecord, EventType, PitchConfig, PlayerState, Team, TrackingFrame,
    FRAME_DT,
};

/// Slowest admissible pass flight (m/s); see the module docs.
pub const FLIGHT_SPEED_MIN: f64 = 20.5;
/// Fastest admissible pass flight (m/s).
pub const FLIGHT_SPEED_MAX: f64 = 60.0;
/// Seconds the restart taker controls the ball before the throw-in pass.
const RESTART_CONTROL: f64 = 1.0;

/// One scripted pass. `flight_duration = None` picks the fastest on-grid
/// duration at roughly 25 m/s. A receiver naming a ball-out pseudo-agent
/// kicks the ball out over that line.
#[derive(Debug, Clone)]
pub struct PassPlanEntry {
    pub passer: String,
    pub receiver: String,
    pub kick_time: f64,
    pub flight_duration: Option<f64>,
}

/// A deterministic scenario specification.
#[derive(Debug, Clone)]
pub struct MatchScript {
    pub name: String,
    pub seed: u64,
    pub players_per_team: usize,
    /// Total simulated span in seconds (frames at 10 Hz).
    pub duration: f64,
    pub pitch: PitchConfig,
    pub kickoff_player: String,
    pub passes: Vec<PassPlanEntry>,
    /// Waypoint jitter radius around each player's formation anchor, m.
    pub wander_radius: f64,
    pub max_player_speed: f64,
}

impl MatchScript {
    fn basic(name: &str, seed: u64, players_per_team: usize, duration: f64) -> Self {
        MatchScript {
            name: name.to_string(),
            seed,
            players_per_team,
            duration,
            pitch: PitchConfig::default(),
            kickoff_player: "h1".into(),
            passes: Vec::new(),
            wander_radius: 4.0,
            max_player_speed: 8.0,
        }
    }
}

/// A scripted ground-truth pass (player to player).
#[derive(Debug, Clone, PartialEq)]
pub struct SimPass {
    pub passer: String,
    pub receiver: String,
    pub kick_time: f64,
    pub arrival_time: f64,
}

/// Everything a generated match knows about itself.
pub struct SimMatch {
    pub script: MatchScript,
    pub agents: AgentSet,
    /// Full frame stream including out-of-play frames; `ball` carries the
    /// simulated ball position.
    pub frames: Vec<TrackingFrame>,
    pub events: Vec<EventRecord>,
    /// In-play episodes with kinematic features attached.
    pub episodes: Vec<Episode>,
    /// Per-episode true ball path `[T, 2]` from the simulator itself.
    pub ball_truth: Vec<Array2<f64>>,
    /// Per-episode possession labels (class indices).
    pub labels: Vec<Vec<usize>>,
    /// Scripted player-to-player passes (ground truth for annotation).
    pub pass_plan: Vec<SimPass>,
}

fn grid_index(time: f64) -> Result<usize> {
    let k = time / FRAME_DT;
    if (k - k.round()).abs() > 1e-6 || time < -1e-9 {
        return Err(Error::Script(format!(
            "time {time} does not sit on the 0.1 s grid"
        )));
    }
    Ok(k.round() as usize)
}

fn smoothstep(u: f64) -> f64 {
    let u = u.clamp(0.0, 1.0);
    u * u * (3.0 - 2.0 * u)
}

/// Deterministic waypoint path of one player.
struct PlayerPath {
    waypoints: Vec<(f64, f64)>,
    interval: f64,
}

impl PlayerPath {
    fn new(
        anchor: (f64, f64),
        radius: f64,
        duration: f64,
        pitch: PitchConfig,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let interval = 3.0;
        let count = (duration / interval).ceil() as usize + 2;
        let waypoints = (0..count)
            .map(|_| {
                let x = (anchor.0 + rng.random_range(-radius..=radius))
                    .clamp(1.0, pitch.length - 1.0);
                let y = (anchor.1 + rng.random_range(-radius..=radius))
                    .clamp(1.0, pitch.width - 1.0);
                (x, y)
            })
            .collect();
        PlayerPath {
            waypoints,
            interval,
        }
    }

    fn base_pos(&self, t: f64) -> (f64, f64) {
        let seg = (t / self.interval).floor().max(0.0) as usize;
        let seg = seg.min(self.waypoints.len() - 2);
        let u = smoothstep((t - seg as f64 * self.interval) / self.interval);
        let (a, b) = (self.waypoints[seg], self.waypoints[seg + 1]);
        (a.0 + u * (b.0 - a.0), a.1 + u * (b.1 - a.1))
    }
}

/// Ball-control timeline segments over frame indices (inclusive bounds).
enum Segment {
    /// `player` holds the ball over frames `[start, end]`.
    Control {
        class: usize,
        start: usize,
        end: usize,
    },
    /// The ball flies from `from_pos` (frame `start`) toward the agent
    /// `class`, arriving at frame `end`.
    Flight {
        class: usize,
        start: usize,
        end: usize,
    },
    /// Dead ball resting at a line midpoint over `(start, end)` exclusive.
    OutPause {
        class: usize,
        start: usize,
        end: usize,
    },
}

/// Run a script into frames, events, episodes and ground truth.
pub fn generate_match(script: &MatchScript) -> Result<SimMatch> {
    let n = script.players_per_team;
    if n == 0 {
        return Err(Error::Script("need at least one player per team".into()));
    }
    let pitch = script.pitch;
    let team1: Vec<String> = (1..=n).map(|i| format!("h{i}")).collect();
    let team2: Vec<String> = (1..=n).map(|i| format!("a{i}")).collect();
    let agents = AgentSet::new(team1.clone(), team2.clone(), pitch)?;
    let total_frames = grid_index(script.duration)? + 1;

    // formation anchors: a 4-row grid on each half, mirrored for team 2
    let anchor = |slot: usize, team: Team| -> (f64, f64) {
        let row = slot % 4;
        let col = slot / 4;
        let x = pitch.length * (0.12 + 0.16 * col as f64);
        let y = pitch.width * (row as f64 + 1.0) / 5.0;
        match team {
            Team::Team1 => (x, y),
            Team::Team2 => (pitch.length - x, y),
        }
    };

    let mut rng = ChaCha8Rng::seed_from_u64(script.seed);
    let mut paths: Vec<PlayerPath> = Vec::new();
    for slot in 0..n {
        paths.push(PlayerPath::new(
            anchor(slot, Team::Team1),
            script.wander_radius,
            script.duration,
            pitch,
            &mut rng,
        ));
    }
    for slot in 0..n {
        paths.push(PlayerPath::new(
            anchor(slot, Team::Team2),
            script.wander_radius,
            script.duration,
            pitch,
            &mut rng,
        ));
    }

    // freeze intervals per player (receivers hold still during flights);
    // resolved iteratively with pass validation below
    let mut freezes: Vec<Vec<(f64, f64)>> = vec![Vec::new(); 2 * n];
    let effective_time = |freezes: &[(f64, f64)], t: f64| -> f64 {
        let mut eff = t;
        for (a, b) in freezes {
            if t > *a {
                eff -= (t.min(*b) - *a).max(0.0);
            }
        }
        eff
    };
    let pos_of = |freezes: &Vec<Vec<(f64, f64)>>, class: usize, t: f64| -> (f64, f64) {
        paths[class].base_pos(effective_time(&freezes[class], t))
    };

    // build the control timeline
    let mut segments: Vec<Segment> = Vec::new();
    let mut pass_plan: Vec<SimPass> = Vec::new();
    let mut controller = agents
        .class_of(&script.kickoff_player)
        .ok_or_else(|| Error::Script(format!("unknown kickoff player {}", script.kickoff_player)))?;
    if agents.is_ball_out(controller) {
        return Err(Error::Script("kickoff player cannot be a pseudo-agent".into()));
    }
    let mut control_start = 0usize;

    let mut i = 0usize;
    while i < script.passes.len() {
        let pass = &script.passes[i];
        let kick = grid_index(pass.kick_time)?;
        if kick >= total_frames {
            return Err(Error::Script(format!(
                "kick at {}s is outside the match",
                pass.kick_time
            )));
        }
        if kick < control_start {
            return Err(Error::Script(format!(
                "pass at {}s overlaps the previous flight",
                pass.kick_time
            )));
        }
        let passer = agents
            .class_of(&pass.passer)
            .ok_or_else(|| Error::Script(format!("unknown passer {}", pass.passer)))?;
        if passer != controller {
            return Err(Error::Script(format!(
                "{} kicks at {}s but {} controls the ball",
                pass.passer,
                pass.kick_time,
                agents.id_of(controller).unwrap()
            )));
        }
        let receiver = agents
            .class_of(&pass.receiver)
            .ok_or_else(|| Error::Script(format!("unknown receiver {}", pass.receiver)))?;

        // the kick position follows the passer, the target is the (frozen)
        // receiver or a line midpoint
        let kick_pos = pos_of(&freezes, passer, kick as f64 * FRAME_DT);
        let target = if agents.is_ball_out(receiver) {
            agents.ball_out_positions()[receiver - 2 * n]
        } else {
            pos_of(&freezes, receiver, kick as f64 * FRAME_DT)
        };
        let dist = ((target.0 - kick_pos.0).powi(2) + (target.1 - kick_pos.1).powi(2)).sqrt();
        let duration = match pass.flight_duration {
            Some(d) => d,
            None => ((dist / 25.0 / FRAME_DT).floor() * FRAME_DT).max(FRAME_DT),
        };
        let flight_frames = grid_index(duration)?;
        if flight_frames == 0 {
            return Err(Error::Script("flight must last at least one frame".into()));
        }
        let speed = dist / duration;
        if !(FLIGHT_SPEED_MIN..=FLIGHT_SPEED_MAX).contains(&speed) {
            return Err(Error::Script(format!(
                "pass from {} at {}s flies {dist:.2} m in {duration:.1}s ({speed:.1} m/s); \
                 admissible range is {FLIGHT_SPEED_MIN}..{FLIGHT_SPEED_MAX} m/s",
                pass.passer, pass.kick_time
            )));
        }
        let arrival = kick + flight_frames;
        if arrival >= total_frames {
            return Err(Error::Script(format!(
                "pass at {}s arrives after the match ends",
                pass.kick_time
            )));
        }

        segments.push(Segment::Control {
            class: controller,
            start: control_start,
            end: kick,
        });
        segments.push(Segment::Flight {
            class: receiver,
            start: kick,
            end: arrival,
        });

        if agents.is_ball_out(receiver) {
            // play pauses until the next pass's taker restarts
            let restart = match script.passes.get(i + 1) {
                Some(next) => {
                    let next_kick = grid_index(next.kick_time)?;
                    let restart = next_kick
                        .checked_sub(grid_index(RESTART_CONTROL)?)
                        .unwrap_or(0);
                    if restart <= arrival + 1 {
                        return Err(Error::Script(format!(
                            "restart pass at {}s follows the out-ball too closely",
                            next.kick_time
                        )));
                    }
                    let taker = agents.class_of(&next.passer).ok_or_else(|| {
                        Error::Script(format!("unknown restart taker {}", next.passer))
                    })?;
                    controller = taker;
                    restart
                }
                None => total_frames, // dead until the end
            };
            segments.push(Segment::OutPause {
                class: receiver,
                start: arrival,
                end: restart.min(total_frames),
            });
            control_start = restart.min(total_frames);
        } else {
            // receiver stands still while the ball is in the air
            freezes[receiver].push((kick as f64 * FRAME_DT, arrival as f64 * FRAME_DT));
            pass_plan.push(SimPass {
                passer: pass.passer.clone(),
                receiver: pass.receiver.clone(),
                kick_time: kick as f64 * FRAME_DT,
                arrival_time: arrival as f64 * FRAME_DT,
            });
            controller = receiver;
            control_start = arrival;
        }
        i += 1;
    }
    if control_start < total_frames {
        segments.push(Segment::Control {
            class: controller,
            start: control_start,
            end: total_frames - 1,
        });
    }

    // materialize frames, ball positions, in-play flags and anchors
    let mut ball = vec![(0.0f64, 0.0f64); total_frames];
    let mut in_play = vec![true; total_frames];
    let mut anchor_class: Vec<Option<usize>> = vec![None; total_frames];
    let mut events: Vec<EventRecord> = Vec::new();

    for seg in &segments {
        match *seg {
            Segment::Control { class, start, end } => {
                for k in start..=end.min(total_frames - 1) {
                    ball[k] = pos_of(&freezes, class, k as f64 * FRAME_DT);
                    anchor_class[k] = Some(class);
                }
                events.push(EventRecord {
                    time: start as f64 * FRAME_DT,
                    player_id: agents.id_of(class).unwrap().to_string(),
                    event_type: EventType::Touch,
                    end_time: Some(end as f64 * FRAME_DT),
                });
            }
            Segment::Flight { class, start, end } => {
                let from = ball[start];
                let to = if agents.is_ball_out(class) {
                    agents.ball_out_positions()[class - 2 * n]
                } else {
                    pos_of(&freezes, class, end as f64 * FRAME_DT)
                };
                for k in start + 1..end {
                    let w = (k - start) as f64 / (end - start) as f64;
                    ball[k] = (from.0 + w * (to.0 - from.0), from.1 + w * (to.1 - from.1));
                }
                if agents.is_ball_out(class) {
                    ball[end] = to;
                    anchor_class[end] = Some(class);
                }
            }
            Segment::OutPause { class, start, end } => {
                let rest = agents.ball_out_positions()[class - 2 * n];
                for k in start + 1..end.min(total_frames) {
                    ball[k] = rest;
                    in_play[k] = false;
                }
                events.push(EventRecord {
                    time: start as f64 * FRAME_DT,
                    player_id: agents.id_of(class).unwrap().to_string(),
                    event_type: EventType::Out,
                    end_time: Some(end.min(total_frames) as f64 * FRAME_DT),
                });
            }
        }
    }

    let mut frames = Vec::with_capacity(total_frames);
    for k in 0..total_frames {
        let t = k as f64 * FRAME_DT;
        let mut players = Vec::with_capacity(2 * n);
        for (slot, id) in team1.iter().enumerate() {
            let (x, y) = pos_of(&freezes, slot, t);
            players.push(PlayerState::at(id.clone(), Team::Team1, x, y));
        }
        for (slot, id) in team2.iter().enumerate() {
            let (x, y) = pos_of(&freezes, n + slot, t);
            players.push(PlayerState::at(id.clone(), Team::Team2, x, y));
        }
        frames.push(TrackingFrame {
            time: t,
            players,
            ball: Some(ball[k]),
            in_play: in_play[k],
        });
    }

    // per-frame labels: the next controller (or out state) at or after t
    let mut labels_all = vec![0usize; total_frames];
    let mut next_anchor = *anchor_class
        .iter()
        .rev()
        .find(|a| a.is_some())
        .ok_or_else(|| Error::Script("script produces no ball contact".into()))?;
    for k in (0..total_frames).rev() {
        if anchor_class[k].is_some() {
            next_anchor = anchor_class[k];
        }
        labels_all[k] = next_anchor.unwrap();
    }

    let mut episodes = segment_episodes(&frames, &[], &script.name);
    let mut ball_truth = Vec::with_capacity(episodes.len());
    let mut labels = Vec::with_capacity(episodes.len());
    for ep in episodes.iter_mut() {
        attach_kinematics(ep, KinematicsConfig::default())?;
        let t = ep.len();
        let mut truth = Array2::<f64>::zeros((t, 2));
        let mut lab = vec![0usize; t];
        for (row, frame) in ep.frames.iter().enumerate() {
            let k = grid_index(frame.time)?;
            truth[[row, 0]] = ball[k].0;
            truth[[row, 1]] = ball[k].1;
            lab[row] = labels_all[k];
        }
        ball_truth.push(truth);
        labels.push(lab);
    }

    // player speeds never exceed the configured maximum
    for ep in &episodes {
        for pair in ep.frames.windows(2) {
            for p in &pair[0].players {
                let q = pair[1].player(&p.player_id).unwrap();
                let step = ((q.x - p.x).powi(2) + (q.y - p.y).powi(2)).sqrt();
                if step > script.max_player_speed * FRAME_DT + 1e-9 {
                    return Err(Error::Script(format!(
                        "player {} moves {step:.2} m in one frame",
                        p.player_id
                    )));
                }
            }
        }
    }

    Ok(SimMatch {
        script: script.clone(),
        agents,
        frames,
        events,
        episodes,
        ball_truth,
        labels,
        pass_plan,
    })
}

/// Named desk-scale scenarios used as test oracles.
pub fn script_library() -> Vec<MatchScript> {
    let mut out = Vec::new();

    // one player carries the ball for the whole span
    let single = MatchScript::basic("single-carrier", 11, 2, 20.0);
    out.push(single);

    // two midfielders exchanging wall passes
    let mut wall = MatchScript::basic("wall-pass", 23, 2, 30.0);
    wall.kickoff_player = "h2".into();
    for (k, t) in (0..6).map(|k| (k, 3.0 + 4.0 * k as f64)) {
        let (from, to) = if k % 2 == 0 { ("h2", "a1") } else { ("a1", "h2") };
        wall.passes.push(PassPlanEntry {
            passer: from.into(),
            receiver: to.into(),
            kick_time: t,
            flight_duration: None,
        });
    }
    out.push(wall);

    // full 11v11 circulation across both teams
    let mut big = MatchScript::basic("circulation-11v11", 37, 11, 44.0);
    big.kickoff_player = "h1".into();
    let chain = [
        "h1", "h6", "h11", "a3", "a8", "h2", "h7", "a1", "a10", "h5",
    ];
    for (k, pair) in chain.windows(2).enumerate() {
        big.passes.push(PassPlanEntry {
            passer: pair[0].into(),
            receiver: pair[1].into(),
            kick_time: 3.0 + 4.0 * k as f64,
            flight_duration: None,
        });
    }
    out.push(big);

    // one-touch chain: static players, immediate relays
    let mut chain = MatchScript::basic("one-touch-chain", 41, 4, 20.0);
    chain.wander_radius = 0.0;
    chain.kickoff_player = "h1".into();
    chain.passes = vec![
        PassPlanEntry {
            passer: "h1".into(),
            receiver: "h2".into(),
            kick_time: 4.0,
            flight_duration: None,
        },
        // h2 and then h3 relay the ball on in a single frame
        PassPlanEntry {
            passer: "h2".into(),
            receiver: "h3".into(),
            kick_time: 0.0, // patched below to the arrival frame
            flight_duration: None,
        },
        PassPlanEntry {
            passer: "h3".into(),
            receiver: "h4".into(),
            kick_time: 0.0, // patched below
            flight_duration: None,
        },
    ];
    // arrival times depend on the frozen geometry; resolve them by probing
    resolve_one_touch_times(&mut chain);
    out.push(chain);

    // an out-ball over the right goal line with a restart
    let mut oob = MatchScript::basic("out-of-bounds", 53, 3, 30.0);
    oob.kickoff_player = "a2".into();
    oob.passes = vec![
        PassPlanEntry {
            passer: "a2".into(),
            receiver: "out_right".into(),
            kick_time: 5.0,
            flight_duration: None,
        },
        PassPlanEntry {
            passer: "h3".into(),
            receiver: "h1".into(),
            kick_time: 12.0,
            flight_duration: None,
        },
    ];
    out.push(oob);

    // cross-field long balls, 4v4
    let mut long = MatchScript::basic("crossfield-4v4", 67, 4, 32.0);
    long.kickoff_player = "h4".into();
    let legs = [("h4", "a4"), ("a4", "h1"), ("h1", "a2"), ("a2", "h3")];
    for (k, (from, to)) in legs.iter().enumerate() {
        long.passes.push(PassPlanEntry {
            passer: (*from).into(),
            receiver: (*to).into(),
            kick_time: 4.0 + 6.0 * k as f64,
            flight_duration: None,
        });
    }
    out.push(long);

    out
}

/// Fix up the one-touch chain so every relay kicks on the arrival frame of
/// the previous pass (ground-truth control intervals of a single frame).
fn resolve_one_touch_times(script: &mut MatchScript) {
    // static players: distances are the anchor distances, so flights are
    // reproducible; probe pass-by-pass
    let mut kick = script.passes[0].kick_time;
    for i in 0..script.passes.len() {
        script.passes[i].kick_time = kick;
        let mut probe = script.clone();
        probe.passes.truncate(i + 1);
        let sim = generate_match(&probe).expect("one-touch probe script is feasible");
        let arrival = sim
            .pass_plan
            .last()
            .expect("probe ends with a player-to-player pass")
            .arrival_time;
        kick = arrival;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::reality_metric;
    use crate::pipeline::reconstruct_ball_truth;
    use ndarray::Array3;

    fn episode_player_positions(ep: &Episode) -> Array3<f64> {
        let t = ep.len();
        let p = ep.frames[0].players.len();
        let mut out = Array3::zeros((t, p, 2));
        for (i, frame) in ep.frames.iter().enumerate() {
            for (j, player) in frame.players.iter().enumerate() {
                out[[i, j, 0]] = player.x;
                out[[i, j, 1]] = player.y;
            }
        }
        out
    }

    #[test]
    fn generation_is_deterministic() {
        let script = &script_library()[1];
        let a = generate_match(script).unwrap();
        let b = generate_match(script).unwrap();
        assert_eq!(a.frames.len(), b.frames.len());
        for (fa, fb) in a.frames.iter().zip(&b.frames) {
            assert_eq!(fa.ball, fb.ball);
            for (pa, pb) in fa.players.iter().zip(&fb.players) {
                assert_eq!((pa.x, pa.y), (pb.x, pb.y));
            }
        }
        assert_eq!(a.pass_plan, b.pass_plan);
    }

    #[test]
    fn library_has_the_required_scenarios() {
        let lib = script_library();
        assert!(lib.len() >= 5);
        for script in &lib {
            let sim = generate_match(script).expect(&script.name);
            assert!(!sim.episodes.is_empty(), "{} has no episodes", script.name);
        }

        // the out-of-bounds scenario labels at least one frame with a
        // pseudo-agent and yields two episodes
        let oob = lib.iter().find(|s| s.name == "out-of-bounds").unwrap();
        let sim = generate_match(oob).unwrap();
        assert_eq!(sim.episodes.len(), 2);
        let n = sim.agents.n();
        let has_p0 = sim
            .labels
            .iter()
            .flatten()
            .any(|&q| q >= 2 * n);
        assert!(has_p0, "no ball-out possession label");

        // the one-touch chain has a ground-truth control interval < 0.3 s
        let chain = lib.iter().find(|s| s.name == "one-touch-chain").unwrap();
        let sim = generate_match(chain).unwrap();
        let labels = &sim.labels[0];
        let h2 = sim.agents.class_of("h2").unwrap();
        let truth = &sim.ball_truth[0];
        let ep = &sim.episodes[0];
        // frames where h2 actually holds the ball (distance zero)
        let holding: Vec<usize> = (0..ep.len())
            .filter(|&i| {
                let p = ep.frames[i].player("h2").unwrap();
                let d = ((truth[[i, 0]] - p.x).powi(2) + (truth[[i, 1]] - p.y).powi(2)).sqrt();
                d < 1e-9 && labels[i] == h2
            })
            .collect();
        assert!(!holding.is_empty());
        assert!(
            holding.len() as f64 * FRAME_DT < 0.3,
            "one-touch control lasts {} frames",
            holding.len()
        );
    }

    #[test]
    fn reality_loss_of_generated_truth_is_negligible() {
        for script in script_library() {
            let sim = generate_match(&script).unwrap();
            for (ep, truth) in sim.episodes.iter().zip(&sim.ball_truth) {
                if ep.len() < 3 {
                    continue;
                }
                let players = episode_player_positions(ep);
                let rl = reality_metric(truth, &players).unwrap();
                assert!(
                    rl.abs() < 1e-6,
                    "{}: reality loss {rl} on ground truth",
                    script.name
                );
            }
        }
    }

    #[test]
    fn reconstruction_round_trips_the_simulated_ball() {
        for script in script_library() {
            let sim = generate_match(&script).unwrap();
            for (k, ep) in sim.episodes.iter().enumerate() {
                let events = crate::pipeline::events_in_episode(ep, &sim.events);
                let (ball, labels) =
                    reconstruct_ball_truth(ep, &events, &sim.agents).unwrap();
                let truth = &sim.ball_truth[k];
                let mut worst = 0.0f64;
                for i in 0..ep.len() {
                    worst = worst
                        .max((ball[[i, 0]] - truth[[i, 0]]).abs())
                        .max((ball[[i, 1]] - truth[[i, 1]]).abs());
                }
                assert!(
                    worst < 1e-6,
                    "{} episode {k}: reconstruction differs by {worst}",
                    script.name
                );
                assert_eq!(&labels, &sim.labels[k], "{} episode {k}", script.name);
            }
        }
    }

    #[test]
    fn player_speeds_respect_the_cap() {
        let sim = generate_match(&script_library()[2]).unwrap();
        for ep in &sim.episodes {
            for pair in ep.frames.windows(2) {
                for p in &pair[0].players {
                    let q = pair[1].player(&p.player_id).unwrap();
                    let v = ((q.x - p.x).powi(2) + (q.y - p.y).powi(2)).sqrt() / FRAME_DT;
                    assert!(v <= sim.script.max_player_speed + 1e-6);
                }
            }
        }
    }

    #[test]
    fn infeasible_passes_are_rejected()  {
        let mut script = MatchScript::basic("bad", 1, 2, 10.0);
        script.passes.push(PassPlanEntry {
            passer: "h1".into(),
            receiver: "h2".into(),
            kick_time: 2.0,
            flight_duration: Some(8.0), // far too slow
        });
        assert!(matches!(
            generate_match(&script),
            Err(Error::Script(_))
        ));
    }
}
