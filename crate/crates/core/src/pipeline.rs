//! Tracking-data pipeline: resampling to the 10 Hz grid, kinematic feature
//! derivation, episode segmentation, ground-truth ball reconstruction from
//! touch events, window construction, flip augmentation and ball masking.
//!
//! Every function is a pure function of its inputs; callers are free to
//! process episodes and windows in parallel.

use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::types::{
    AgentSet, Episode, EventRecord, EventType, PlayerState, TrackingFrame, Window, FRAME_DT,
};

/// Differentiation settings for velocity/speed/acceleration features.
#[derive(Debug, Clone, Copy)]
pub struct KinematicsConfig {
    pub dt: f64,
    /// Centered moving-average width (frames) applied to velocity before
    /// speed and acceleration; 1 disables smoothing.
    pub smooth_window: usize,
}

impl Default for KinematicsConfig {
    fn default() -> Self {
        KinematicsConfig {
            dt: FRAME_DT,
            smooth_window: 5,
        }
    }
}

/// Per-frame kinematic features of one track.
#[derive(Debug, Clone)]
pub struct Kinematics {
    pub vx: Vec<f64>,
    pub vy: Vec<f64>,
    pub speed: Vec<f64>,
    pub accel: Vec<f64>,
}

/// Linear interpolation of irregular frames onto a uniform `dst_hz` grid
/// anchored at the first frame. Player positions are interpolated per id;
/// players absent from either bracketing frame are dropped for that grid
/// frame. A grid frame is in play only when both brackets are.
pub fn resample(
    frames: &[TrackingFrame],
    src_hz: f64,
    dst_hz: f64,
) -> Result<Vec<TrackingFrame>> {
    if src_hz <= 0.0 || dst_hz <= 0.0 {
        return Err(Error::Config(format!(
            "sample rates must be positive, got {src_hz} -> {dst_hz}"
        )));
    }
    if frames.is_empty() {
        return Ok(Vec::new());
    }
    let t0 = frames[0].time;
    let t_end = frames[frames.len() - 1].time;
    let dt = 1.0 / dst_hz;
    let steps = ((t_end - t0) / dt + 1e-9).floor() as usize;
    let mut out = Vec::with_capacity(steps + 1);
    let mut hi = 0usize;
    for k in 0..=steps {
        let t = t0 + k as f64 * dt;
        while hi + 1 < frames.len() && frames[hi + 1].time < t - 1e-9 {
            hi += 1;
        }
        let (a, b) = if frames[hi].time >= t - 1e-9 {
            (&frames[hi], &frames[hi])
        } else {
            (&frames[hi], &frames[(hi + 1).min(frames.len() - 1)])
        };
        let w = if (b.time - a.time).abs() < 1e-12 {
            0.0
        } else {
            ((t - a.time) / (b.time - a.time)).clamp(0.0, 1.0)
        };
        let mut players = Vec::with_capacity(a.players.len());
        for pa in &a.players {
            if let Some(pb) = b.player(&pa.player_id) {
                players.push(PlayerState::at(
                    pa.player_id.clone(),
                    pa.team,
                    pa.x + w * (pb.x - pa.x),
                    pa.y + w * (pb.y - pa.y),
                ));
            }
        }
        let ball = match (a.ball, b.ball) {
            (Some(ba), Some(bb)) => Some((ba.0 + w * (bb.0 - ba.0), ba.1 + w * (bb.1 - ba.1))),
            _ => None,
        };
        out.push(TrackingFrame {
            time: t,
            players,
            ball,
            in_play: a.in_play && b.in_play,
        });
    }
    Ok(out)
}

/// Central-difference velocity (one-sided at the ends), a centered moving
/// average on the velocity, speed as its norm, and acceleration as the same
/// difference scheme applied to speed.
pub fn derive_kinematics(
    positions: &Array2<f64>,
    cfg: KinematicsConfig,
) -> Result<Kinematics> {
    let t = positions.shape()[0];
    if t < 2 {
        return Err(Error::InsufficientData(format!(
            "kinematics need at least 2 frames, got {t}"
        )));
    }
    if positions.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite positions".into()));
    }
    let dt = cfg.dt;
    let diff = |series: &dyn Fn(usize) -> f64, i: usize| -> f64 {
        if i == 0 {
            (series(1) - series(0)) / dt
        } else if i == t - 1 {
            (series(t - 1) - series(t - 2)) / dt
        } else {
            (series(i + 1) - series(i - 1)) / (2.0 * dt)
        }
    };
    let x = |i: usize| positions[[i, 0]];
    let y = |i: usize| positions[[i, 1]];
    let mut vx: Vec<f64> = (0..t).map(|i| diff(&x, i)).collect();
    let mut vy: Vec<f64> = (0..t).map(|i| diff(&y, i)).collect();
    if cfg.smooth_window > 1 {
        vx = moving_average(&vx, cfg.smooth_window);
        vy = moving_average(&vy, cfg.smooth_window);
    }
    let speed: Vec<f64> = vx
        .iter()
        .zip(&vy)
        .map(|(a, b)| (a * a + b * b).sqrt())
        .collect();
    let sp = |i: usize| speed[i];
    let accel: Vec<f64> = (0..t).map(|i| diff(&sp, i)).collect();
    Ok(Kinematics {
        vx,
        vy,
        speed,
        accel,
    })
}

/// Centered moving average with edge truncation.
fn moving_average(series: &[f64], window: usize) -> Vec<f64> {
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

/// Fill velocity/speed/acceleration for every player track of an episode.
/// Tracks are differentiated over each player's contiguous presence span.
pub fn attach_kinematics(episode: &mut Episode, cfg: KinematicsConfig) -> Result<()> {
    let t = episode.len();
    if t == 0 {
        return Ok(());
    }
    let mut ids: Vec<String> = Vec::new();
    for frame in &episode.frames {
        for p in &frame.players {
            if !ids.contains(&p.player_id) {
                ids.push(p.player_id.clone());
            }
        }
    }
    for id in ids {
        let present: Vec<usize> = (0..t)
            .filter(|&i| episode.frames[i].player(&id).is_some())
            .collect();
        for span in contiguous_spans(&present) {
            if span.len() < 2 {
                continue;
            }
            let mut pos = Array2::zeros((span.len(), 2));
            for (row, &fi) in span.iter().enumerate() {
                let p = episode.frames[fi].player(&id).unwrap();
                pos[[row, 0]] = p.x;
                pos[[row, 1]] = p.y;
            }
            let kin = derive_kinematics(&pos, cfg)?;
            for (row, &fi) in span.iter().enumerate() {
                let p = episode.frames[fi]
                    .players
                    .iter_mut()
                    .find(|p| p.player_id == id)
                    .unwrap();
                p.vx = kin.vx[row];
                p.vy = kin.vy[row];
                p.speed = kin.speed[row];
                p.accel = kin.accel[row];
            }
        }
    }
    Ok(())
}

fn contiguous_spans(indices: &[usize]) -> Vec<Vec<usize>> {
    let mut spans: Vec<Vec<usize>> = Vec::new();
    for &i in indices {
        match spans.last_mut() {
            Some(span) if *span.last().unwrap() + 1 == i => span.push(i),
            _ => spans.push(vec![i]),
        }
    }
    spans
}

/// Apply out-of-play intervals from OUT events, then split the stream into
/// maximal in-play runs on the uniform grid. Out-of-play frames are
/// discarded. An OUT event without an end time suspends play until the next
/// event, or to the end of the stream when it is the last event.
pub fn segment_episodes(
    frames: &[TrackingFrame],
    events: &[EventRecord],
    match_id: &str,
) -> Vec<Episode> {
    let mut frames: Vec<TrackingFrame> = frames.to_vec();
    let mut sorted: Vec<&EventRecord> = events.iter().collect();
    sorted.sort_by(|a, b| a.time.total_cmp(&b.time));
    for (i, ev) in sorted.iter().enumerate() {
        if ev.event_type != EventType::Out {
            continue;
        }
        let until = ev.end_time.or_else(|| {
            sorted
                .get(i + 1)
                .map(|next| next.time)
        });
        for frame in frames.iter_mut() {
            let after = frame.time > ev.time + 1e-9;
            let before = match until {
                Some(u) => frame.time < u - 1e-9,
                None => true,
            };
            if after && before {
                frame.in_play = false;
            }
        }
    }

    let mut episodes = Vec::new();
    let mut current: Vec<TrackingFrame> = Vec::new();
    let flush = |current: &mut Vec<TrackingFrame>, episodes: &mut Vec<Episode>| {
        if !current.is_empty() {
            let id = format!("{match_id}-ep{}", episodes.len());
            let ep = Episode::new(id, std::mem::take(current))
                .expect("segmented frames satisfy episode invariants");
            episodes.push(ep);
        }
    };
    for frame in frames {
        if !frame.in_play {
            flush(&mut current, &mut episodes);
            continue;
        }
        if let Some(last) = current.last() {
            if (frame.time - last.time - FRAME_DT).abs() > 1e-6 {
                flush(&mut current, &mut episodes);
            }
        }
        current.push(frame);
    }
    flush(&mut current, &mut episodes);
    episodes
}

/// Events relevant to an episode: ball-contact events whose time falls in
/// the episode span, time-sorted.
pub fn events_in_episode(episode: &Episode, events: &[EventRecord]) -> Vec<EventRecord> {
    if episode.is_empty() {
        return Vec::new();
    }
    let start = episode.start_time() - 1e-9;
    let end = episode.frames.last().unwrap().time + 1e-9;
    let mut out: Vec<EventRecord> = events
        .iter()
        .filter(|e| e.time >= start && e.time <= end)
        .filter(|e| {
            matches!(
                e.event_type,
                EventType::Touch | EventType::Pass | EventType::Out
            )
        })
        .cloned()
        .collect();
    out.sort_by(|a, b| a.time.total_cmp(&b.time));
    out
}

/// Reconstruct the ground-truth ball track and possession labels of an
/// episode from annotated touch events.
///
/// At each touched frame the ball sits on the touching agent; unassigned
/// intervals are filled by linear interpolation between the surrounding
/// anchors (constant extrapolation before the first and after the last).
/// The possession label is the current controller while the ball is held
/// and the next controller while it travels: it flips immediately after
/// release.
pub fn reconstruct_ball_truth(
    episode: &Episode,
    events: &[EventRecord],
    agents: &AgentSet,
) -> Result<(Array2<f64>, Vec<usize>)> {
    let t = episode.len();
    if t == 0 {
        return Err(Error::InsufficientData("empty episode".into()));
    }
    // (frame, class) anchors in time order
    let mut anchors: Vec<(usize, usize)> = Vec::new();
    let mut sorted: Vec<&EventRecord> = events.iter().collect();
    sorted.sort_by(|a, b| a.time.total_cmp(&b.time));
    for ev in sorted {
        let class = agents.class_of(&ev.player_id).ok_or_else(|| {
            Error::Label(format!("event player {} not in roster", ev.player_id))
        })?;
        let first = episode.frame_index(ev.time).ok_or_else(|| {
            Error::Label(format!(
                "event at {:.3}s outside episode {}",
                ev.time, episode.episode_id
            ))
        })?;
        // An OUT event's end time marks the restart of play, not a carry.
        let last = match (ev.event_type, ev.end_time) {
            (EventType::Out, _) | (_, None) => first,
            (_, Some(end)) => episode.frame_index(end).ok_or_else(|| {
                Error::Label(format!(
                    "event end at {end:.3}s outside episode {}",
                    episode.episode_id
                ))
            })?,
        };
        for frame in first..=last.max(first) {
            anchors.push((frame, class));
        }
    }
    if anchors.is_empty() {
        return Err(Error::Label(format!(
            "no touch events inside episode {}",
            episode.episode_id
        )));
    }
    anchors.sort_by_key(|(frame, _)| *frame);
    anchors.dedup_by_key(|(frame, _)| *frame);

    let agent_pos = |frame: usize, class: usize| -> (f64, f64) {
        if agents.is_ball_out(class) {
            agents.ball_out_positions()[class - 2 * agents.n()]
        } else {
            let id = agents.id_of(class).unwrap();
            let p = episode.frames[frame]
                .player(id)
                .unwrap_or_else(|| panic!("player {id} missing at frame {frame}"));
            (p.x, p.y)
        }
    };

    let mut ball = Array2::<f64>::zeros((t, 2));
    let mut labels = vec![0usize; t];

    // positions: anchored frames, then linear interpolation between anchors
    for (k, &(frame, class)) in anchors.iter().enumerate() {
        let (x, y) = agent_pos(frame, class);
        ball[[frame, 0]] = x;
        ball[[frame, 1]] = y;
        if k + 1 < anchors.len() {
            let (nf, nc) = anchors[k + 1];
            let (nx, ny) = agent_pos(nf, nc);
            for f in frame + 1..nf {
                let w = (f - frame) as f64 / (nf - frame) as f64;
                ball[[f, 0]] = x + w * (nx - x);
                ball[[f, 1]] = y + w * (ny - y);
            }
        }
    }
    let (first_frame, first_class) = anchors[0];
    let (fx, fy) = agent_pos(first_frame, first_class);
    for f in 0..first_frame {
        ball[[f, 0]] = fx;
        ball[[f, 1]] = fy;
    }
    let (last_frame, last_class) = *anchors.last().unwrap();
    let (lx, ly) = agent_pos(last_frame, last_class);
    for f in last_frame + 1..t {
        ball[[f, 0]] = lx;
        ball[[f, 1]] = ly;
    }

    // labels: controller while held, next controller in flight
    for f in 0..t {
        let next = anchors.iter().find(|(af, _)| *af >= f);
        labels[f] = match next {
            Some((_, class)) => *class,
            None => last_class,
        };
    }
    Ok((ball, labels))
}

/// Cut an episode (with precomputed ball truth and labels) into fixed-size
/// windows. Windows spanning a roster change are dropped.
pub fn make_windows(
    episode: &Episode,
    ball_truth: &Array2<f64>,
    labels: &[usize],
    agents: &AgentSet,
    window_len: usize,
    stride: usize,
) -> Result<Vec<Window>> {
    if stride == 0 {
        return Err(Error::Config("stride must be >= 1".into()));
    }
    let t = episode.len();
    if ball_truth.shape()[0] != t || labels.len() != t {
        return Err(Error::Shape(
            "ball truth and labels must cover every frame".into(),
        ));
    }
    let mut out = Vec::new();
    if t < window_len {
        return Ok(out);
    }
    let midpoints = agents.ball_out_positions();
    let n = agents.n();
    let num_agents = agents.num_classes();
    let mut start = 0usize;
    while start + window_len <= t {
        let mut features = Array3::<f64>::zeros((window_len, num_agents, 6));
        let mut ok = true;
        'frames: for (row, fi) in (start..start + window_len).enumerate() {
            let frame = &episode.frames[fi];
            for (slot, id) in agents
                .team1
                .iter()
                .chain(agents.team2.iter())
                .enumerate()
            {
                match frame.player(id) {
                    Some(p) => {
                        let feat = p.features();
                        for (c, v) in feat.iter().enumerate() {
                            features[[row, slot, c]] = *v;
                        }
                    }
                    None => {
                        ok = false;
                        break 'frames;
                    }
                }
            }
            for (i, (mx, my)) in midpoints.iter().enumerate() {
                features[[row, 2 * n + i, 0]] = *mx;
                features[[row, 2 * n + i, 1]] = *my;
            }
        }
        if ok {
            let mut truth = Array2::<f64>::zeros((window_len, 2));
            for (row, fi) in (start..start + window_len).enumerate() {
                truth[[row, 0]] = ball_truth[[fi, 0]];
                truth[[row, 1]] = ball_truth[[fi, 1]];
            }
            let window = Window {
                features,
                possession_labels: labels[start..start + window_len].to_vec(),
                ball_truth: truth,
                ball_mask: vec![true; window_len],
                agents: agents.clone(),
            };
            window.validate()?;
            out.push(window);
        }
        start += stride;
    }
    Ok(out)
}

/// Pitch flip modes for augmentation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FlipMode {
    Horizontal,
    Vertical,
    Both,
}

/// Reflect a window about the pitch mid-lines. Positions mirror, the
/// matching velocity components change sign, speed and acceleration are
/// unchanged, and the ball truth transforms consistently. The ball-out
/// pseudo-agents keep their identities; their positions map onto the
/// mirrored line midpoints.
pub fn flip_augment(window: &Window, mode: FlipMode) -> Window {
    let (flip_x, flip_y) = match mode {
        FlipMode::Horizontal => (true, false),
        FlipMode::Vertical => (false, true),
        FlipMode::Both => (true, true),
    };
    let pitch = window.agents.pitch;
    let mut out = window.clone();
    let t = window.len();
    let a = window.num_agents();
    for fi in 0..t {
        for agent in 0..a {
            if flip_x {
                out.features[[fi, agent, 0]] = pitch.length - out.features[[fi, agent, 0]];
                out.features[[fi, agent, 2]] = -out.features[[fi, agent, 2]];
            }
            if flip_y {
                out.features[[fi, agent, 1]] = pitch.width - out.features[[fi, agent, 1]];
                out.features[[fi, agent, 3]] = -out.features[[fi, agent, 3]];
            }
        }
        if flip_x {
            out.ball_truth[[fi, 0]] = pitch.length - out.ball_truth[[fi, 0]];
        }
        if flip_y {
            out.ball_truth[[fi, 1]] = pitch.width - out.ball_truth[[fi, 1]];
        }
    }
    out
}

/// Independently keep each frame's ball observation with probability
/// `keep_probability`; deterministic for a fixed seed. The truth track is
/// untouched, only the observation mask changes.
pub fn mask_ball(window: &Window, keep_probability: f64, seed: u64) -> Result<Window> {
    if !(0.0..=1.0).contains(&keep_probability) {
        return Err(Error::Config(format!(
            "keep probability must lie in [0, 1], got {keep_probability}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = window.clone();
    for flag in out.ball_mask.iter_mut() {
        *flag = rng.random::<f64>() < keep_probability;
    }
    Ok(out)
}
