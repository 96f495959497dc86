//! Domain types: pitch geometry, tracking frames, episodes, rosters and
//! training windows.

use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Pitch dimensions in meters; the coordinate origin sits at a pitch corner
/// with x along the length and y along the width.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PitchConfig {
    pub length: f64,
    pub width: f64,
}

impl Default for PitchConfig {
    fn default() -> Self {
        PitchConfig {
            length: 105.0,
            width: 68.0,
        }
    }
}

impl PitchConfig {
    pub fn new(length: f64, width: f64) -> Result<Self> {
        if length <= 0.0 || width <= 0.0 {
            return Err(Error::Config(format!(
                "pitch dimensions must be positive, got {length} x {width}"
            )));
        }
        Ok(PitchConfig { length, width })
    }

    /// Midpoints of the four pitch lines in a fixed order:
    /// left goal line, right goal line, bottom touchline, top touchline.
    pub fn line_midpoints(&self) -> [(f64, f64); 4] {
        [
            (0.0, self.width / 2.0),
            (self.length, self.width / 2.0),
            (self.length / 2.0, 0.0),
            (self.length / 2.0, self.width),
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Team {
    Team1,
    Team2,
}

impl Team {
    pub fn parse(s: &str) -> Result<Team> {
        match s.trim().to_ascii_lowercase().as_str() {
            "team1" | "1" | "home" => Ok(Team::Team1),
            "team2" | "2" | "away" => Ok(Team::Team2),
            other => Err(Error::Config(format!("unknown team label {other:?}"))),
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            Team::Team1 => "team1",
            Team::Team2 => "team2",
        }
    }
}

/// Per-player kinematic state at one frame. The six feature values
/// (x, y, vx, vy, speed, accel) feed the models in this order.
#[derive(Debug, Clone, PartialEq)]
pub struct PlayerState {
    pub player_id: String,
    pub team: Team,
    pub x: f64,
    pub y: f64,
    pub vx: f64,
    pub vy: f64,
    pub speed: f64,
    pub accel: f64,
}

impl PlayerState {
    pub fn at(player_id: impl Into<String>, team: Team, x: f64, y: f64) -> Self {
        PlayerState {
            player_id: player_id.into(),
            team,
            x,
            y,
            vx: 0.0,
            vy: 0.0,
            speed: 0.0,
            accel: 0.0,
        }
    }

    pub fn features(&self) -> [f64; 6] {
        [self.x, self.y, self.vx, self.vy, self.speed, self.accel]
    }

    pub fn validate(&self) -> Result<()> {
        let fin = self.features().iter().all(|v| v.is_finite());
        if !fin {
            return Err(Error::Numeric(format!(
                "non-finite state for player {}",
                self.player_id
            )));
        }
        let norm = (self.vx * self.vx + self.vy * self.vy).sqrt();
        if (norm - self.speed).abs() > 1e-6 {
            return Err(Error::Numeric(format!(
                "speed {} does not match |(vx, vy)| = {norm} for player {}",
                self.speed, self.player_id
            )));
        }
        Ok(())
    }
}

/// One tracking frame: all player states plus an optional ball observation.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackingFrame {
    pub time: f64,
    pub players: Vec<PlayerState>,
    pub ball: Option<(f64, f64)>,
    pub in_play: bool,
}

impl TrackingFrame {
    pub fn player(&self, id: &str) -> Option<&PlayerState> {
        self.players.iter().find(|p| p.player_id == id)
    }
}

/// A maximal in-play run of frames at exactly 10 Hz.
#[derive(Debug, Clone)]
pub struct Episode {
    pub episode_id: String,
    pub frames: Vec<TrackingFrame>,
}

pub const FRAME_DT: f64 = 0.1;

impl Episode {
    pub fn new(episode_id: impl Into<String>, frames: Vec<TrackingFrame>) -> Result<Self> {
        let episode_id = episode_id.into();
        for w in frames.windows(2) {
            let dt = w[1].time - w[0].time;
            if (dt - FRAME_DT).abs() > 1e-6 {
                return Err(Error::Config(format!(
                    "episode {episode_id}: frame spacing {dt} != {FRAME_DT}"
                )));
            }
        }
        if frames.iter().any(|f| !f.in_play) {
            return Err(Error::Config(format!(
                "episode {episode_id} contains out-of-play frames"
            )));
        }
        Ok(Episode {
            episode_id,
            frames,
        })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn start_time(&self) -> f64 {
        self.frames.first().map(|f| f.time).unwrap_or(0.0)
    }

    /// Frame index of an absolute timestamp, or None when outside.
    pub fn frame_index(&self, time: f64) -> Option<usize> {
        if self.frames.is_empty() {
            return None;
        }
        let rel = (time - self.start_time()) / FRAME_DT;
        let idx = rel.round() as i64;
        if idx < 0 || idx >= self.frames.len() as i64 || (rel - rel.round()).abs() > 1e-3 {
            return None;
        }
        Some(idx as usize)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EventType {
    Touch,
    Pass,
    Out,
    Other,
}

impl EventType {
    pub fn parse(s: &str) -> EventType {
        match s.trim().to_ascii_uppercase().as_str() {
            "TOUCH" => EventType::Touch,
            "PASS" => EventType::Pass,
            "OUT" => EventType::Out,
            _ => EventType::Other,
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            EventType::Touch => "TOUCH",
            EventType::Pass => "PASS",
            EventType::Out => "OUT",
            EventType::Other => "OTHER",
        }
    }
}

/// A manually annotated (or simulated) ball event.
#[derive(Debug, Clone, PartialEq)]
pub struct EventRecord {
    pub time: f64,
    pub player_id: String,
    pub event_type: EventType,
    pub end_time: Option<f64>,
}

/// Identifiers of the four ball-out pseudo-agents, ordered to match
/// [`PitchConfig::line_midpoints`].
pub const BALL_OUT_IDS: [&str; 4] = ["out_left", "out_right", "out_bottom", "out_top"];

/// Ordered roster: team-1 players, team-2 players, then the four ball-out
/// pseudo-agents pinned at the pitch-line midpoints. Possession classes
/// index into this order, giving `2n + 4` classes in total.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentSet {
    pub team1: Vec<String>,
    pub team2: Vec<String>,
    pub pitch: PitchConfig,
}

impl AgentSet {
    pub fn new(team1: Vec<String>, team2: Vec<String>, pitch: PitchConfig) -> Result<Self> {
        if team1.len() != team2.len() {
            return Err(Error::Shape(format!(
                "teams must have equal size, got {} vs {}",
                team1.len(),
                team2.len()
            )));
        }
        if team1.is_empty() {
            return Err(Error::Shape("teams must not be empty".into()));
        }
        Ok(AgentSet {
            team1,
            team2,
            pitch,
        })
    }

    /// Players per team.
    pub fn n(&self) -> usize {
        self.team1.len()
    }

    /// Total possession classes `2n + 4`.
    pub fn num_classes(&self) -> usize {
        2 * self.n() + 4
    }

    /// Positions of the ball-out pseudo-agents.
    pub fn ball_out_positions(&self) -> [(f64, f64); 4] {
        self.pitch.line_midpoints()
    }

    /// Class index of an agent id (players or pseudo-agents).
    pub fn class_of(&self, id: &str) -> Option<usize> {
        if let Some(i) = self.team1.iter().position(|p| p == id) {
            return Some(i);
        }
        if let Some(i) = self.team2.iter().position(|p| p == id) {
            return Some(self.n() + i);
        }
        BALL_OUT_IDS
            .iter()
            .position(|p| *p == id)
            .map(|i| 2 * self.n() + i)
    }

    /// Agent id of a class index.
    pub fn id_of(&self, class: usize) -> Option<&str> {
        let n = self.n();
        if class < n {
            Some(&self.team1[class])
        } else if class < 2 * n {
            Some(&self.team2[class - n])
        } else if class < 2 * n + 4 {
            Some(BALL_OUT_IDS[class - 2 * n])
        } else {
            None
        }
    }

    /// Team bucket of a class index: `Some(team)` for players, `None` for
    /// the ball-out pseudo-agents.
    pub fn team_of(&self, class: usize) -> Option<Team> {
        let n = self.n();
        if class < n {
            Some(Team::Team1)
        } else if class < 2 * n {
            Some(Team::Team2)
        } else {
            None
        }
    }

    /// True for ball-out pseudo-agent classes.
    pub fn is_ball_out(&self, class: usize) -> bool {
        class >= 2 * self.n()
    }
}

/// A fixed-length training window: per-agent features, possession labels,
/// the true ball track and the imputation mask (true = observed).
#[derive(Debug, Clone)]
pub struct Window {
    /// `[T, 2n + 4, 6]` feature tensor ordered per [`AgentSet`]; the
    /// kinematic features of ball-out agents are zero.
    pub features: Array3<f64>,
    /// Possession class indices, one per frame.
    pub possession_labels: Vec<usize>,
    /// `[T, 2]` true ball positions in meters.
    pub ball_truth: Array2<f64>,
    /// Per-frame observation flags for imputation (true = observed).
    pub ball_mask: Vec<bool>,
    pub agents: AgentSet,
}

impl Window {
    pub fn len(&self) -> usize {
        self.features.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn num_agents(&self) -> usize {
        self.features.shape()[1]
    }

    pub fn validate(&self) -> Result<()> {
        let t = self.len();
        let a = self.num_agents();
        if a != self.agents.num_classes() {
            return Err(Error::Shape(format!(
                "window has {a} agents but roster defines {}",
                self.agents.num_classes()
            )));
        }
        if self.possession_labels.len() != t
            || self.ball_truth.shape() != [t, 2]
            || self.ball_mask.len() != t
        {
            return Err(Error::Shape("window component lengths disagree".into()));
        }
        if let Some(&bad) = self.possession_labels.iter().find(|&&q| q >= a) {
            return Err(Error::Label(format!(
                "possession label {bad} out of range for {a} classes"
            )));
        }
        if self.features.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite window features".into()));
        }
        Ok(())
    }

    /// Player positions `[T, 2n, 2]` (real players only, roster order).
    pub fn player_positions(&self) -> Array3<f64> {
        let t = self.len();
        let n2 = 2 * self.agents.n();
        let mut out = Array3::zeros((t, n2, 2));
        for ti in 0..t {
            for p in 0..n2 {
                out[[ti, p, 0]] = self.features[[ti, p, 0]];
                out[[ti, p, 1]] = self.features[[ti, p, 1]];
            }
        }
        out
    }

    /// Positions of every possession class `[T, 2n+4, 2]` (players plus
    /// pseudo-agents).
    pub fn agent_positions(&self) -> Array3<f64> {
        let t = self.len();
        let a = self.num_agents();
        let mut out = Array3::zeros((t, a, 2));
        for ti in 0..t {
            for p in 0..a {
                out[[ti, p, 0]] = self.features[[ti, p, 0]];
                out[[ti, p, 1]] = self.features[[ti, p, 1]];
            }
        }
        out
    }
}
