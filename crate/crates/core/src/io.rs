//! File ingestion and emission.
//!
//! Two tracking formats are accepted:
//!
//! - **canonical** CSV with header `time,player_id,team,x,y` and optional
//!   `ball_x,ball_y` columns, one row per player per frame, coordinates in
//!   meters;
//! - **metrica** sample-data layout: one tracking CSV per team (three
//!   header rows, normalized coordinates with the y axis pointing down)
//!   plus one event CSV per match.
//!
//! Event CSVs use `time,player_id,event_type[,end_time]`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::types::{
    EventRecord, EventType, PitchConfig, PlayerState, Team, TrackingFrame, BALL_OUT_IDS,
};

/// Supported tracking-file formats.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrackingFormat {
    Canonical,
    Metrica,
}

impl TrackingFormat {
    pub fn parse(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "canonical" | "csv" => Ok(TrackingFormat::Canonical),
            "metrica" => Ok(TrackingFormat::Metrica),
            other => Err(Error::Config(format!("unknown tracking format {other:?}"))),
        }
    }
}

fn parse_field<T: std::str::FromStr>(
    field: &str,
    what: &str,
    path: &str,
    line: usize,
) -> Result<T> {
    field
        .trim()
        .parse::<T>()
        .map_err(|_| Error::parse(path, line, format!("invalid {what}: {field:?}")))
}

/// Load canonical tracking CSV. Rows sharing a timestamp form one frame;
/// frames are returned time-sorted.
pub fn load_tracking_canonical(path: &Path) -> Result<Vec<TrackingFrame>> {
    let text = std::fs::read_to_string(path)?;
    let path_str = path.display().to_string();
    let mut lines = text.lines().enumerate();
    let header = match lines.next() {
        None => return Ok(Vec::new()),
        Some((_, h)) => h,
    };
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    let find = |name: &str| cols.iter().position(|c| *c == name);
    let (ti, pi, tei, xi, yi) = match (
        find("time"),
        find("player_id"),
        find("team"),
        find("x"),
        find("y"),
    ) {
        (Some(t), Some(p), Some(te), Some(x), Some(y)) => (t, p, te, x, y),
        _ => {
            return Err(Error::parse(
                &path_str,
                1,
                "header must contain time,player_id,team,x,y",
            ))
        }
    };
    let (bxi, byi) = (find("ball_x"), find("ball_y"));

    // keyed by time in microseconds for stable grouping
    let mut frames: BTreeMap<i64, TrackingFrame> = BTreeMap::new();
    for (idx, raw) in lines {
        let line_no = idx + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = raw.split(',').collect();
        if fields.len() < 5 {
            return Err(Error::parse(&path_str, line_no, "expected >= 5 fields"));
        }
        let time: f64 = parse_field(fields[ti], "time", &path_str, line_no)?;
        let player_id = fields[pi].trim().to_string();
        let team = Team::parse(fields[tei])
            .map_err(|e| Error::parse(&path_str, line_no, e.to_string()))?;
        let x: f64 = parse_field(fields[xi], "x", &path_str, line_no)?;
        let y: f64 = parse_field(fields[yi], "y", &path_str, line_no)?;
        let key = (time * 1e6).round() as i64;
        let frame = frames.entry(key).or_insert_with(|| TrackingFrame {
            time,
            players: Vec::new(),
            ball: None,
            in_play: true,
        });
        frame.players.push(PlayerState::at(player_id, team, x, y));
        if let (Some(bx), Some(by)) = (bxi, byi) {
            let bx = fields.get(bx).map(|s| s.trim()).unwrap_or("");
            let by = fields.get(by).map(|s| s.trim()).unwrap_or("");
            if !bx.is_empty() && !by.is_empty() {
                frame.ball = Some((
                    parse_field(bx, "ball_x", &path_str, line_no)?,
                    parse_field(by, "ball_y", &path_str, line_no)?,
                ));
            }
        }
    }
    Ok(frames.into_values().collect())
}

/// Write canonical tracking CSV (with ball columns when any frame has one).
pub fn write_tracking_canonical(path: &Path, frames: &[TrackingFrame]) -> Result<()> {
    let has_ball = frames.iter().any(|f| f.ball.is_some());
    let mut out = String::from("time,player_id,team,x,y");
    if has_ball {
        out.push_str(",ball_x,ball_y");
    }
    out.push('\n');
    for frame in frames {
        for p in &frame.players {
            write!(
                out,
                "{:.3},{},{},{:.6},{:.6}",
                frame.time,
                p.player_id,
                p.team.label(),
                p.x,
                p.y
            )
            .unwrap();
            if has_ball {
                match frame.ball {
                    Some((bx, by)) => write!(out, ",{bx:.6},{by:.6}").unwrap(),
                    None => out.push_str(",,"),
                }
            }
            out.push('\n');
        }
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Load the event CSV `time,player_id,event_type[,end_time]`.
pub fn load_events(path: &Path) -> Result<Vec<EventRecord>> {
    let text = std::fs::read_to_string(path)?;
    let path_str = path.display().to_string();
    let mut out = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        if idx == 0 || raw.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = raw.split(',').collect();
        if fields.len() < 3 {
            return Err(Error::parse(&path_str, line_no, "expected >= 3 fields"));
        }
        let time: f64 = parse_field(fields[0], "time", &path_str, line_no)?;
        if time < 0.0 {
            return Err(Error::parse(&path_str, line_no, "negative event time"));
        }
        let end_time = match fields.get(3).map(|s| s.trim()) {
            Some("") | None => None,
            Some(v) => Some(parse_field::<f64>(v, "end_time", &path_str, line_no)?),
        };
        out.push(EventRecord {
            time,
            player_id: fields[1].trim().to_string(),
            event_type: EventType::parse(fields[2]),
            end_time,
        });
    }
    out.sort_by(|a, b| a.time.total_cmp(&b.time));
    Ok(out)
}

pub fn write_events(path: &Path, events: &[EventRecord]) -> Result<()> {
    let mut out = String::from("time,player_id,event_type,end_time\n");
    for e in events {
        match e.end_time {
            Some(t1) => writeln!(
                out,
                "{:.3},{},{},{:.3}",
                e.time,
                e.player_id,
                e.event_type.label(),
                t1
            )
            .unwrap(),
            None => writeln!(out, "{:.3},{},{},", e.time, e.player_id, e.event_type.label())
                .unwrap(),
        }
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// One team's Metrica tracking file: jersey-numbered player columns after
/// three header rows, coordinates normalized to [0, 1] with y pointing
/// down. Returns frames with positions scaled into pitch meters.
fn load_metrica_tracking(
    path: &Path,
    team: Team,
    pitch: PitchConfig,
) -> Result<Vec<(u64, TrackingFrame)>> {
    let text = std::fs::read_to_string(path)?;
    let path_str = path.display().to_string();
    let mut lines = text.lines().enumerate();
    lines.next(); // team-name row
    let jerseys_row = lines
        .next()
        .ok_or_else(|| Error::parse(&path_str, 2, "missing jersey header"))?;
    let labels_row = lines
        .next()
        .ok_or_else(|| Error::parse(&path_str, 3, "missing column labels"))?;
    let labels: Vec<&str> = labels_row.1.split(',').map(str::trim).collect();
    let jerseys: Vec<&str> = jerseys_row.1.split(',').map(str::trim).collect();
    if labels.len() < 3 || labels[0] != "Period" {
        return Err(Error::parse(
            &path_str,
            3,
            "expected Period,Frame,Time [s],... column labels",
        ));
    }
    // player columns come in x,y pairs starting at column 3; the trailing
    // pair is the ball
    let mut player_cols: Vec<(usize, String)> = Vec::new();
    let mut ball_col: Option<usize> = None;
    let mut col = 3;
    while col + 1 < labels.len() {
        let label = labels[col];
        if label.eq_ignore_ascii_case("ball") {
            ball_col = Some(col);
        } else if !label.is_empty() {
            let jersey = jerseys.get(col).copied().unwrap_or("");
            let id = if jersey.is_empty() {
                label.to_string()
            } else {
                jersey.to_string()
            };
            let prefix = match team {
                Team::Team1 => "home",
                Team::Team2 => "away",
            };
            player_cols.push((col, format!("{prefix}_{id}")));
        }
        col += 2;
    }

    let mut out = Vec::new();
    for (idx, raw) in lines {
        let line_no = idx + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = raw.split(',').collect();
        let frame_no: u64 = parse_field(fields[1], "frame", &path_str, line_no)?;
        let time: f64 = parse_field(fields[2], "time", &path_str, line_no)?;
        let mut players = Vec::new();
        for (c, id) in &player_cols {
            let x = fields.get(*c).map(|s| s.trim()).unwrap_or("");
            let y = fields.get(*c + 1).map(|s| s.trim()).unwrap_or("");
            if x.is_empty() || y.is_empty() || x == "NaN" || y == "NaN" {
                continue;
            }
            let xn: f64 = parse_field(x, "x", &path_str, line_no)?;
            let yn: f64 = parse_field(y, "y", &path_str, line_no)?;
            players.push(PlayerState::at(
                id.clone(),
                team,
                xn * pitch.length,
                (1.0 - yn) * pitch.width,
            ));
        }
        let ball = ball_col.and_then(|c| {
            let x = fields.get(c).map(|s| s.trim()).unwrap_or("");
            let y = fields.get(c + 1).map(|s| s.trim()).unwrap_or("");
            if x.is_empty() || y.is_empty() || x == "NaN" || y == "NaN" {
                None
            } else {
                match (x.parse::<f64>(), y.parse::<f64>()) {
                    (Ok(xn), Ok(yn)) => Some((xn * pitch.length, (1.0 - yn) * pitch.width)),
                    _ => None,
                }
            }
        });
        out.push((
            frame_no,
            TrackingFrame {
                time,
                players,
                ball,
                in_play: true,
            },
        ));
    }
    Ok(out)
}

/// Load a Metrica match: two tracking files merged on frame number plus the
/// event file. A frame counts as in play while a ball observation exists.
pub fn load_metrica_match(
    home: &Path,
    away: &Path,
    events: &Path,
    pitch: PitchConfig,
) -> Result<(Vec<TrackingFrame>, Vec<EventRecord>)> {
    let home_frames = load_metrica_tracking(home, Team::Team1, pitch)?;
    let away_frames = load_metrica_tracking(away, Team::Team2, pitch)?;
    let mut by_frame: BTreeMap<u64, TrackingFrame> = BTreeMap::new();
    for (no, frame) in home_frames {
        by_frame.insert(no, frame);
    }
    for (no, frame) in away_frames {
        match by_frame.get_mut(&no) {
            Some(merged) => {
                merged.players.extend(frame.players);
                if merged.ball.is_none() {
                    merged.ball = frame.ball;
                }
            }
            None => {
                by_frame.insert(no, frame);
            }
        }
    }
    let mut frames: Vec<TrackingFrame> = by_frame.into_values().collect();
    for f in frames.iter_mut() {
        f.in_play = f.ball.is_some();
    }
    let events = load_metrica_events(events, pitch)?;
    Ok((frames, events))
}

/// Convert Metrica event rows into ball-contact events: the `From` player
/// touches at the start time; pass-like events add the receiver's touch at
/// the end time; `BALL OUT` subtypes suspend play from the end time.
pub fn load_metrica_events(path: &Path, _pitch: PitchConfig) -> Result<Vec<EventRecord>> {
    let text = std::fs::read_to_string(path)?;
    let path_str = path.display().to_string();
    let mut out = Vec::new();
    let mut header: Vec<String> = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = raw.split(',').map(str::trim).collect();
        if idx == 0 {
            header = fields.iter().map(|s| s.to_string()).collect();
            continue;
        }
        let get = |name: &str| -> Option<&str> {
            header
                .iter()
                .position(|h| h.eq_ignore_ascii_case(name))
                .and_then(|i| fields.get(i).copied())
        };
        let team = get("Team").unwrap_or("");
        let prefix = if team.eq_ignore_ascii_case("home") {
            "home"
        } else {
            "away"
        };
        let etype = get("Type").unwrap_or("").to_ascii_uppercase();
        let subtype = get("Subtype").unwrap_or("").to_ascii_uppercase();
        let start: f64 = match get("Start Time [s]") {
            Some(v) if !v.is_empty() => parse_field(v, "start time", &path_str, line_no)?,
            _ => continue,
        };
        let end: Option<f64> = match get("End Time [s]") {
            Some(v) if !v.is_empty() => Some(parse_field(v, "end time", &path_str, line_no)?),
            _ => None,
        };
        let norm_player = |raw: &str| -> Option<String> {
            let raw = raw.trim();
            if raw.is_empty() {
                return None;
            }
            Some(format!(
                "{prefix}_{}",
                raw.trim_start_matches("Player").trim()
            ))
        };
        let from = get("From").and_then(norm_player);
        let to = get("To").and_then(norm_player);

        if let Some(p) = from.clone() {
            out.push(EventRecord {
                time: start,
                player_id: p,
                event_type: EventType::Touch,
                end_time: None,
            });
        }
        if etype == "PASS" {
            if let (Some(q), Some(t1)) = (to, end) {
                out.push(EventRecord {
                    time: t1,
                    player_id: q,
                    event_type: EventType::Touch,
                    end_time: None,
                });
            }
        }
        if subtype.contains("OUT") {
            if let Some(t1) = end {
                out.push(EventRecord {
                    time: t1,
                    player_id: BALL_OUT_IDS[0].to_string(),
                    event_type: EventType::Out,
                    end_time: None,
                });
            }
        }
    }
    out.sort_by(|a, b| a.time.total_cmp(&b.time));
    Ok(out)
}
