//! Session records: keystroke and mouse event streams plus the identity,
//! device and demographic context they were captured under.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KeyKind {
    KeyDown,
    KeyUp,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeyEvent {
    /// Milliseconds since session start.
    pub t_ms: u64,
    pub kind: KeyKind,
    /// Physical key identifier, e.g. `KeyA` or `Space`.
    pub code: String,
}

impl KeyEvent {
    pub fn down(t_ms: u64, code: impl Into<String>) -> Self {
        Self { t_ms, kind: KeyKind::KeyDown, code: code.into() }
    }

    pub fn up(t_ms: u64, code: impl Into<String>) -> Self {
        Self { t_ms, kind: KeyKind::KeyUp, code: code.into() }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MouseKind {
    Move,
    ButtonDown,
    ButtonUp,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MouseButton {
    Left,
    Right,
    Middle,
}

impl MouseButton {
    pub fn as_str(self) -> &'static str {
        match self {
            MouseButton::Left => "left",
            MouseButton::Right => "right",
            MouseButton::Middle => "middle",
        }
    }
}

impl FromStr for MouseButton {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        match s {
            "left" => Ok(MouseButton::Left),
            "right" => Ok(MouseButton::Right),
            "middle" => Ok(MouseButton::Middle),
            _ => Err(()),
        }
    }
}

/// A pointer event. Coordinates are non-negative screen pixels; `button` is
/// set exactly when `kind` is not [`MouseKind::Move`].
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MouseEvent {
    pub t_ms: u64,
    pub kind: MouseKind,
    pub x: u32,
    pub y: u32,
    pub button: Option<MouseButton>,
}

impl MouseEvent {
    pub fn moved(t_ms: u64, x: u32, y: u32) -> Self {
        Self { t_ms, kind: MouseKind::Move, x, y, button: None }
    }

    pub fn button(t_ms: u64, kind: MouseKind, x: u32, y: u32, button: MouseButton) -> Self {
        debug_assert!(kind != MouseKind::Move);
        Self { t_ms, kind, x, y, button: Some(button) }
    }

    /// Whether the button field agrees with the event kind.
    pub fn is_well_formed(&self) -> bool {
        (self.kind == MouseKind::Move) == self.button.is_none()
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct DeviceContext {
    pub keyboard_layout: String,
    pub mouse_kind: String,
    pub region: String,
}

impl DeviceContext {
    pub fn is_complete(&self) -> bool {
        !self.keyboard_layout.is_empty() && !self.mouse_kind.is_empty() && !self.region.is_empty()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Gender {
    Female,
    Male,
    Others,
    #[default]
    Unknown,
}

impl Gender {
    pub const KNOWN: [Gender; 3] = [Gender::Female, Gender::Male, Gender::Others];

    pub fn as_str(self) -> &'static str {
        match self {
            Gender::Female => "female",
            Gender::Male => "male",
            Gender::Others => "others",
            Gender::Unknown => "unknown",
        }
    }
}

impl FromStr for Gender {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        match s {
            "female" => Ok(Gender::Female),
            "male" => Ok(Gender::Male),
            "others" => Ok(Gender::Others),
            "unknown" => Ok(Gender::Unknown),
            _ => Err(()),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum AgeBand {
    #[serde(rename = "0-14")]
    UpTo14,
    #[serde(rename = "15-20")]
    From15To20,
    #[serde(rename = "21-25")]
    From21To25,
    #[serde(rename = "26-30")]
    From26To30,
    #[serde(rename = "31-35")]
    From31To35,
    #[serde(rename = "36-40")]
    From36To40,
    #[serde(rename = "41+")]
    Over40,
    #[default]
    #[serde(rename = "unknown")]
    Unknown,
}

impl AgeBand {
    pub const KNOWN: [AgeBand; 7] = [
        AgeBand::UpTo14,
        AgeBand::From15To20,
        AgeBand::From21To25,
        AgeBand::From26To30,
        AgeBand::From31To35,
        AgeBand::From36To40,
        AgeBand::Over40,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AgeBand::UpTo14 => "0-14",
            AgeBand::From15To20 => "15-20",
            AgeBand::From21To25 => "21-25",
            AgeBand::From26To30 => "26-30",
            AgeBand::From31To35 => "31-35",
            AgeBand::From36To40 => "36-40",
            AgeBand::Over40 => "41+",
            AgeBand::Unknown => "unknown",
        }
    }
}

impl FromStr for AgeBand {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        AgeBand::KNOWN
            .into_iter()
            .chain([AgeBand::Unknown])
            .find(|b| b.as_str() == s)
            .ok_or(())
    }
}

impl fmt::Display for Gender {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl fmt::Display for AgeBand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Demographics {
    pub gender: Gender,
    pub age_band: AgeBand,
}

/// One test session.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionRecord {
    pub session_id: String,
    /// Claimed test-taker identity.
    pub user_id: String,
    /// Wall-clock start, epoch milliseconds. Event times are relative to it.
    pub started_at_ms: i64,
    pub device: DeviceContext,
    pub demographics: Demographics,
    pub key_events: Vec<KeyEvent>,
    pub mouse_events: Vec<MouseEvent>,
}

impl SessionRecord {
    /// Stable sort of both event streams by timestamp, so equal timestamps
    /// keep their input order.
    pub fn sort_events(&mut self) {
        self.key_events.sort_by_key(|e| e.t_ms);
        self.mouse_events.sort_by_key(|e| e.t_ms);
    }

    pub fn is_sorted(&self) -> bool {
        self.key_events.windows(2).all(|w| w[0].t_ms <= w[1].t_ms)
            && self.mouse_events.windows(2).all(|w| w[0].t_ms <= w[1].t_ms)
    }

    pub fn move_count(&self) -> usize {
        self.mouse_events.iter().filter(|e| e.kind == MouseKind::Move).count()
    }
}

/// A key press with both edges observed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Keystroke<'a> {
    pub code: &'a str,
    pub down_ms: u64,
    pub up_ms: u64,
}

impl Keystroke<'_> {
    pub fn dwell_ms(&self) -> u64 {
        self.up_ms - self.down_ms
    }
}

/// Pairs every `key_down` with the next `key_up` of the same code.
///
/// A second `key_down` for a code that is still held drops the earlier one, a
/// `key_up` with no open `key_down` is dropped, and presses still open at the
/// end are dropped. Returns the matched keystrokes ordered by their
/// `key_down` position in the stream and the number of dropped events.
pub fn match_keystrokes(events: &[KeyEvent]) -> (Vec<Keystroke<'_>>, usize) {
    let mut open: BTreeMap<&str, (usize, u64)> = BTreeMap::new();
    let mut matched: Vec<(usize, Keystroke<'_>)> = Vec::new();
    let mut dropped = 0;
    for (i, ev) in events.iter().enumerate() {
        match ev.kind {
            KeyKind::KeyDown => {
                if open.insert(ev.code.as_str(), (i, ev.t_ms)).is_some() {
                    dropped += 1;
                }
            }
            KeyKind::KeyUp => match open.remove(ev.code.as_str()) {
                Some((order, down_ms)) => matched.push((
                    order,
                    Keystroke { code: ev.code.as_str(), down_ms, up_ms: ev.t_ms.max(down_ms) },
                )),
                None => dropped += 1,
            },
        }
    }
    dropped += open.len();
    matched.sort_by_key(|(order, _)| *order);
    (matched.into_iter().map(|(_, k)| k).collect(), dropped)
}

/// Button hold durations (`button_up - button_down`) per matched click.
pub fn click_holds(events: &[MouseEvent]) -> Vec<f64> {
    let mut open: BTreeMap<MouseButton, u64> = BTreeMap::new();
    let mut holds = Vec::new();
    for ev in events {
        let Some(button) = ev.button else { continue };
        match ev.kind {
            MouseKind::ButtonDown => {
                open.insert(button, ev.t_ms);
            }
            MouseKind::ButtonUp => {
                if let Some(down) = open.remove(&button) {
                    holds.push(ev.t_ms.saturating_sub(down) as f64);
                }
            }
            MouseKind::Move => {}
        }
    }
    holds
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationPolicy {
    /// Matched down/up pairs required for keystroke features.
    pub min_keystrokes: usize,
    /// Move events required for mouse features.
    pub min_mouse_moves: usize,
}

impl Default for ValidationPolicy {
    fn default() -> Self {
        Self { min_keystrokes: 50, min_mouse_moves: 100 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationOutcome {
    pub usable_for_keystroke: bool,
    pub usable_for_mouse: bool,
    pub dropped_key_events: usize,
    pub matched_keystrokes: usize,
}

impl ValidationOutcome {
    pub fn usable_for_any(&self) -> bool {
        self.usable_for_keystroke || self.usable_for_mouse
    }
}

/// Never fails: unmatched key events are counted and excluded, and the
/// usability flags report whether each channel meets `policy`.
pub fn validate_session(s: &SessionRecord, policy: &ValidationPolicy) -> ValidationOutcome {
    let (matched, dropped) = match_keystrokes(&s.key_events);
    ValidationOutcome {
        usable_for_keystroke: matched.len() >= policy.min_keystrokes,
        usable_for_mouse: s.move_count() >= policy.min_mouse_moves,
        dropped_key_events: dropped,
        matched_keystrokes: matched.len(),
    }
}
