//! Session documents (`ringwatch/session/v1`) and newline-delimited corpora.
//!
//! A document carries one session. Key and pointer events share a single
//! `events` array:
//!
//! ```json
//! {"schema":"ringwatch/session/v1","session_id":"s1","user_id":"u1",
//!  "started_at_ms":1700000000000,
//!  "device":{"keyboard_layout":"qwerty-us","mouse_kind":"optical","region":"eu"},
//!  "demographics":{"gender":"female","age_band":"21-25"},
//!  "events":[{"t":0,"kind":"key_down","code":"KeyA"},
//!            {"t":80,"kind":"key_up","code":"KeyA"},
//!            {"t":95,"kind":"move","x":10,"y":20},
//!            {"t":130,"kind":"button_down","x":10,"y":20,"button":"left"}]}
//! ```

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use ringwatch_core::session::{
    AgeBand, Demographics, DeviceContext, Gender, KeyEvent, KeyKind, MouseButton, MouseEvent, MouseKind,
    SessionRecord,
};
use serde::{Deserialize, Serialize};

use crate::error::{DocumentError, Error, Result};

pub const SESSION_SCHEMA: &str = "ringwatch/session/v1";

#[derive(Deserialize)]
struct RawDocument {
    schema: String,
    session_id: String,
    user_id: String,
    started_at_ms: i64,
    device: DeviceContext,
    #[serde(default)]
    demographics: RawDemographics,
    events: Vec<RawEvent>,
    #[serde(default)]
    thumbnail_ref: Option<String>,
}

#[derive(Default, Deserialize)]
struct RawDemographics {
    #[serde(default)]
    gender: Option<Gender>,
    #[serde(default)]
    age_band: Option<AgeBand>,
}

#[derive(Deserialize, Serialize)]
struct RawEvent {
    t: i64,
    kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    code: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    x: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    y: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    button: Option<String>,
}

#[derive(Serialize)]
struct DocumentOut<'a> {
    schema: &'static str,
    session_id: &'a str,
    user_id: &'a str,
    started_at_ms: i64,
    device: &'a DeviceContext,
    demographics: &'a Demographics,
    events: Vec<RawEvent>,
}

enum Parsed {
    Key(KeyEvent),
    Mouse(MouseEvent),
}

fn parse_event(index: usize, e: RawEvent) -> Result<Parsed, DocumentError> {
    if e.t < 0 {
        return Err(DocumentError::NegativeTimestamp { index, t: e.t });
    }
    let t = e.t as u64;
    let missing = |field: &str| DocumentError::Malformed(format!("event {index} ({}) lacks {field}", e.kind));
    let key_kind = match e.kind.as_str() {
        "key_down" => Some(KeyKind::KeyDown),
        "key_up" => Some(KeyKind::KeyUp),
        _ => None,
    };
    if let Some(kind) = key_kind {
        let code = e.code.clone().filter(|c| !c.is_empty()).ok_or_else(|| missing("code"))?;
        return Ok(Parsed::Key(KeyEvent { t_ms: t, kind, code }));
    }
    let kind = match e.kind.as_str() {
        "move" => MouseKind::Move,
        "button_down" => MouseKind::ButtonDown,
        "button_up" => MouseKind::ButtonUp,
        _ => return Err(DocumentError::UnknownEventKind { index, kind: e.kind }),
    };
    let (x, y) = (e.x.ok_or_else(|| missing("x"))?, e.y.ok_or_else(|| missing("y"))?);
    let button = match (kind, &e.button) {
        (MouseKind::Move, _) => None,
        (_, None) => return Err(missing("button")),
        (_, Some(b)) => Some(
            b.parse::<MouseButton>()
                .map_err(|_| DocumentError::Malformed(format!("event {index}: unknown button {b:?}")))?,
        ),
    };
    Ok(Parsed::Mouse(MouseEvent { t_ms: t, kind, x, y, button }))
}

/// A parsed document plus the optional camera-thumbnail reference that the
/// detection service stores alongside the session.
#[derive(Clone, Debug, PartialEq)]
pub struct SessionDocument {
    pub session: SessionRecord,
    pub thumbnail_ref: Option<String>,
}

/// Parses one document. Events come out split by device and stably sorted by
/// time, so equal timestamps keep their input order.
pub fn parse_session(bytes: &[u8]) -> Result<SessionRecord, DocumentError> {
    parse_document(bytes).map(|d| d.session)
}

pub fn parse_document(bytes: &[u8]) -> Result<SessionDocument, DocumentError> {
    let raw: RawDocument = serde_json::from_slice(bytes).map_err(|e| DocumentError::Malformed(e.to_string()))?;
    if raw.schema != SESSION_SCHEMA {
        return Err(DocumentError::Malformed(format!("schema {:?}, expected {SESSION_SCHEMA:?}", raw.schema)));
    }
    if raw.session_id.is_empty() {
        return Err(DocumentError::Malformed("empty session_id".into()));
    }
    let mut s = SessionRecord {
        session_id: raw.session_id,
        user_id: raw.user_id,
        started_at_ms: raw.started_at_ms,
        device: raw.device,
        demographics: Demographics {
            gender: raw.demographics.gender.unwrap_or_default(),
            age_band: raw.demographics.age_band.unwrap_or_default(),
        },
        key_events: Vec::new(),
        mouse_events: Vec::new(),
    };
    for (i, e) in raw.events.into_iter().enumerate() {
        match parse_event(i, e)? {
            Parsed::Key(k) => s.key_events.push(k),
            Parsed::Mouse(m) => s.mouse_events.push(m),
        }
    }
    s.sort_events();
    Ok(SessionDocument { session: s, thumbnail_ref: raw.thumbnail_ref })
}

fn key_out(e: &KeyEvent) -> RawEvent {
    let kind = match e.kind {
        KeyKind::KeyDown => "key_down",
        KeyKind::KeyUp => "key_up",
    };
    RawEvent { t: e.t_ms as i64, kind: kind.into(), code: Some(e.code.clone()), x: None, y: None, button: None }
}

fn mouse_out(e: &MouseEvent) -> RawEvent {
    let kind = match e.kind {
        MouseKind::Move => "move",
        MouseKind::ButtonDown => "button_down",
        MouseKind::ButtonUp => "button_up",
    };
    RawEvent {
        t: e.t_ms as i64,
        kind: kind.into(),
        code: None,
        x: Some(e.x),
        y: Some(e.y),
        button: e.button.map(|b| b.as_str().into()),
    }
}

/// One-line JSON document. Key and pointer events are merged by time, key
/// events first on ties.
pub fn session_to_json(s: &SessionRecord) -> String {
    let (mut k, mut m) = (s.key_events.iter().peekable(), s.mouse_events.iter().peekable());
    let mut events = Vec::with_capacity(s.key_events.len() + s.mouse_events.len());
    loop {
        let take_key = match (k.peek(), m.peek()) {
            (Some(a), Some(b)) => a.t_ms <= b.t_ms,
            (Some(_), None) => true,
            (None, Some(_)) => false,
            (None, None) => break,
        };
        if take_key {
            events.push(key_out(k.next().unwrap()));
        } else {
            events.push(mouse_out(m.next().unwrap()));
        }
    }
    let doc = DocumentOut {
        schema: SESSION_SCHEMA,
        session_id: &s.session_id,
        user_id: &s.user_id,
        started_at_ms: s.started_at_ms,
        device: &s.device,
        demographics: &s.demographics,
        events,
    };
    serde_json::to_string(&doc).expect("session documents serialize")
}

/// Reads a newline-delimited corpus. Blank lines are skipped; session ids
/// must be unique.
pub fn read_corpus(path: &Path) -> Result<Vec<SessionRecord>> {
    let file = File::open(path).map_err(Error::io(path))?;
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(Error::io(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let at = || format!("{}:{}", path.display(), n + 1);
        let s = parse_session(line.as_bytes()).map_err(|source| Error::Document { path: at(), source })?;
        if !seen.insert(s.session_id.clone()) {
            return Err(Error::Document { path: at(), source: DocumentError::DuplicateSessionId(s.session_id) });
        }
        out.push(s);
    }
    Ok(out)
}

/// The newline-delimited form of `sessions`, one document per line.
pub fn corpus_bytes(sessions: &[SessionRecord]) -> Vec<u8> {
    let mut out = Vec::new();
    for s in sessions {
        out.extend_from_slice(session_to_json(s).as_bytes());
        out.push(b'\n');
    }
    out
}

pub fn write_corpus(path: &Path, sessions: &[SessionRecord]) -> Result<()> {
    let file = File::create(path).map_err(Error::io(path))?;
    let mut w = BufWriter::new(file);
    w.write_all(&corpus_bytes(sessions)).map_err(Error::io(path))?;
    w.flush().map_err(Error::io(path))
}
