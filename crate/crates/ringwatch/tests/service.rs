use std::io::{Read, Write};
use std::path::Path;
use std::sync::atomic::{AtomicI64, Ordering};
use std::sync::{Arc, RwLock};

use axum::body::Body;
use axum::http::{header, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use ringwatch::document::session_to_json;
use ringwatch::service::{router, AppState, DetectService};
use ringwatch::store::{state_bytes, LOG_FILE};
use ringwatch_core::detect::DetectorConfig;
use ringwatch_core::experiment::train_for;
use ringwatch_core::features::FeatureSet;
use ringwatch_core::methods::SessionScorer;
use ringwatch_core::session::{SessionRecord, ValidationPolicy};
use ringwatch_core::synth::{gen_ring_corpus, GeneratorConfig, SessionLength};
use ringwatch_core::train::TrainConfig;
use serde_json::{json, Value};
use tower::ServiceExt;

fn corpus() -> Vec<SessionRecord> {
    let cfg = GeneratorConfig {
        n_users: 12,
        n_rings: 1,
        ring_size: 3,
        session_length: SessionLength { keystrokes: 200, mouse_moves: 300 },
        ..GeneratorConfig::default()
    };
    let (mut sessions, _) = gen_ring_corpus(&cfg).unwrap();
    sessions.sort_by(|a, b| a.started_at_ms.cmp(&b.started_at_ms).then_with(|| a.session_id.cmp(&b.session_id)));
    sessions
}

fn scorer(sessions: &[SessionRecord]) -> SessionScorer {
    let refs: Vec<&SessionRecord> = sessions.iter().collect();
    let cfg = TrainConfig { epochs: 0, batch_users: 2, ..TrainConfig::default() };
    let out = train_for(FeatureSet::Combined, &refs, &ValidationPolicy::default(), 1, &cfg).unwrap();
    SessionScorer::deep(out.network, ValidationPolicy::default()).unwrap()
}

/// Threshold that flags roughly the top tenth of cross-user pairs.
fn threshold(sc: &SessionScorer, sessions: &[SessionRecord]) -> f64 {
    let mut sims = Vec::new();
    for (i, a) in sessions.iter().enumerate() {
        for b in &sessions[..i] {
            if a.user_id != b.user_id {
                sims.push(sc.score_sessions(a, b).unwrap().unwrap());
            }
        }
    }
    sims.sort_by(|a, b| b.total_cmp(a));
    sims[sims.len() / 10]
}

struct Harness {
    app: Arc<AppState>,
    router: Router,
}

fn open(dir: &Path, sc: &SessionScorer, threshold: f64, token: Option<&str>, snapshot_every: u64) -> Harness {
    let svc = DetectService::open(sc.clone(), DetectorConfig { threshold, window_ms: None }, dir, snapshot_every).unwrap();
    let tick = Arc::new(AtomicI64::new(1_000));
    let app = Arc::new(AppState {
        service: RwLock::new(svc),
        token: token.map(String::from),
        model_version: "test-model".into(),
        clock: Arc::new(move || tick.fetch_add(1, Ordering::SeqCst)),
    });
    Harness { router: router(app.clone()), app }
}

impl Harness {
    async fn call(&self, method: &str, uri: &str, body: Option<String>, token: Option<&str>) -> (StatusCode, Value) {
        let mut req = Request::builder().method(method).uri(uri);
        if let Some(t) = token {
            req = req.header(header::AUTHORIZATION, format!("Bearer {t}"));
        }
        let req = req.body(body.map_or_else(Body::empty, Body::from)).unwrap();
        let resp = self.router.clone().oneshot(req).await.unwrap();
        let status = resp.status();
        let bytes = resp.into_body().collect().await.unwrap().to_bytes();
        let value = if bytes.is_empty() { Value::Null } else { serde_json::from_slice(&bytes).unwrap() };
        (status, value)
    }

    async fn get(&self, uri: &str) -> (StatusCode, Value) {
        self.call("GET", uri, None, None).await
    }

    async fn post(&self, uri: &str, body: String) -> (StatusCode, Value) {
        self.call("POST", uri, Some(body), None).await
    }

    fn state_bytes(&self) -> Vec<u8> {
        state_bytes(self.app.service.read().unwrap().detector().state())
    }
}

fn with_thumbnail(s: &SessionRecord) -> String {
    let mut doc: Value = serde_json::from_str(&session_to_json(s)).unwrap();
    doc["thumbnail_ref"] = json!(format!("cam/{}.jpg", s.session_id));
    doc.to_string()
}

#[tokio::test(flavor = "multi_thread")]
async fn api_round_trip() {
    let sessions = corpus();
    let sc = scorer(&sessions);
    let t = threshold(&sc, &sessions);
    let dir = tempfile::tempdir().unwrap();
    let h = open(dir.path(), &sc, t, None, 1000);

    let (status, health) = h.get("/v1/health").await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(health["status"], "ok");
    assert_eq!(health["gallery_size"], 0);
    assert_eq!(health["threshold"], t);
    assert_eq!(health["method"], "deep-keystroke+mouse");
    assert_eq!(health["model_version"], "test-model");

    let (status, first) = h.post("/v1/sessions", with_thumbnail(&sessions[0])).await;
    assert_eq!(status, StatusCode::CREATED);
    assert_eq!(first["flagged"], false);
    assert_eq!(first["session_id"], sessions[0].session_id.as_str());
    let (status, dup) = h.post("/v1/sessions", with_thumbnail(&sessions[0])).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(dup["code"], "duplicate_session");

    let mut flagged = Vec::new();
    for s in &sessions[1..] {
        let (status, out) = h.post("/v1/sessions", with_thumbnail(s)).await;
        assert_eq!(status, StatusCode::CREATED);
        if out["flagged"] == true {
            let matches = out["flag"]["matches"].as_array().unwrap();
            assert!(!matches.is_empty());
            assert!(matches.iter().all(|m| m["similarity"].as_f64().unwrap() >= t));
            assert!(matches.iter().all(|m| m["user_id"] != s.user_id.as_str()));
            flagged.push(s.session_id.clone());
        } else {
            assert!(out.get("flag").is_none());
        }
    }
    assert!(!flagged.is_empty());
    assert_eq!(h.get("/v1/health").await.1["gallery_size"], sessions.len());

    // queue: strongest top match first, capped by limit
    let (_, queue) = h.get("/v1/queue").await;
    let flags = queue["flags"].as_array().unwrap();
    assert_eq!(flags.len(), flagged.len());
    let tops: Vec<f64> = flags.iter().map(|f| f["matches"][0]["similarity"].as_f64().unwrap()).collect();
    assert!(tops.windows(2).all(|w| w[0] >= w[1]));
    let (_, short) = h.get("/v1/queue?limit=1").await;
    assert_eq!(short["flags"].as_array().unwrap().len(), 1);
    assert_eq!(short["flags"][0], flags[0]);

    // detail and related
    let id = sessions[3].session_id.as_str();
    let (status, detail) = h.get(&format!("/v1/sessions/{id}")).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(detail["user_id"], sessions[3].user_id.as_str());
    assert_eq!(detail["thumbnail_ref"], format!("cam/{id}.jpg"));
    assert_eq!(detail["availability"], json!({"keystroke": true, "mouse": true, "scored": true}));
    assert_eq!(detail["device"]["region"], sessions[3].device.region.as_str());
    let (_, related) = h.get(&format!("/v1/sessions/{id}/related?top_k=5")).await;
    let cands = related["candidates"].as_array().unwrap();
    assert_eq!(cands.len(), 5);
    for (i, c) in cands.iter().enumerate() {
        assert_eq!(c["rank"], i + 1);
        assert_ne!(c["user_id"], sessions[3].user_id.as_str());
    }
    assert_eq!(h.get(&format!("/v1/sessions/{id}/related")).await.1["candidates"].as_array().unwrap().len(), 8);
    let (status, missing) = h.get("/v1/sessions/nope").await;
    assert_eq!((status, missing["code"].as_str()), (StatusCode::NOT_FOUND, Some("unknown_session")));
    let (status, _) = h.get("/v1/sessions/nope/related").await;
    assert_eq!(status, StatusCode::NOT_FOUND);

    // review lifecycle
    let target = flags[0]["session_id"].as_str().unwrap().to_string();
    let review = |v: &str| json!({"verdict": v, "note": "same operator"}).to_string();
    let (status, rec) = h.post(&format!("/v1/flags/{target}/review"), review("confirmed")).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(rec["status"], "confirmed");
    assert_eq!(rec["note"], "same operator");
    let (status, again) = h.post(&format!("/v1/flags/{target}/review"), review("cleared")).await;
    assert_eq!((status, again["code"].as_str()), (StatusCode::CONFLICT, Some("already_reviewed")));
    let (status, bad) = h.post(&format!("/v1/flags/{}/review", flagged[0]), review("maybe")).await;
    assert_eq!((status, bad["code"].as_str()), (StatusCode::BAD_REQUEST, Some("invalid_request")));
    let (status, unknown) = h.post(&format!("/v1/flags/{}/review", sessions[0].session_id), review("cleared")).await;
    assert_eq!((status, unknown["code"].as_str()), (StatusCode::NOT_FOUND, Some("unknown_flag")));
    let (_, queue) = h.get("/v1/queue").await;
    assert!(queue["flags"].as_array().unwrap().iter().all(|f| f["session_id"] != target.as_str()));
    assert_eq!(h.get(&format!("/v1/sessions/{target}")).await.1["flag_status"], "confirmed");
}

#[tokio::test(flavor = "multi_thread")]
async fn bad_documents_are_rejected_with_codes() {
    let sessions = corpus();
    let sc = scorer(&sessions);
    let dir = tempfile::tempdir().unwrap();
    let h = open(dir.path(), &sc, 0.5, None, 1000);
    let base = session_to_json(&sessions[0]);
    let cases = [
        ("{not json", "malformed_document"),
        (r#"{"schema":"ringwatch/session/v1"}"#, "malformed_document"),
        (&*base.replacen(r#""kind":"key_down""#, r#""kind":"scroll""#, 1), "unknown_event_kind"),
        (&*base.replacen(r#"{"t":"#, r#"{"t":-5,"was":"#, 1), "negative_timestamp"),
    ];
    for (body, code) in cases {
        let (status, err) = h.post("/v1/sessions", body.to_string()).await;
        assert_eq!(status, StatusCode::BAD_REQUEST, "{code}");
        assert_eq!(err["code"], code);
        assert!(err["message"].as_str().is_some_and(|m| !m.is_empty()));
    }
    assert_eq!(h.get("/v1/health").await.1["gallery_size"], 0);

    // a session with no usable channel is kept as metadata only
    let mut empty = sessions[1].clone();
    empty.key_events.clear();
    empty.mouse_events.clear();
    let (status, out) = h.post("/v1/sessions", session_to_json(&empty)).await;
    assert_eq!(status, StatusCode::CREATED);
    assert_eq!(out["usable"], false);
    assert!(out["note"].as_str().is_some());
    let detail = h.get(&format!("/v1/sessions/{}", empty.session_id)).await.1;
    assert_eq!(detail["availability"], json!({"keystroke": false, "mouse": false, "scored": false}));
}

#[tokio::test(flavor = "multi_thread")]
async fn token_guards_everything_but_health() {
    let sessions = corpus();
    let sc = scorer(&sessions);
    let dir = tempfile::tempdir().unwrap();
    let h = open(dir.path(), &sc, 0.5, Some("s3cret"), 1000);
    assert_eq!(h.get("/v1/health").await.0, StatusCode::OK);
    let (status, err) = h.get("/v1/queue").await;
    assert_eq!((status, err["code"].as_str()), (StatusCode::UNAUTHORIZED, Some("unauthorized")));
    assert_eq!(h.call("GET", "/v1/queue", None, Some("wrong")).await.0, StatusCode::UNAUTHORIZED);
    assert_eq!(h.call("GET", "/v1/queue", None, Some("s3cret")).await.0, StatusCode::OK);
    let doc = session_to_json(&sessions[0]);
    assert_eq!(h.call("POST", "/v1/sessions", Some(doc.clone()), None).await.0, StatusCode::UNAUTHORIZED);
    assert_eq!(h.call("POST", "/v1/sessions", Some(doc), Some("s3cret")).await.0, StatusCode::CREATED);
}

/// Enrolls `sessions` and reviews the top queued flag.
async fn drive(h: &Harness, sessions: &[SessionRecord]) {
    for s in sessions {
        assert_eq!(h.post("/v1/sessions", with_thumbnail(s)).await.0, StatusCode::CREATED);
    }
    let (_, queue) = h.get("/v1/queue").await;
    if let Some(f) = queue["flags"].as_array().unwrap().first() {
        let id = f["session_id"].as_str().unwrap();
        let body = json!({"verdict": "cleared"}).to_string();
        assert_eq!(h.post(&format!("/v1/flags/{id}/review"), body).await.0, StatusCode::OK);
    }
}

#[tokio::test(flavor = "multi_thread")]
async fn restart_restores_identical_state() {
    let sessions = corpus();
    let sc = scorer(&sessions);
    let t = threshold(&sc, &sessions);
    for snapshot_every in [1, 4, 1000] {
        let dir = tempfile::tempdir().unwrap();
        let (before, queue) = {
            let h = open(dir.path(), &sc, t, None, snapshot_every);
            drive(&h, &sessions[..20]).await;
            (h.state_bytes(), h.get("/v1/queue").await.1)
        };
        // dropped without a final snapshot, as if killed
        let h = open(dir.path(), &sc, t, None, snapshot_every);
        assert_eq!(h.state_bytes(), before, "snapshot_every {snapshot_every}");
        assert_eq!(h.get("/v1/queue").await.1, queue);
        let reviewed = serde_json::from_slice::<Value>(&before).unwrap()["flags"]
            .as_object()
            .unwrap()
            .values()
            .filter(|f| f["status"] == "cleared")
            .count();
        assert_eq!(reviewed, 1);

        // keep going after the restart, restart again
        drive(&h, &sessions[20..]).await;
        let before = h.state_bytes();
        drop(h);
        assert_eq!(open(dir.path(), &sc, t, None, snapshot_every).state_bytes(), before);
    }
}

#[tokio::test(flavor = "multi_thread")]
async fn restart_matches_uninterrupted_run() {
    let sessions = corpus();
    let sc = scorer(&sessions);
    let t = threshold(&sc, &sessions);
    let straight = tempfile::tempdir().unwrap();
    let h = open(straight.path(), &sc, t, None, 5);
    drive(&h, &sessions).await;
    let want = h.state_bytes();

    let broken = tempfile::tempdir().unwrap();
    let mut cut = 0;
    for chunk in [7, 11, sessions.len()] {
        let h = open(broken.path(), &sc, t, None, 5);
        for s in &sessions[cut..chunk] {
            assert_eq!(h.post("/v1/sessions", with_thumbnail(s)).await.0, StatusCode::CREATED);
        }
        cut = chunk;
        if chunk == sessions.len() {
            let (_, queue) = h.get("/v1/queue").await;
            let id = queue["flags"][0]["session_id"].as_str().unwrap().to_string();
            let body = json!({"verdict": "cleared"}).to_string();
            assert_eq!(h.post(&format!("/v1/flags/{id}/review"), body).await.0, StatusCode::OK);
        }
    }
    let h = open(broken.path(), &sc, t, None, 5);
    // clocks differ between the runs, so compare with timestamps masked
    let mask = |bytes: Vec<u8>| {
        let mut v: Value = serde_json::from_slice(&bytes).unwrap();
        for e in v["entries"].as_array_mut().unwrap() {
            e["enrolled_at_ms"] = json!(0);
        }
        for f in v["flags"].as_object_mut().unwrap().values_mut() {
            f["created_at_ms"] = json!(0);
            f["reviewed_at_ms"] = json!(0);
        }
        v
    };
    assert_eq!(mask(h.state_bytes()), mask(want));
}

#[tokio::test(flavor = "multi_thread")]
async fn torn_log_tail_is_discarded() {
    let sessions = corpus();
    let sc = scorer(&sessions);
    let dir = tempfile::tempdir().unwrap();
    let before = {
        let h = open(dir.path(), &sc, 0.9, None, 1000);
        drive(&h, &sessions[..5]).await;
        h.state_bytes()
    };
    let log = dir.path().join(LOG_FILE);
    std::fs::OpenOptions::new().append(true).open(&log).unwrap().write_all(br#"{"seq":6,"op":"enr"#).unwrap();
    let h = open(dir.path(), &sc, 0.9, None, 1000);
    assert_eq!(h.state_bytes(), before);
    drive(&h, &sessions[5..8]).await;
    let after = h.state_bytes();
    drop(h);
    assert_eq!(open(dir.path(), &sc, 0.9, None, 1000).state_bytes(), after);
    let text = std::fs::read_to_string(&log).unwrap();
    assert!(text.lines().all(|l| serde_json::from_str::<Value>(l).is_ok()));
}

#[test]
fn serves_over_a_real_socket() {
    let sessions = corpus();
    let sc = scorer(&sessions);
    let dir = tempfile::tempdir().unwrap();
    let h = open(dir.path(), &sc, 0.5, None, 1000);
    let rt = tokio::runtime::Runtime::new().unwrap();
    let listener = rt.block_on(tokio::net::TcpListener::bind("127.0.0.1:0")).unwrap();
    let addr = listener.local_addr().unwrap();
    let router = h.router.clone();
    rt.spawn(async move { axum::serve(listener, router).await.unwrap() });
    let mut stream = std::net::TcpStream::connect(addr).unwrap();
    write!(stream, "GET /v1/health HTTP/1.1\r\nHost: x\r\nConnection: close\r\n\r\n").unwrap();
    let mut resp = String::new();
    stream.read_to_string(&mut resp).unwrap();
    assert!(resp.starts_with("HTTP/1.1 200"), "{resp}");
    let body: Value = serde_json::from_str(resp.split("\r\n\r\n").nth(1).unwrap()).unwrap();
    assert_eq!(body["status"], "ok");
}
