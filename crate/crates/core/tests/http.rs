use std::sync::mpsc;
use std::thread;
use std::time::Duration;

use serde_json::{json, Value};
use tiny_http::{Header, Response, Server};

use gier_core::attribution::{HttpScorer, NliScorer, ScorePair, ScorerError};
use gier_core::backend::{Backend, BackendError, HttpBackend};

struct Seen {
    method: String,
    url: String,
    body: Value,
    auth: Option<String>,
}

/// Serves `replies` in order, one request each, and reports what it saw.
fn serve(replies: Vec<(u16, String)>) -> (String, mpsc::Receiver<Seen>) {
    let server = Server::http("127.0.0.1:0").unwrap();
    let addr = format!("http://{}", server.server_addr().to_ip().unwrap());
    let (tx, rx) = mpsc::channel();
    thread::spawn(move || {
        for (status, body) in replies {
            let Ok(mut req) = server.recv() else { return };
            let mut text = String::new();
            req.as_reader().read_to_string(&mut text).unwrap();
            let auth = req
                .headers()
                .iter()
                .find(|h| h.field.equiv("Authorization"))
                .map(|h| h.value.to_string());
            let _ = tx.send(Seen {
                method: req.method().to_string(),
                url: req.url().to_string(),
                body: serde_json::from_str(&text).unwrap_or(Value::Null),
                auth,
            });
            let header = Header::from_bytes("Content-Type", "application/json").unwrap();
            let resp = Response::from_string(body).with_status_code(status).with_header(header);
            req.respond(resp).unwrap();
        }
    });
    (addr, rx)
}

fn chat(content: &str) -> String {
    json!({"choices": [{"message": {"role": "assistant", "content": content}}]}).to_string()
}

#[test]
fn backend_sends_chat_request() {
    let (addr, rx) = serve(vec![(200, chat("{\"decision\": \"SUPPORT\"}"))]);
    let backend = HttpBackend::new(format!("{addr}/v1/"), "gpt-4.1", Duration::from_secs(5))
        .with_api_key(Some("sk-test".into()));
    let out = backend.complete("Support or refute a claim.").unwrap();
    assert_eq!(out, "{\"decision\": \"SUPPORT\"}");
    let seen = rx.recv().unwrap();
    assert_eq!(seen.method, "POST");
    assert_eq!(seen.url, "/v1/chat/completions");
    assert_eq!(seen.auth.as_deref(), Some("Bearer sk-test"));
    assert_eq!(seen.body["model"], "gpt-4.1");
    assert_eq!(seen.body["temperature"], 0.0);
    assert_eq!(seen.body["messages"][0]["role"], "user");
    assert_eq!(seen.body["messages"][0]["content"], "Support or refute a claim.");
}

#[test]
fn server_errors_are_retried() {
    let (addr, rx) = serve(vec![
        (503, "busy".into()),
        (429, "slow down".into()),
        (200, chat("ok")),
    ]);
    let backend = HttpBackend::new(addr, "m", Duration::from_secs(5)).with_max_retries(2);
    assert_eq!(backend.complete("p").unwrap(), "ok");
    assert_eq!(rx.try_iter().count(), 3);
}

#[test]
fn retries_are_bounded() {
    let (addr, _rx) = serve(vec![(500, "a".into()), (500, "b".into())]);
    let backend = HttpBackend::new(addr, "m", Duration::from_secs(5)).with_max_retries(1);
    match backend.complete("p") {
        Err(BackendError::RetriesExhausted { attempts, last }) => {
            assert_eq!(attempts, 2);
            assert!(last.contains("500"));
        }
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn client_errors_and_bad_bodies_are_not_retried() {
    let (addr, rx) = serve(vec![(401, "no key".into())]);
    let backend = HttpBackend::new(addr, "m", Duration::from_secs(5));
    assert!(matches!(
        backend.complete("p"),
        Err(BackendError::Status { status: 401, .. })
    ));
    assert_eq!(rx.try_iter().count(), 1);

    let (addr, _rx) = serve(vec![(200, "{\"choices\": []}".into())]);
    let backend = HttpBackend::new(addr, "m", Duration::from_secs(5));
    assert!(matches!(backend.complete("p"), Err(BackendError::Malformed(_))));
    assert!(matches!(backend.complete(""), Err(BackendError::EmptyPrompt)));
}

#[test]
fn scorer_posts_pairs_and_reads_scores() {
    let scores = json!({"scores": [
        {"entailment": 0.9, "neutral": 0.05, "contradiction": 0.05},
        {"entailment": 0.1, "neutral": 0.8, "contradiction": 0.1}
    ]});
    let (addr, rx) = serve(vec![(200, scores.to_string())]);
    let scorer = HttpScorer::new(addr, Duration::from_secs(5));
    let pairs = vec![
        ScorePair::new("A boy runs.", "A kid runs."),
        ScorePair::new("A boy runs.", "A dog sleeps."),
    ];
    let out = scorer.score_batch(&pairs).unwrap();
    assert_eq!(out[0].entailment, 0.9);
    assert_eq!(out[1].neutral, 0.8);
    let seen = rx.recv().unwrap();
    assert_eq!(seen.url, "/score");
    assert_eq!(
        seen.body,
        json!({"pairs": [
            {"premise": "A boy runs.", "hypothesis": "A kid runs."},
            {"premise": "A boy runs.", "hypothesis": "A dog sleeps."}
        ]})
    );
}

#[test]
fn scorer_rejects_short_answers_and_reports_health() {
    let (addr, _rx) = serve(vec![
        (200, json!({"scores": []}).to_string()),
        (200, json!({"status": "ok"}).to_string()),
        (503, json!({"status": "loading"}).to_string()),
    ]);
    let scorer = HttpScorer::new(addr, Duration::from_secs(5));
    let err = scorer.score_batch(&[ScorePair::new("a", "b")]).unwrap_err();
    assert!(matches!(err, ScorerError::LengthMismatch { expected: 1, got: 0 }));
    assert!(scorer.healthz().unwrap().contains("ok"));
    assert!(matches!(scorer.healthz(), Err(ScorerError::Status { status: 503, .. })));
}

#[test]
fn unreachable_scorer_is_reported() {
    let port = {
        let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
        listener.local_addr().unwrap().port()
    };
    let scorer = HttpScorer::new(format!("http://127.0.0.1:{port}"), Duration::from_secs(2));
    assert!(matches!(scorer.healthz(), Err(ScorerError::Unreachable(_))));
}
