use std::net::SocketAddr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::extract::State;
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::post;
use axum::{Json, Router};
use serde_json::{json, Value};

use convfill::adapters::http::DEFAULT_SYSTEM_PROMPT;
use convfill::adapters::{
    BackendError, DialogueHistory, HttpBackend, HttpBackendConfig, HttpInfill, HttpInfillConfig, Infill,
    ScriptedInfill, TextGenerator,
};
use convfill::dataset::{llm_generate, template_generate, GENERATION_SYSTEM_PROMPT};
use convfill::entailment::{HttpClassifier, HttpClassifierConfig, Label, NliClassifier};
use convfill::{Conversation, Dialogue, EventKind, SilencePolicy, SystemClock, TurnEngine, TurnError};

type Captured = Arc<Mutex<Vec<Value>>>;

#[derive(Clone)]
struct Stub {
    seen: Captured,
    reply: Arc<dyn Fn(&Value) -> Response + Send + Sync>,
    in_flight: Arc<AtomicUsize>,
    peak: Arc<AtomicUsize>,
    delay: Duration,
}

async fn handle(State(s): State<Stub>, Json(body): Json<Value>) -> Response {
    let now = s.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
    s.peak.fetch_max(now, Ordering::SeqCst);
    s.seen.lock().unwrap().push(body.clone());
    if !s.delay.is_zero() {
        tokio::time::sleep(s.delay).await;
    }
    s.in_flight.fetch_sub(1, Ordering::SeqCst);
    (s.reply)(&body)
}

fn serve(delay: Duration, reply: impl Fn(&Value) -> Response + Send + Sync + 'static) -> (String, Stub) {
    let stub = Stub {
        seen: Arc::default(),
        reply: Arc::new(reply),
        in_flight: Arc::default(),
        peak: Arc::default(),
        delay,
    };
    let app = Router::new().route("/", post(handle)).with_state(stub.clone());
    let (tx, rx) = std::sync::mpsc::channel::<SocketAddr>();
    std::thread::spawn(move || {
        let rt = tokio::runtime::Runtime::new().unwrap();
        rt.block_on(async move {
            let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
            tx.send(listener.local_addr().unwrap()).unwrap();
            axum::serve(listener, app).await.unwrap();
        });
    });
    let addr = rx.recv().unwrap();
    (format!("http://{addr}/"), stub)
}

fn sse(deltas: &[&str]) -> Response {
    let mut body = String::new();
    for d in deltas {
        body.push_str(&format!("data: {}\n\n", json!({"choices": [{"delta": {"content": d}}]})));
    }
    body.push_str("data: [DONE]\n\n");
    ([(header::CONTENT_TYPE, "text/event-stream")], body).into_response()
}

fn engine(backend: HttpBackend) -> TurnEngine {
    TurnEngine::new(
        Arc::new(backend),
        Arc::new(ScriptedInfill::echo(Duration::ZERO)),
        Arc::new(SystemClock::new()),
        SilencePolicy::new(5.0, 3).unwrap(),
    )
}

#[test]
fn backend_stream_is_segmented_and_prompted_concisely() {
    let (url, stub) = serve(Duration::ZERO, |_| sse(&["Paris is the capital", ". It is", " on the Seine."]));
    let mut d = Dialogue::new(engine(HttpBackend::new(HttpBackendConfig::new(url, "big"))), Conversation::new("c", "test"));
    let t = d.run_turn("Capital of France?", &mut ()).unwrap().clone();
    let chunks: Vec<_> = t
        .events()
        .iter()
        .filter(|e| e.kind == EventKind::Chunk)
        .map(|e| e.text.clone().unwrap())
        .collect();
    assert_eq!(chunks, vec!["Paris is the capital.", "It is on the Seine."]);
    d.run_turn("And Italy?", &mut ()).unwrap();

    let seen = stub.seen.lock().unwrap();
    assert_eq!(seen.len(), 2);
    for req in seen.iter() {
        assert_eq!(req["messages"][0], json!({"role": "system", "content": DEFAULT_SYSTEM_PROMPT}));
        assert_eq!(req["stream"], json!(true));
        assert_eq!(req["model"], json!("big"));
    }
    let second = seen[1]["messages"].as_array().unwrap();
    assert_eq!(second.len(), 4);
    assert_eq!(second[1]["content"], "Capital of France?");
    assert_eq!(second[2]["role"], "assistant");
    assert_eq!(second[2]["content"], "Paris is the capital. It is on the Seine.");
    assert_eq!(second[3]["content"], "And Italy?");
}

#[test]
fn split_sentences_become_two_chunks() {
    let (url, _) = serve(Duration::ZERO, |_| sse(&["X. Y."]));
    let t = convfill::engine::run_turn("q", &engine(HttpBackend::new(HttpBackendConfig::new(url, ""))), &mut ()).unwrap();
    let chunks: Vec<_> = t.events().iter().filter_map(|e| e.text.clone()).collect();
    assert_eq!(chunks, vec!["X.", "Y."]);
}

#[test]
fn plain_json_reply_is_accepted() {
    let (url, _) = serve(Duration::ZERO, |_| {
        Json(json!({"choices": [{"message": {"role": "assistant", "content": "One. Two."}}]})).into_response()
    });
    let t = convfill::engine::run_turn("q", &engine(HttpBackend::new(HttpBackendConfig::new(url, ""))), &mut ()).unwrap();
    assert_eq!(t.chunk_count(), 2);
}

#[test]
fn unreachable_backend_is_a_network_error() {
    let e = engine(HttpBackend::new(HttpBackendConfig::new("http://127.0.0.1:9/v1/chat", "")));
    match convfill::engine::run_turn("q", &e, &mut ()) {
        Err(TurnError::Backend { error: BackendError::Network(_), partial }) => assert_eq!(partial.n(), 0),
        other => panic!("expected a network error, got {other:?}"),
    }
}

#[test]
fn rejected_key_is_an_auth_error() {
    let (url, _) = serve(Duration::ZERO, |_| StatusCode::UNAUTHORIZED.into_response());
    let b = HttpBackend::new(HttpBackendConfig::new(url, ""));
    let mut h = DialogueHistory::new();
    h.push_user("q").unwrap();
    assert!(matches!(b.complete(None, &h), Err(BackendError::Auth(_))));
}

#[test]
fn infill_request_and_first_line() {
    let (url, stub) = serve(Duration::ZERO, |_| Json(json!({"choices": [{"text": "  Sure thing.\nIgnored."}]})).into_response());
    let infill = HttpInfill::new(HttpInfillConfig::new(url));
    let ctx = "<|im_start|>user\nhi<|im_end|>\n<|im_start|>knowledge\n<|sil|><|im_end|>\n";
    let g = infill.generate(ctx, &SystemClock::new()).unwrap();
    assert_eq!(g.text, "Sure thing.");
    assert!(g.first_output >= g.started);
    let req = &stub.seen.lock().unwrap()[0];
    assert_eq!(req["prompt"], format!("{ctx}<|im_start|>assistant\n"));
    assert_eq!(req["stop"], json!(["<|im_end|>"]));
}

#[test]
fn llm_generation_sends_seed_verbatim() {
    let doc = template_generate("customer_service", "a busy parent asking about a late delivery", 11).unwrap();
    let reply = doc.to_json();
    let (url, stub) = serve(Duration::ZERO, move |_| {
        Json(json!({"choices": [{"message": {"content": format!("```json\n{reply}\n```")}}]})).into_response()
    });
    let generator = HttpBackend::new(HttpBackendConfig::new(url, "writer"));
    let got = llm_generate("customer_service", "a busy parent asking about a late delivery", &generator).unwrap();
    assert_eq!(got.turns, doc.turns);
    let req = &stub.seen.lock().unwrap()[0];
    assert_eq!(req["stream"], json!(false));
    assert_eq!(req["messages"][0]["content"], GENERATION_SYSTEM_PROMPT);
    assert!(req["messages"][1]["content"]
        .as_str()
        .unwrap()
        .contains("a busy parent asking about a late delivery"));
}

#[test]
fn classifier_client_bounds_in_flight_requests() {
    let (url, stub) = serve(Duration::from_millis(40), |body| {
        let label = if body["hypothesis"] == body["premise"] { "entailment" } else { "neutral" };
        Json(json!({"label": label, "scores": if label == "entailment" { [0.9, 0.08, 0.02] } else { [0.1, 0.8, 0.1] }}))
            .into_response()
    });
    let c = Arc::new(HttpClassifier::new(HttpClassifierConfig {
        url,
        max_in_flight: 2,
        timeout_seconds: 10.0,
    }));
    let handles: Vec<_> = (0..8)
        .map(|i| {
            let c = c.clone();
            std::thread::spawn(move || c.classify("a b", if i % 2 == 0 { "a b" } else { "c" }).unwrap())
        })
        .collect();
    let verdicts: Vec<_> = handles.into_iter().map(|h| h.join().unwrap()).collect();
    assert_eq!(verdicts.iter().filter(|v| v.label == Label::Entailment).count(), 4);
    assert!((verdicts[0].score - 0.9).abs() < 1e-12);
    assert!(stub.peak.load(Ordering::SeqCst) <= 2);
    assert_eq!(stub.seen.lock().unwrap().len(), 8);
}
