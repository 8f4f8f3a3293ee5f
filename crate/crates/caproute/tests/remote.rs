use std::net::SocketAddr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use axum::extract::State;
use axum::http::{HeaderMap, StatusCode};
use axum::routing::post;
use axum::Json;
use caproute::config::{DeconstructorSpec, EmbedderSpec, EvaluatorSpec, RemoteChatSpec};
use caproute::remote::{HttpChatClient, HttpEmbedder, RemoteEndpoint};
use caproute::ServiceConfig;
use caproute_core::deconstruct::{KeywordRulesSpec, ProfileTemplate};
use caproute_core::{
    BackendError, CapabilityProfile, ChatCompletion, DifficultyLevel, Embedder, ExecutionRecord, HistoryEntry, Library,
    RoutingConfig,
};
use serde_json::{json, Value};

const PROFILE: &str = r#"```json
{"S": ["Calculus"], "S_reason": "integration", "K": ["math"], "K_reason": "analysis", "D": "D2", "D_reason": "multi-step"}
```"#;

#[derive(Default)]
struct Mock {
    chat_calls: AtomicUsize,
    /// Number of initial chat calls answered with garbage.
    garbage_first: usize,
}

async fn chat(State(m): State<Arc<Mock>>, headers: HeaderMap, Json(body): Json<Value>) -> (StatusCode, Json<Value>) {
    if headers.get("authorization").and_then(|v| v.to_str().ok()) != Some("Bearer sekret") {
        return (StatusCode::UNAUTHORIZED, Json(json!({"error": "no token"})));
    }
    let n = m.chat_calls.fetch_add(1, Ordering::SeqCst);
    let system = body["messages"][0]["content"].as_str().unwrap_or_default();
    let content = if n < m.garbage_first {
        "I am not JSON".to_string()
    } else if system.contains("Decomposition") {
        PROFILE.to_string()
    } else {
        json!({"thinking": "A covers it", "valid_representatives": ["A"]}).to_string()
    };
    (StatusCode::OK, Json(json!({"choices": [{"message": {"role": "assistant", "content": content}}]})))
}

async fn embeddings(Json(body): Json<Value>) -> Json<Value> {
    let text = body["input"].as_str().unwrap_or_default();
    let v = [text.len() as f64, 1.0, text.matches(' ').count() as f64, 2.0];
    Json(json!({"data": [{"embedding": v}]}))
}

fn start(mock: Mock) -> (SocketAddr, Arc<Mock>, tokio::runtime::Runtime) {
    let mock = Arc::new(mock);
    let app = axum::Router::new()
        .route("/v1/chat/completions", post(chat))
        .route("/v1/embeddings", post(embeddings))
        .with_state(mock.clone());
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build().unwrap();
    let listener = rt.block_on(tokio::net::TcpListener::bind("127.0.0.1:0")).unwrap();
    let addr = listener.local_addr().unwrap();
    rt.spawn(async move { axum::serve(listener, app).await });
    (addr, mock, rt)
}

fn endpoint(addr: SocketAddr, key: Option<&str>) -> RemoteEndpoint {
    RemoteEndpoint { base_url: format!("http://{addr}/v1/"), model: "mock".into(), api_key_env: key.map(String::from), timeout_secs: 5 }
}

#[test]
fn chat_client_and_embedder_speak_the_wire_format() {
    std::env::set_var("CAPROUTE_TEST_KEY", "sekret");
    let (addr, _, _rt) = start(Mock::default());
    let chat = HttpChatClient::new(endpoint(addr, Some("CAPROUTE_TEST_KEY"))).unwrap();
    assert!(chat.complete("Decomposition", "q").unwrap().contains("Calculus"));
    assert!(chat.probe());

    let anonymous = HttpChatClient::new(endpoint(addr, None)).unwrap();
    assert!(matches!(anonymous.complete("s", "u"), Err(BackendError::Unavailable(_))));

    let emb = HttpEmbedder::new(endpoint(addr, None), 4).unwrap();
    assert_eq!(emb.embed("a b c").unwrap().values(), &[5.0, 1.0, 2.0, 2.0]);
    let wrong = HttpEmbedder::new(endpoint(addr, None), 3).unwrap();
    assert!(wrong.embed("x").is_err());

    assert!(HttpChatClient::new(endpoint(addr, Some("CAPROUTE_TEST_MISSING"))).is_err());
    let dead = HttpChatClient::new(RemoteEndpoint { base_url: "http://127.0.0.1:9".into(), ..endpoint(addr, None) }).unwrap();
    assert!(!dead.probe());
}

#[test]
fn fully_remote_pipeline_routes_with_retries() {
    std::env::set_var("CAPROUTE_TEST_KEY", "sekret");
    let (addr, mock, _rt) = start(Mock { garbage_first: 1, ..Mock::default() });
    let remote_chat = RemoteChatSpec { endpoint: endpoint(addr, Some("CAPROUTE_TEST_KEY")), retries: 2 };
    let mut cfg = ServiceConfig::deterministic(
        RoutingConfig::new(vec!["small".into(), "large".into()], "large"),
        KeywordRulesSpec {
            rules: vec![],
            default: ProfileTemplate { skills: vec!["x".into()], knowledge: vec!["none".into()], difficulty: DifficultyLevel::D0 },
        },
    );
    cfg.deconstructor = DeconstructorSpec::RemoteChat(remote_chat.clone());
    cfg.evaluator = EvaluatorSpec::RemoteChat(remote_chat);
    cfg.embedder = EmbedderSpec::RemoteEmbedding { endpoint: endpoint(addr, None), dim: 4 };

    let history = HistoryEntry {
        id: "h".into(),
        query: "integrate x squared".into(),
        profile: CapabilityProfile::from_labels(&["calculus"], &["math"], DifficultyLevel::D3).unwrap(),
        records: vec![ExecutionRecord::new("small", 0.9, 1.0).unwrap(), ExecutionRecord::new("large", 0.9, 9.0).unwrap()],
    };
    let router = cfg.build_router(Library::from_entries([history]).unwrap()).unwrap();
    let d = router.route("integrate sin x").unwrap();
    assert_eq!(d.chosen_model, "small");
    assert_eq!(d.trace.valid_set, vec!["h".to_string()]);
    assert_eq!(d.trace.thought.as_deref(), Some("A covers it"));
    // one garbage reply, one good deconstruction, one judgement
    assert_eq!(mock.chat_calls.load(Ordering::SeqCst), 3);
}
