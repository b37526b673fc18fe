//! HTTP backend tests against a minimal in-process server.
//!
//! Each scripted exchange serves one connection: the server captures the
//! request, replies with a canned status and body, and closes. The client
//! sends `connection: close` semantics implicitly because the server does;
//! every retry therefore arrives as a fresh connection.

use std::io::{Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::mpsc;
use std::sync::{Mutex, OnceLock};
use std::thread;

use deskrl::backend::http::{HttpBackend, HttpBackendConfig};
use deskrl::backend::{Backend, FinishReason, GenRequest};

/// One scripted server turn.
struct Exchange {
    status: u16,
    body: String,
}

/// Request as seen by the server: raw header block plus decoded body.
struct Captured {
    headers: String,
    body: String,
}

fn find_subslice(haystack: &[u8], needle: &[u8]) -> Option<usize> {
    haystack.windows(needle.len()).position(|w| w == needle)
}

fn read_request(stream: &mut TcpStream) -> Captured {
    let mut buf = Vec::new();
    let mut tmp = [0u8; 4096];
    let header_end = loop {
        if let Some(pos) = find_subslice(&buf, b"\r\n\r\n") {
            break pos + 4;
        }
        let n = stream.read(&mut tmp).expect("read request headers");
        assert!(n > 0, "connection closed before request headers completed");
        buf.extend_from_slice(&tmp[..n]);
    };
    let headers = String::from_utf8_lossy(&buf[..header_end]).to_string();
    let content_length: usize = headers
        .lines()
        .find_map(|line| {
            let (key, value) = line.split_once(':')?;
            key.eq_ignore_ascii_case("content-length").then(|| value.trim().parse().ok())?
        })
        .unwrap_or(0);
    while buf.len() < header_end + content_length {
        let n = stream.read(&mut tmp).expect("read request body");
        assert!(n > 0, "connection closed before request body completed");
        buf.extend_from_slice(&tmp[..n]);
    }
    Captured {
        headers,
        body: String::from_utf8(buf[header_end..].to_vec()).expect("request body is utf-8"),
    }
}

/// Serves the script on an ephemeral port, one connection per exchange.
/// Returns the base URL and a channel yielding each captured request.
fn serve(script: Vec<Exchange>) -> (String, mpsc::Receiver<Captured>) {
    let listener = TcpListener::bind("127.0.0.1:0").expect("bind mock server");
    let addr = listener.local_addr().unwrap();
    let (tx, rx) = mpsc::channel();
    thread::spawn(move || {
        for exchange in script {
            let (mut stream, _) = listener.accept().expect("accept connection");
            let captured = read_request(&mut stream);
            let _ = tx.send(captured);
            let response = format!(
                "HTTP/1.1 {} MOCK\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{}",
                exchange.status,
                exchange.body.len(),
                exchange.body
            );
            stream.write_all(response.as_bytes()).expect("write response");
            let _ = stream.flush();
        }
    });
    (format!("http://{addr}"), rx)
}

/// Chat-completion body with one choice per (content, finish_reason) pair.
fn chat_body(choices: &[(&str, &str)]) -> String {
    let choices: Vec<serde_json::Value> = choices
        .iter()
        .map(|(content, finish)| {
            serde_json::json!({
                "message": {"role": "assistant", "content": content},
                "finish_reason": finish,
            })
        })
        .collect();
    serde_json::json!({ "choices": choices }).to_string()
}

fn request(n: usize) -> GenRequest {
    GenRequest {
        system_prompt: "be brief".to_string(),
        user_prompt: "what is 2+2".to_string(),
        n,
        max_tokens: 32,
        temperature: 1.0,
        seed: Some(7),
    }
}

/// Backend with fast retries pointed at the given base URL.
fn backend(base_url: &str) -> HttpBackend {
    let mut config = HttpBackendConfig::new(base_url, "mock-model");
    config.retry_base_delay_ms = 1;
    HttpBackend::new(config).unwrap()
}

/// Process env is shared across test threads; every test that mutates it
/// holds this lock, and reqwest's builder also reads proxy variables.
fn env_lock() -> &'static Mutex<()> {
    static LOCK: OnceLock<Mutex<()>> = OnceLock::new();
    LOCK.get_or_init(|| Mutex::new(()))
}

#[test]
fn success_path_returns_choices_in_request_order() {
    let _guard = env_lock().lock().unwrap();
    let (url, rx) = serve(vec![Exchange { status: 200, body: chat_body(&[("four", "stop"), ("4", "length")]) }]);
    let response = backend(&url).generate(&request(2)).unwrap();
    assert_eq!(response.texts, vec!["four".to_string(), "4".to_string()]);
    assert_eq!(response.finish_reasons, vec![FinishReason::Stop, FinishReason::Length]);

    let captured = rx.recv().unwrap();
    let body: serde_json::Value = serde_json::from_str(&captured.body).unwrap();
    assert_eq!(body["model"], "mock-model");
    assert_eq!(body["messages"][0]["role"], "system");
    assert_eq!(body["messages"][0]["content"], "be brief");
    assert_eq!(body["messages"][1]["role"], "user");
    assert_eq!(body["messages"][1]["content"], "what is 2+2");
    assert_eq!(body["n"], 2);
    assert_eq!(body["max_tokens"], 32);
    assert_eq!(body["temperature"], 1.0);
    assert_eq!(body["seed"], 7);
    assert!(captured.headers.starts_with("POST /v1/chat/completions HTTP/1.1\r\n"));
}

#[test]
fn prompt_and_completion_text_pass_through_byte_identically() {
    let _guard = env_lock().lock().unwrap();
    let completion = "thinking...\n\\boxed{\\frac{1}{2}} and \"quotes\" √2 ≠ ½ \t end";
    let (url, rx) = serve(vec![Exchange { status: 200, body: chat_body(&[(completion, "stop")]) }]);
    let tricky = GenRequest {
        system_prompt: "line one\nline two with \\boxed{} and \"double quotes\"".to_string(),
        user_prompt: "计算 3 + 4，然后 \\boxed{7}\nnewline \u{1F600}".to_string(),
        n: 1,
        max_tokens: 64,
        temperature: 0.0,
        seed: None,
    };
    let response = backend(&url).generate(&tricky).unwrap();
    assert_eq!(response.texts[0], completion);

    let body: serde_json::Value = serde_json::from_str(&rx.recv().unwrap().body).unwrap();
    assert_eq!(body["messages"][0]["content"].as_str().unwrap(), tricky.system_prompt);
    assert_eq!(body["messages"][1]["content"].as_str().unwrap(), tricky.user_prompt);
    assert!(body.get("seed").is_none(), "absent seed must be omitted from the wire body");
}

#[test]
fn server_error_then_success_retries_transparently() {
    let _guard = env_lock().lock().unwrap();
    let (url, rx) = serve(vec![
        Exchange { status: 500, body: "overloaded".to_string() },
        Exchange { status: 200, body: chat_body(&[("ok", "stop")]) },
    ]);
    let response = backend(&url).generate(&request(1)).unwrap();
    assert_eq!(response.texts, vec!["ok".to_string()]);
    assert_eq!(rx.iter().count(), 2, "exactly one retry after the 500");
}

#[test]
fn malformed_payload_then_success_retries_transparently() {
    let _guard = env_lock().lock().unwrap();
    let (url, rx) = serve(vec![
        Exchange { status: 200, body: "not json at all".to_string() },
        Exchange { status: 200, body: chat_body(&[("recovered", "stop")]) },
    ]);
    let response = backend(&url).generate(&request(1)).unwrap();
    assert_eq!(response.texts, vec!["recovered".to_string()]);
    assert_eq!(rx.iter().count(), 2);
}

#[test]
fn wrong_choice_count_exhausts_retry_budget_then_errors() {
    let _guard = env_lock().lock().unwrap();
    let one_choice = chat_body(&[("only one", "stop")]);
    let script: Vec<Exchange> =
        (0..4).map(|_| Exchange { status: 200, body: one_choice.clone() }).collect();
    let (url, rx) = serve(script);
    let err = backend(&url).generate(&request(2)).unwrap_err().to_string();
    assert!(err.contains("4 attempts"), "error should count attempts: {err}");
    assert!(err.contains("expected 2 choices, got 1"), "error should carry the last failure: {err}");
    assert_eq!(rx.iter().count(), 4, "initial attempt plus max_retries=3");
}

#[test]
fn bearer_token_read_from_configured_env_var() {
    let _guard = env_lock().lock().unwrap();
    std::env::set_var("DESKRL_TEST_BEARER_KEY", "sekrit-token");
    let (url, rx) = serve(vec![Exchange { status: 200, body: chat_body(&[("ok", "stop")]) }]);
    let mut config = HttpBackendConfig::new(&url, "mock-model");
    config.retry_base_delay_ms = 1;
    config.api_key_env = "DESKRL_TEST_BEARER_KEY".to_string();
    let backend = HttpBackend::new(config).unwrap();
    std::env::remove_var("DESKRL_TEST_BEARER_KEY");
    backend.generate(&request(1)).unwrap();
    let headers = rx.recv().unwrap().headers.to_ascii_lowercase();
    assert!(headers.contains("authorization: bearer sekrit-token"), "missing bearer header: {headers}");
}

#[test]
fn no_bearer_header_when_env_var_unset() {
    let _guard = env_lock().lock().unwrap();
    std::env::remove_var("DESKRL_TEST_ABSENT_KEY");
    let (url, rx) = serve(vec![Exchange { status: 200, body: chat_body(&[("ok", "stop")]) }]);
    let mut config = HttpBackendConfig::new(&url, "mock-model");
    config.retry_base_delay_ms = 1;
    config.api_key_env = "DESKRL_TEST_ABSENT_KEY".to_string();
    HttpBackend::new(config).unwrap().generate(&request(1)).unwrap();
    let headers = rx.recv().unwrap().headers.to_ascii_lowercase();
    assert!(!headers.contains("authorization:"), "unexpected auth header: {headers}");
}

#[test]
fn unreachable_server_reports_backend_unavailable() {
    let _guard = env_lock().lock().unwrap();
    // Bind then drop to get a port with nothing listening.
    let port = {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        listener.local_addr().unwrap().port()
    };
    let mut config = HttpBackendConfig::new(format!("http://127.0.0.1:{port}"), "mock-model");
    config.retry_base_delay_ms = 1;
    config.max_retries = 1;
    let err = HttpBackend::new(config).unwrap().generate(&request(1)).unwrap_err().to_string();
    assert!(err.contains("2 attempts"), "error should count attempts: {err}");
}
