//! HTTP backend tests against a real, scripted TCP server.
//!
//! A minimal HTTP/1.1 server answers each connection with one canned
//! response, capturing the raw request so the wire format (bearer header,
//! JSON body) can be asserted byte-for-byte.

use std::io::{Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use corpuscoder::gateway::http::HttpBackend;
use corpuscoder::gateway::meter::{ModelPrice, PriceTable, UsageMeter};
use corpuscoder::gateway::retry::RetryPolicy;
use corpuscoder::gateway::wire::{ChatRequest, Message, Role};
use corpuscoder::gateway::{Backend, Gateway, GatewayError};

struct CannedResponse {
    status: u16,
    reason: &'static str,
    headers: Vec<(String, String)>,
    body: String,
    /// Sleep before answering, to force client-side timeouts.
    delay: Option<Duration>,
}

impl CannedResponse {
    fn json(status: u16, reason: &'static str, body: &str) -> Self {
        Self {
            status,
            reason,
            headers: vec![("Content-Type".to_string(), "application/json".to_string())],
            body: body.to_string(),
            delay: None,
        }
    }

    fn ok_chat(content: &str, with_usage: bool) -> Self {
        let usage = if with_usage {
            r#","usage":{"prompt_tokens":9,"completion_tokens":3}"#
        } else {
            ""
        };
        let body = format!(
            r#"{{"choices":[{{"message":{{"role":"assistant","content":"{content}"}}}}]{usage}}}"#
        );
        Self::json(200, "OK", &body)
    }
}

/// Serve one canned response per accepted connection, in order, and return
/// the raw requests once every response has been served.
fn spawn_server(responses: Vec<CannedResponse>) -> (String, JoinHandle<Vec<String>>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let endpoint = format!(
        "http://{}/v1/chat/completions",
        listener.local_addr().unwrap()
    );
    let handle = std::thread::spawn(move || {
        let mut captured = Vec::new();
        for response in responses {
            let (mut stream, _) = listener.accept().unwrap();
            captured.push(read_request(&mut stream));
            if let Some(delay) = response.delay {
                std::thread::sleep(delay);
            }
            // The client may have hung up (timeout tests); that's fine.
            let _ = write_response(&mut stream, &response);
        }
        captured
    });
    (endpoint, handle)
}

fn read_request(stream: &mut TcpStream) -> String {
    stream
        .set_read_timeout(Some(Duration::from_secs(5)))
        .unwrap();
    let mut buf = Vec::new();
    let mut chunk = [0u8; 4096];
    let header_end = loop {
        let n = stream.read(&mut chunk).unwrap();
        assert!(n > 0, "client closed before sending a full request");
        buf.extend_from_slice(&chunk[..n]);
        if let Some(pos) = find_blank_line(&buf) {
            break pos;
        }
    };
    let headers = String::from_utf8_lossy(&buf[..header_end]).to_lowercase();
    let content_length: usize = headers
        .lines()
        .find_map(|l| l.strip_prefix("content-length:"))
        .map(|v| v.trim().parse().unwrap())
        .unwrap_or(0);
    let body_start = header_end + 4;
    while buf.len() < body_start + content_length {
        let n = stream.read(&mut chunk).unwrap();
        assert!(n > 0, "client closed mid-body");
        buf.extend_from_slice(&chunk[..n]);
    }
    String::from_utf8(buf).unwrap()
}

fn find_blank_line(buf: &[u8]) -> Option<usize> {
    buf.windows(4).position(|w| w == b"\r\n\r\n")
}

fn write_response(stream: &mut TcpStream, response: &CannedResponse) -> std::io::Result<()> {
    let mut out = format!("HTTP/1.1 {} {}\r\n", response.status, response.reason);
    for (name, value) in &response.headers {
        out.push_str(&format!("{name}: {value}\r\n"));
    }
    out.push_str(&format!(
        "Content-Length: {}\r\nConnection: close\r\n\r\n{}",
        response.body.len(),
        response.body
    ));
    stream.write_all(out.as_bytes())
}

fn request() -> ChatRequest {
    ChatRequest {
        model: "gpt-4".to_string(),
        temperature: 0.2,
        max_tokens: None,
        messages: vec![
            Message {
                role: Role::System,
                content: "Rate the text. [Answer with a number]".to_string(),
            },
            Message {
                role: Role::User,
                content: "'a text'".to_string(),
            },
        ],
    }
}

fn backend(endpoint: &str) -> HttpBackend {
    HttpBackend::new(endpoint, "test-key-abc123", Duration::from_secs(2)).unwrap()
}

#[test]
fn sends_bearer_auth_and_the_chat_wire_format() {
    let (endpoint, server) =
        spawn_server(vec![CannedResponse::ok_chat("0.7; looks populist", true)]);
    let reply = backend(&endpoint).send(&request()).unwrap();
    assert_eq!(reply.content, "0.7; looks populist");
    let usage = reply.usage.unwrap();
    assert_eq!(usage.prompt_tokens, 9);
    assert_eq!(usage.completion_tokens, 3);

    let captured = server.join().unwrap();
    let raw = &captured[0];
    let lower = raw.to_lowercase();
    assert!(
        lower.contains("authorization: bearer test-key-abc123"),
        "missing bearer header in:\n{raw}"
    );
    assert!(lower.starts_with("post "));

    let body_start = raw.find("\r\n\r\n").unwrap() + 4;
    let body: serde_json::Value = serde_json::from_str(&raw[body_start..]).unwrap();
    assert_eq!(body["model"], "gpt-4");
    assert_eq!(body["temperature"], 0.2);
    assert_eq!(body["messages"][0]["role"], "system");
    assert_eq!(body["messages"][1]["content"], "'a text'");
    assert!(
        body.get("max_tokens").is_none(),
        "absent max_tokens must be omitted, not null"
    );
}

#[test]
fn status_401_is_a_fatal_auth_failure() {
    let (endpoint, server) = spawn_server(vec![CannedResponse::json(
        401,
        "Unauthorized",
        r#"{"error":{"message":"Incorrect API key provided"}}"#,
    )]);
    let err = backend(&endpoint).send(&request()).unwrap_err();
    assert!(matches!(err, GatewayError::AuthFailed { .. }), "{err:?}");
    assert!(!err.retryable());
    server.join().unwrap();
}

#[test]
fn status_429_is_retryable_and_carries_retry_after() {
    let mut response = CannedResponse::json(429, "Too Many Requests", r#"{"error":{}}"#);
    response
        .headers
        .push(("Retry-After".to_string(), "7".to_string()));
    let (endpoint, server) = spawn_server(vec![response]);
    let err = backend(&endpoint).send(&request()).unwrap_err();
    let GatewayError::RateLimited { retry_after } = err else {
        panic!("expected RateLimited, got {err:?}");
    };
    assert_eq!(retry_after, Some(Duration::from_secs(7)));
    server.join().unwrap();
}

#[test]
fn status_503_is_a_retryable_server_error() {
    let (endpoint, server) = spawn_server(vec![CannedResponse::json(
        503,
        "Service Unavailable",
        "overloaded",
    )]);
    let err = backend(&endpoint).send(&request()).unwrap_err();
    assert!(
        matches!(err, GatewayError::ServerError { status: 503, .. }),
        "{err:?}"
    );
    assert!(err.retryable());
    server.join().unwrap();
}

#[test]
fn context_length_rejection_is_fatal() {
    let (endpoint, server) = spawn_server(vec![CannedResponse::json(
        400,
        "Bad Request",
        r#"{"error":{"code":"context_length_exceeded","message":"too long"}}"#,
    )]);
    let err = backend(&endpoint).send(&request()).unwrap_err();
    assert!(
        matches!(err, GatewayError::ContextLengthExceeded { .. }),
        "{err:?}"
    );
    assert!(!err.retryable());
    server.join().unwrap();
}

#[test]
fn other_400s_are_fatal_api_errors() {
    let (endpoint, server) = spawn_server(vec![CannedResponse::json(
        400,
        "Bad Request",
        r#"{"error":{"code":"invalid_request_error","message":"bad params"}}"#,
    )]);
    let err = backend(&endpoint).send(&request()).unwrap_err();
    assert!(
        matches!(err, GatewayError::Api { status: 400, .. }),
        "{err:?}"
    );
    assert!(!err.retryable());
    server.join().unwrap();
}

#[test]
fn unparseable_success_body_is_malformed() {
    let (endpoint, server) = spawn_server(vec![CannedResponse::json(200, "OK", "not json at all")]);
    let err = backend(&endpoint).send(&request()).unwrap_err();
    assert!(
        matches!(err, GatewayError::MalformedResponse { .. }),
        "{err:?}"
    );
    assert!(err.retryable());
    server.join().unwrap();
}

#[test]
fn empty_choices_is_malformed() {
    let (endpoint, server) =
        spawn_server(vec![CannedResponse::json(200, "OK", r#"{"choices":[]}"#)]);
    let err = backend(&endpoint).send(&request()).unwrap_err();
    assert!(
        matches!(err, GatewayError::MalformedResponse { .. }),
        "{err:?}"
    );
    server.join().unwrap();
}

#[test]
fn slow_server_times_out() {
    let mut response = CannedResponse::ok_chat("0.1; late", true);
    response.delay = Some(Duration::from_millis(900));
    let (endpoint, server) = spawn_server(vec![response]);
    let backend = HttpBackend::new(&endpoint, "k", Duration::from_millis(150)).unwrap();
    let err = backend.send(&request()).unwrap_err();
    assert!(matches!(err, GatewayError::Timeout { .. }), "{err:?}");
    assert!(err.retryable());
    server.join().unwrap();
}

#[test]
fn refused_connection_is_a_network_error() {
    // Bind then drop, so the port is very likely closed when dialed.
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let endpoint = format!(
        "http://{}/v1/chat/completions",
        listener.local_addr().unwrap()
    );
    drop(listener);
    let err = backend(&endpoint).send(&request()).unwrap_err();
    assert!(matches!(err, GatewayError::Network { .. }), "{err:?}");
    assert!(err.retryable());
}

#[test]
fn gateway_retries_transient_http_failures_end_to_end() {
    let (endpoint, server) = spawn_server(vec![
        CannedResponse::json(500, "Internal Server Error", "boom"),
        CannedResponse::ok_chat("0.4; second try", true),
    ]);
    let mut prices = PriceTable::new();
    prices.insert(
        "gpt-4",
        ModelPrice {
            prompt_per_1k: 0.03,
            completion_per_1k: 0.06,
        },
    );
    let gateway = Gateway::new(
        Box::new(backend(&endpoint)),
        RetryPolicy {
            max_attempts: 3,
            base_delay: Duration::from_millis(1),
            max_delay: Duration::from_millis(2),
            jitter: 0.0,
        },
        Arc::new(UsageMeter::new(None)),
        prices,
        None,
        0,
    );
    let completion = gateway.complete(&request()).unwrap();
    assert_eq!(completion.attempts, 2);
    assert_eq!(completion.response.content, "0.4; second try");
    assert!(!completion.usage_estimated);
    assert_eq!(completion.usage.prompt_tokens, 9);
    // 9 * 0.03/1000 + 3 * 0.06/1000
    assert!((completion.cost.unwrap() - 0.00045).abs() < 1e-12);
    assert!((gateway.meter().spent() - 0.00045).abs() < 1e-12);
    server.join().unwrap();
}

#[test]
fn missing_usage_falls_back_to_an_estimate() {
    let (endpoint, server) = spawn_server(vec![CannedResponse::ok_chat("0.9; estimated", false)]);
    let gateway = Gateway::new(
        Box::new(backend(&endpoint)),
        RetryPolicy {
            max_attempts: 1,
            base_delay: Duration::from_millis(1),
            max_delay: Duration::from_millis(1),
            jitter: 0.0,
        },
        Arc::new(UsageMeter::new(None)),
        PriceTable::new(),
        None,
        0,
    );
    let completion = gateway.complete(&request()).unwrap();
    assert!(completion.usage_estimated);
    assert!(completion.usage.total() > 0);
    server.join().unwrap();
}
