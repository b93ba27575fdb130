use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::mpsc;
use std::thread;

use maestro::architect::{ChatClient, ChatError, ChatRequest, HttpChatClient, HttpClientConfig};

/// Serves one canned reply per connection and forwards each raw request.
fn stub(replies: Vec<(u16, String)>) -> (String, mpsc::Receiver<String>, thread::JoinHandle<()>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1/chat/completions", listener.local_addr().unwrap());
    let (tx, rx) = mpsc::channel();
    let handle = thread::spawn(move || {
        for (status, body) in replies {
            let (stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut head = String::new();
            let mut len = 0;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                    len = v.trim().parse().unwrap();
                }
                head.push_str(&line);
                if line == "\r\n" || line.is_empty() {
                    break;
                }
            }
            let mut body_in = vec![0; len];
            reader.read_exact(&mut body_in).unwrap();
            tx.send(head + &String::from_utf8(body_in).unwrap()).unwrap();
            let mut stream = stream;
            write!(
                stream,
                "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                body.len()
            )
            .unwrap();
        }
    });
    (url, rx, handle)
}

fn request() -> ChatRequest {
    ChatRequest {
        model: "test-model".into(),
        system: "TASK: reward-program".into(),
        user: "difficulty: 0.5".into(),
        temperature: 0.2,
        max_tokens: 64,
        timeout_ms: 5_000,
    }
}

fn client(endpoint: String, retries: u32) -> HttpChatClient {
    HttpChatClient::new(HttpClientConfig { endpoint, max_retries: retries, backoff_ms: 1 }, "secret".into()).unwrap()
}

#[test]
fn retries_server_errors_then_parses_reply() {
    let ok = r#"{"choices":[{"message":{"content":"```reward\ntanh(queue)\n```"}}],"usage":{"prompt_tokens":12,"completion_tokens":5}}"#;
    let (url, rx, h) = stub(vec![(503, "{}".into()), (200, ok.into())]);
    let resp = client(url, 2).chat(&request()).unwrap();
    h.join().unwrap();
    assert_eq!(resp.text, "```reward\ntanh(queue)\n```");
    assert_eq!((resp.prompt_tokens, resp.completion_tokens), (12, 5));
    let seen: Vec<String> = rx.try_iter().collect();
    assert_eq!(seen.len(), 2);
    let raw = &seen[1];
    assert!(raw.starts_with("POST /v1/chat/completions"));
    assert!(raw.to_ascii_lowercase().contains("authorization: bearer secret"));
    let body: serde_json::Value = serde_json::from_str(raw.split("\r\n\r\n").nth(1).unwrap()).unwrap();
    assert_eq!(body["model"], "test-model");
    assert_eq!(body["messages"][0]["role"], "system");
    assert_eq!(body["messages"][1]["content"], "difficulty: 0.5");
    assert_eq!(body["max_tokens"], 64);
}

#[test]
fn client_errors_are_not_retried() {
    let (url, rx, h) = stub(vec![(400, r#"{"error":"bad"}"#.into())]);
    let err = client(url, 3).chat(&request()).unwrap_err();
    h.join().unwrap();
    assert!(matches!(err, ChatError::Response(_)), "{err}");
    assert_eq!(rx.try_iter().count(), 1);
}

#[test]
fn missing_content_is_a_response_error() {
    let (url, _rx, h) = stub(vec![(200, r#"{"choices":[]}"#.into())]);
    let err = client(url, 0).chat(&request()).unwrap_err();
    h.join().unwrap();
    assert!(matches!(err, ChatError::Response(_)), "{err}");
}

#[test]
fn exhausted_retries_report_attempts() {
    let (url, rx, h) = stub(vec![(500, "{}".into()), (429, "{}".into())]);
    let err = client(url, 1).chat(&request()).unwrap_err();
    h.join().unwrap();
    assert!(matches!(err, ChatError::Transport { attempts: 2, .. }), "{err}");
    assert_eq!(rx.try_iter().count(), 2);
}

#[test]
fn bad_endpoint_is_a_config_error() {
    let r = HttpChatClient::new(HttpClientConfig { endpoint: "not a url".into(), ..HttpClientConfig::default() }, "k".into());
    assert!(matches!(r, Err(ChatError::Config(_))));
}
