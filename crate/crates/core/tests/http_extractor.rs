use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::{Arc, Mutex};
use std::thread;

use sgsd_core::extraction::{
    extract, Backend, Candidates, ExtractOutcome, ExtractionError, ExtractionKind, ExtractionRequest,
    ExtractorConfig, HttpExtractor,
};

struct Captured {
    headers: Vec<String>,
    body: String,
}

/// Serves one canned `(status, body)` per connection, recording each request.
fn serve(replies: Vec<(u16, String)>) -> (String, Arc<Mutex<Vec<Captured>>>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1/chat/completions", listener.local_addr().unwrap());
    let log = Arc::new(Mutex::new(Vec::new()));
    let seen = Arc::clone(&log);
    thread::spawn(move || {
        for (status, body) in replies {
            let (stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut headers = Vec::new();
            let mut len = 0;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                let line = line.trim_end().to_string();
                if line.is_empty() {
                    break;
                }
                if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                    len = v.trim().parse().unwrap();
                }
                headers.push(line);
            }
            let mut buf = vec![0; len];
            reader.read_exact(&mut buf).unwrap();
            seen.lock().unwrap().push(Captured {
                headers,
                body: String::from_utf8(buf).unwrap(),
            });
            let mut out = stream;
            write!(
                out,
                "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                body.len()
            )
            .unwrap();
        }
    });
    (url, log)
}

fn config(url: &str, env: &str) -> ExtractorConfig {
    ExtractorConfig {
        backend: Backend::Http,
        endpoint: Some(url.to_string()),
        model: Some("test-model".into()),
        timeout_secs: 5.0,
        retries: 3,
        backoff_ms: 1,
        credential_env: env.into(),
        ..ExtractorConfig::default()
    }
}

fn chat(content: &str) -> String {
    serde_json::json!({"choices": [{"message": {"role": "assistant", "content": content}}]}).to_string()
}

fn request() -> ExtractionRequest {
    let mut inputs = BTreeMap::new();
    inputs.insert("memory_json", r#"{"problem": "2 + 2 mod 10"}"#.to_string());
    ExtractionRequest::render(ExtractionKind::SuccessSkills, &inputs).unwrap()
}

#[test]
fn posts_chat_completion_and_parses_candidates() {
    let content = "Here you go:\n```json\n{\"general_skills\": [{\"title\": \"T\", \"principle\": \"P\", \"when_to_apply\": \"W\", \"note\": \"kept\"}]}\n```";
    let (url, log) = serve(vec![(200, chat(content))]);
    std::env::set_var("SGSD_TEST_KEY_A", "secret-a");
    let ex = HttpExtractor::from_config(&config(&url, "SGSD_TEST_KEY_A")).unwrap();
    let out = extract(&ex, &request()).unwrap();
    let ExtractOutcome::Candidates(Candidates::Skills(v)) = out else {
        panic!("expected candidates, got {out:?}");
    };
    assert_eq!(v.len(), 1);
    assert_eq!(v[0].extra.get("note").and_then(|x| x.as_str()), Some("kept"));

    let log = log.lock().unwrap();
    let sent: serde_json::Value = serde_json::from_str(&log[0].body).unwrap();
    assert_eq!(sent["model"], "test-model");
    assert_eq!(sent["temperature"], 0.0);
    assert_eq!(sent["messages"].as_array().unwrap().len(), 1);
    assert_eq!(sent["messages"][0]["role"], "user");
    assert!(sent["messages"][0]["content"].as_str().unwrap().contains("Derive 1-3 GENERAL skills"));
    assert!(log[0]
        .headers
        .iter()
        .any(|h| h.eq_ignore_ascii_case("authorization: Bearer secret-a")));
}

#[test]
fn retries_server_errors_then_succeeds() {
    let ok = chat(r#"{"general_skills": []}"#);
    let (url, log) = serve(vec![(503, "{}".into()), (500, "{}".into()), (200, ok)]);
    let ex = HttpExtractor::from_config(&config(&url, "SGSD_TEST_KEY_UNSET_B")).unwrap();
    let out = extract(&ex, &request()).unwrap();
    assert_eq!(out, ExtractOutcome::Candidates(Candidates::Skills(vec![])));
    assert_eq!(log.lock().unwrap().len(), 3);
}

#[test]
fn gives_up_after_retries() {
    let (url, log) = serve(vec![(500, "{}".into()); 4]);
    let ex = HttpExtractor::from_config(&config(&url, "SGSD_TEST_KEY_UNSET_C")).unwrap();
    let err = extract(&ex, &request()).unwrap_err();
    assert!(matches!(err, ExtractionError::Transport { attempts: 4, .. }), "{err}");
    assert_eq!(log.lock().unwrap().len(), 4);
}

#[test]
fn missing_key_is_a_fallback() {
    let (url, _log) = serve(vec![(200, chat("Sorry, {\"answer\": 3} is all I have."))]);
    let ex = HttpExtractor::from_config(&config(&url, "SGSD_TEST_KEY_UNSET_D")).unwrap();
    assert!(matches!(extract(&ex, &request()).unwrap(), ExtractOutcome::Fallback(_)));
}

#[test]
fn client_errors_are_not_retried() {
    let (url, log) = serve(vec![(401, r#"{"error": "bad key"}"#.into())]);
    let ex = HttpExtractor::from_config(&config(&url, "SGSD_TEST_KEY_UNSET_E")).unwrap();
    let err = extract(&ex, &request()).unwrap_err();
    assert!(matches!(err, ExtractionError::Status { status: 401, .. }));
    assert_eq!(log.lock().unwrap().len(), 1);
}

#[test]
fn credential_can_be_required() {
    let cfg = config("http://127.0.0.1:9/v1/chat/completions", "SGSD_TEST_KEY_UNSET_F");
    assert!(matches!(
        HttpExtractor::require_credential(&cfg),
        Err(ExtractionError::MissingCredential(_))
    ));
}
