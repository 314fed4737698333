use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use evalign::prompts::{CompletionClient, CompletionRequest, HttpCompletion, RetryPolicy};
use evalign::Error;

/// Serve one canned status per connection and record the request bodies.
fn serve(statuses: Vec<u16>) -> (String, Arc<Mutex<Vec<String>>>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/complete", listener.local_addr().unwrap());
    let bodies = Arc::new(Mutex::new(Vec::new()));
    let seen = bodies.clone();
    std::thread::spawn(move || {
        for status in statuses {
            let (stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut len = 0;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                if line == "\r\n" {
                    break;
                }
                if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                    len = v.trim().parse().unwrap();
                }
            }
            let mut body = vec![0; len];
            reader.read_exact(&mut body).unwrap();
            seen.lock().unwrap().push(String::from_utf8(body).unwrap());
            let payload = if status == 200 {
                r#"{"choices":[{"text":"Protesters transported an injured man.\nextra"}]}"#
            } else {
                "{}"
            };
            let mut stream = stream;
            write!(
                stream,
                "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{payload}",
                payload.len()
            )
            .unwrap();
        }
    });
    (url, bodies)
}

fn request() -> CompletionRequest {
    CompletionRequest {
        key: "Transport | agent: Protesters".into(),
        prompt: "Event: Transport\nArguments: agent: Protesters\nDescription:".into(),
        max_tokens: 32,
        temperature: 0.0,
    }
}

fn client(url: &str) -> HttpCompletion {
    HttpCompletion::new(
        url,
        Duration::from_secs(5),
        RetryPolicy {
            max_attempts: 3,
            base_delay: Duration::from_millis(5),
        },
    )
}

#[test]
fn retries_rate_limits_and_server_errors() {
    let (url, bodies) = serve(vec![429, 503, 200]);
    let text = client(&url).complete(&request()).unwrap();
    assert!(text.starts_with("Protesters transported an injured man."));
    let bodies = bodies.lock().unwrap();
    assert_eq!(bodies.len(), 3);
    let sent: serde_json::Value = serde_json::from_str(&bodies[0]).unwrap();
    assert_eq!(sent["max_tokens"], 32);
}

#[test]
fn client_errors_are_not_retried() {
    let (url, bodies) = serve(vec![400, 200]);
    assert!(matches!(
        client(&url).complete(&request()),
        Err(Error::Completion(_))
    ));
    assert_eq!(bodies.lock().unwrap().len(), 1);
}

#[test]
fn gives_up_after_the_attempt_budget() {
    let (url, bodies) = serve(vec![500, 500, 500]);
    let err = client(&url).complete(&request()).unwrap_err();
    assert!(err.to_string().contains("3 attempts"), "{err}");
    assert_eq!(bodies.lock().unwrap().len(), 3);
}
