use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::mpsc;
use std::thread;
use std::time::Duration;

use gencls_core::paraphrase::{
    paraphrase, stub_paraphrase, ClientPolicy, HttpProvider, ParaphraseCache, ParaphraseEntry, ParaphraseError,
    Paraphraser, Provider, ProviderError, StubProvider, PROMPT_TEMPLATE,
};

fn items(n: usize) -> Vec<(String, String)> {
    (0..n).map(|i| (format!("s{i}"), format!("post number {i} about feeling tired and sad"))).collect()
}

fn fast_policy(concurrency: usize) -> ClientPolicy {
    ClientPolicy {
        max_concurrent_requests: concurrency,
        max_retries: 1,
        backoff_base: Duration::from_millis(1),
        requests_per_minute_cap: 100_000,
    }
}

#[test]
fn stub_outputs_match_reference_transform() {
    let texts = items(5);
    let out = paraphrase(&texts, &StubProvider::new(), fast_policy(2), &ParaphraseCache::in_memory()).unwrap();
    assert_eq!(out.len(), 5);
    for ((id, text), entry) in texts.iter().zip(&out) {
        let ParaphraseEntry::Done(rec) = entry else { panic!("{entry:?}") };
        assert_eq!(&rec.source_id, id);
        assert_eq!(rec.paraphrase_text, stub_paraphrase(text));
        assert_ne!(&rec.paraphrase_text, text);
    }
}

#[test]
fn concurrency_never_exceeds_cap() {
    for cap in [1, 3] {
        let stub = StubProvider::with_delay(Duration::from_millis(15));
        paraphrase(&items(12), &stub, fast_policy(cap), &ParaphraseCache::in_memory()).unwrap();
        assert_eq!(stub.calls(), 12);
        assert!(stub.max_in_flight() <= cap, "cap {cap}, saw {}", stub.max_in_flight());
        assert!(stub.max_in_flight() >= 1);
    }
}

#[test]
fn rate_cap_holds_in_every_window() {
    let window = Duration::from_millis(200);
    let policy = ClientPolicy {
        requests_per_minute_cap: 3,
        ..fast_policy(4)
    };
    let stub = StubProvider::new();
    Paraphraser::new(&stub, policy)
        .unwrap()
        .with_rate_window(window)
        .run(&items(9), &ParaphraseCache::in_memory())
        .unwrap();
    let mut log = stub.call_log();
    log.sort();
    assert_eq!(log.len(), 9);
    for (i, start) in log.iter().enumerate() {
        let within = log[i..].iter().take_while(|t| t.duration_since(*start) < window).count();
        assert!(within <= 3, "{within} calls inside one window");
    }
}

#[test]
fn warm_cache_rerun_makes_no_calls_and_matches() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cache.jsonl");
    let texts = items(6);

    let first_stub = StubProvider::new();
    let first = paraphrase(&texts, &first_stub, fast_policy(3), &ParaphraseCache::open(&path).unwrap()).unwrap();
    assert_eq!(first_stub.calls(), 6);
    let bytes = fs::read(&path).unwrap();

    let second_stub = StubProvider::new();
    let second = paraphrase(&texts, &second_stub, fast_policy(3), &ParaphraseCache::open(&path).unwrap()).unwrap();
    assert_eq!(second_stub.calls(), 0);
    assert_eq!(first, second);
    assert_eq!(fs::read(&path).unwrap(), bytes);
}

#[test]
fn cache_survives_truncated_run() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cache.jsonl");
    let texts = items(5);
    paraphrase(&texts[..2], &StubProvider::new(), fast_policy(1), &ParaphraseCache::open(&path).unwrap()).unwrap();
    let stub = StubProvider::new();
    let out = paraphrase(&texts, &stub, fast_policy(2), &ParaphraseCache::open(&path).unwrap()).unwrap();
    assert_eq!(stub.calls(), 3);
    assert_eq!(out.len(), 5);
    assert_eq!(ParaphraseCache::open(&path).unwrap().len(), 5);
}

/// Serves `responses` in order, one per connection, and forwards each
/// request body to the returned channel.
fn serve(responses: Vec<(u16, String)>) -> (String, mpsc::Receiver<String>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let (tx, rx) = mpsc::channel();
    thread::spawn(move || {
        for (status, body) in responses {
            let (mut stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut len = 0usize;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                if line == "\r\n" || line.is_empty() {
                    break;
                }
                if let Some((k, v)) = line.split_once(':') {
                    if k.eq_ignore_ascii_case("content-length") {
                        len = v.trim().parse().unwrap();
                    }
                }
            }
            let mut buf = vec![0; len];
            reader.read_exact(&mut buf).unwrap();
            tx.send(String::from_utf8(buf).unwrap()).unwrap();
            let reply = format!(
                "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                body.len()
            );
            stream.write_all(reply.as_bytes()).unwrap();
        }
    });
    (format!("http://{addr}/v1/chat/completions"), rx)
}

#[test]
fn http_provider_speaks_chat_completions() {
    let canned = r#"{"choices":[{"message":{"role":"assistant","content":"a reworded post"}}]}"#;
    let (url, requests) = serve(vec![(200, canned.into())]);
    let provider = HttpProvider::new(url, "para-model", "secret");
    let out = provider.complete(PROMPT_TEMPLATE, "original post").unwrap();
    assert_eq!(out, "a reworded post");

    let sent: serde_json::Value = serde_json::from_str(&requests.recv().unwrap()).unwrap();
    assert_eq!(sent["model"], "para-model");
    assert_eq!(sent["messages"][0]["role"], "system");
    assert_eq!(sent["messages"][0]["content"], PROMPT_TEMPLATE);
    assert_eq!(sent["messages"][1]["content"], "original post");
}

#[test]
fn http_status_mapping() {
    let (url, _rx) = serve(vec![(401, "{}".into()), (429, "{}".into()), (400, "{}".into())]);
    let provider = HttpProvider::new(url, "m", "k");
    assert!(matches!(provider.complete("s", "u"), Err(ProviderError::Auth(_))));
    assert!(matches!(provider.complete("s", "u"), Err(ProviderError::Transient(_))));
    assert!(matches!(provider.complete("s", "u"), Err(ProviderError::Refused(_))));
}

#[test]
fn http_auth_failure_aborts_run() {
    let (url, _rx) = serve(vec![(401, "{}".into())]);
    let provider = HttpProvider::new(url, "m", "k");
    let err = paraphrase(&items(1), &provider, fast_policy(1), &ParaphraseCache::in_memory()).unwrap_err();
    assert!(matches!(err, ParaphraseError::Auth(_)));
}
