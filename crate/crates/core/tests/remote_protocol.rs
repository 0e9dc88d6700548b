//! Client side of the scoring protocol, replayed against recorded responses.

mod support {
    pub mod mock_server;
}

use std::time::Duration;

use serde_json::Value;
use superfilter::data::{Dataset, InstructionSample, PromptTemplate};
use superfilter::diversity::{embed, Embedder};
use superfilter::remote::{RemoteClient, ScoreRequest};
use superfilter::scoring::{perplexity, score_dataset, LogProbBackend, ScoringOptions};
use superfilter::Error;
use support::mock_server::MockServer;

fn golden() -> Value {
    serde_json::from_str(include_str!("fixtures/protocol_golden.json")).unwrap()
}

/// Serves the golden response whose request matches, 400 otherwise.
fn golden_server() -> MockServer {
    let golden = golden();
    MockServer::start(move |path, body| {
        let Ok(request) = serde_json::from_slice::<Value>(body) else {
            return (400, r#"{"error":"invalid JSON"}"#.into());
        };
        let cases: Vec<&Value> = match path {
            "/v1/logprobs" => golden["logprobs"].as_array().unwrap().iter().collect(),
            "/v1/embed" => vec![&golden["embed"]],
            _ => return (404, "{}".into()),
        };
        for case in cases {
            if case["request"] == request {
                return (200, case["response"].to_string());
            }
        }
        (400, r#"{"error":"unknown request"}"#.into())
    })
}

fn client(server: &MockServer) -> RemoteClient {
    RemoteClient::new(&server.url, Duration::from_secs(5))
}

#[test]
fn logprobs_echo_golden_responses_verbatim() {
    let server = golden_server();
    let client = client(&server);
    for case in golden()["logprobs"].as_array().unwrap() {
        let req: ScoreRequest = serde_json::from_value(case["request"].clone()).unwrap();
        let client = client.clone().with_max_length(req.max_length);
        let out = client.logprobs(&req.prompt, &req.completion).unwrap();
        let expected: Vec<f64> = case["response"]["token_logprobs"]
            .as_array()
            .unwrap()
            .iter()
            .map(|v| v.as_f64().unwrap())
            .collect();
        assert_eq!(out.logprobs.logprobs(), expected.as_slice());
        assert_eq!(out.truncated, case["response"]["truncated"].as_bool().unwrap());
    }
    let sent = server.recorded();
    assert!(sent.iter().all(|r| r.method == "POST" && r.path == "/v1/logprobs"));
    assert_eq!(sent[0].body, br#"{"prompt":"","completion":"the"}"#);
    assert_eq!(sent[0].header("content-type"), Some("application/json"));
}

#[test]
fn bearer_token_is_sent() {
    let server = golden_server();
    let client = client(&server).with_token(Some("s3cret".into()));
    client.logprobs("", "the").unwrap();
    assert_eq!(server.recorded()[0].header("authorization"), Some("Bearer s3cret"));
}

#[test]
fn http_errors_are_backend_errors() {
    let server = MockServer::start(|_, _| (500, r#"{"error":"model failure"}"#.into()));
    let err = client(&server).logprobs("", "x").unwrap_err();
    match err {
        Error::Backend { message, .. } => assert!(message.contains("500"), "{message}"),
        other => panic!("unexpected {other}"),
    }
}

#[test]
fn malformed_responses_are_data_errors() {
    let server = MockServer::start(|_, body| {
        let req: Value = serde_json::from_slice(body).unwrap();
        match req["completion"].as_str().unwrap() {
            "nan" => (200, r#"{"tokens":["a"],"token_logprobs":[0.5],"truncated":false,"model":"m"}"#.into()),
            "short" => (200, r#"{"tokens":["a","b"],"token_logprobs":[-1.0],"truncated":false,"model":"m"}"#.into()),
            "empty" => (200, r#"{"tokens":[],"token_logprobs":[],"truncated":false,"model":"m"}"#.into()),
            _ => (200, "not json".into()),
        }
    });
    let client = client(&server);
    for completion in ["nan", "short", "empty", "garbage"] {
        let err = client.logprobs("", completion).unwrap_err();
        assert!(matches!(err, Error::Data(_)), "{completion}: {err}");
    }
}

#[test]
fn timeout_is_backend_error() {
    let server = MockServer::start(|_, _| {
        std::thread::sleep(Duration::from_millis(1500));
        (200, "{}".into())
    });
    let client = RemoteClient::new(&server.url, Duration::from_millis(200));
    assert!(matches!(client.logprobs("", "x"), Err(Error::Backend { .. })));
}

#[test]
fn dataset_scoring_through_remote() {
    let server = golden_server();
    let client = client(&server).with_name("gpt2");
    let template = PromptTemplate::new(
        "golden",
        "USER: {instruction}\n{input} ASSISTANT:",
        "USER: {instruction} ASSISTANT:",
    )
    .unwrap();
    let ds = Dataset::new(
        vec![InstructionSample::new("0", "Name a primary color.", None, " Blue is a primary color.")],
        "mem",
    )
    .unwrap();
    let run = score_dataset(&ds, &template, &client, ScoringOptions::default()).unwrap();
    let s = &run.scores[0];
    assert_eq!(s.scorer, "gpt2");
    assert_eq!(s.n_tokens, 6);

    let golden = golden();
    let cond = client
        .logprobs("USER: Name a primary color. ASSISTANT:", " Blue is a primary color.")
        .unwrap();
    let uncond = client.logprobs("", " Blue is a primary color.").unwrap();
    assert_eq!(s.ppl_cond, perplexity(&cond.logprobs));
    assert_eq!(s.ppl_uncond, perplexity(&uncond.logprobs));
    // independent check of the conditional perplexity from the fixture values
    let lps: Vec<f64> = golden["logprobs"][1]["response"]["token_logprobs"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_f64().unwrap())
        .collect();
    let product: f64 = lps.iter().map(|l| l.exp()).product();
    assert!((s.ppl_cond - product.powf(-1.0 / 6.0)).abs() / s.ppl_cond < 1e-9);
    assert!(s.ifd < 1.0);
}

#[test]
fn embed_endpoint() {
    let server = golden_server();
    let client = client(&server);
    let samples = vec![
        InstructionSample::new("0", "a", None, "cat"),
        InstructionSample::new("1", "a", None, "cat"),
        InstructionSample::new("2", "stock", None, "prices fell"),
    ];
    let set = embed(&samples, &Embedder::Remote(&client)).unwrap();
    assert_eq!(set.dim(), 3);
    assert_eq!(set.embedder(), "all-MiniLM-L6-v2");
    assert_eq!(set.vector(0), set.vector(1));
    assert!((set.cosine(0, 1) - 1.0).abs() < 1e-6);
    assert_eq!(set.cosine(0, 2), 0.0);
    for i in 0..3 {
        let norm: f32 = set.vector(i).iter().map(|x| x * x).sum::<f32>().sqrt();
        assert!((norm - 1.0).abs() < 1e-6);
    }
    let sent = server.recorded();
    assert_eq!(sent[0].path, "/v1/embed");
    assert_eq!(sent[0].body, br#"{"texts":["a\ncat","a\ncat","stock\nprices fell"]}"#);
}
