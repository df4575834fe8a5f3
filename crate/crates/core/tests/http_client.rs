mod support;

use std::sync::Arc;
use std::time::Duration;

use hiernav::action::ProgressEstimate;
use hiernav::geometry::View;
use hiernav::mapping::GrayImage;
use hiernav::mllm::{
    build_vision_prompt, complete, ClientError, HttpChatClient, HttpClientConfig, PriceTable, PromptPayload, Stage,
    StagePrice, UsageLedger, VisionPromptOptions,
};
use support::{image_count, prompt_text, MockServer, Reply};

fn payload() -> PromptPayload {
    let img = GrayImage {
        width: 8,
        height: 6,
        pixels: (0..48).collect(),
    };
    build_vision_prompt(
        "go to the lamp",
        &ProgressEstimate("halfway".into()),
        View::Left,
        Arc::new(img),
        &VisionPromptOptions::default(),
    )
}

fn client(server: &MockServer, model: &str) -> HttpChatClient {
    let cfg = HttpClientConfig {
        url: server.url.clone(),
        model: model.into(),
        api_key_env: None,
        timeout_secs: 2.0,
        max_attempts: 3,
        backoff_ms: 1,
    };
    HttpChatClient::with_api_key(cfg, Some("test-key".into())).unwrap()
}

#[test]
fn usage_reaches_the_ledger_exactly() {
    let server = MockServer::start(|_, _| Reply::ok("{\"bbox_2d\": [1, 2, 3, 4]}", 1000, 50));
    let c = client(&server, "small");
    let ledger = UsageLedger::default();
    let before = ledger.totals(Stage::Grounder);
    let reply = complete(&c, &payload()).unwrap();
    ledger.record("e0", Stage::Grounder, &reply.usage);
    let after = ledger.totals(Stage::Grounder);
    assert_eq!(
        (after.input_tokens + after.output_tokens) - (before.input_tokens + before.output_tokens),
        1050
    );
    assert_eq!(reply.text, "{\"bbox_2d\": [1, 2, 3, 4]}");
}

#[test]
fn request_uses_chat_completions_shape() {
    let seen = Arc::new(std::sync::Mutex::new(None));
    let sink = seen.clone();
    let server = MockServer::start(move |_, body| {
        *sink.lock().unwrap() = Some(body.clone());
        Reply::ok("ok", 1, 1)
    });
    complete(&client(&server, "small"), &payload()).unwrap();
    let body = seen.lock().unwrap().clone().unwrap();
    assert_eq!(body["model"], "small");
    assert_eq!(body["temperature"], 0.0);
    assert!(body["max_tokens"].as_u64().unwrap() > 0);
    assert_eq!(image_count(&body), 1);
    let url = body["messages"][0]["content"]
        .as_array()
        .unwrap()
        .iter()
        .find_map(|p| p["image_url"]["url"].as_str())
        .unwrap();
    assert!(url.starts_with("data:image/png;base64,"));
    assert!(prompt_text(&body).contains("go to the lamp"));
}

#[test]
fn server_errors_exhaust_into_transport_error() {
    let server = MockServer::start(|_, _| Reply::status(500));
    let err = complete(&client(&server, "m"), &payload()).unwrap_err();
    assert!(matches!(err, ClientError::Transport { attempts: 3, .. }), "{err}");
    assert_eq!(server.requests(), 3);
    assert_eq!(server.tally("m").calls, 0);
}

#[test]
fn transient_errors_are_retried() {
    let server = MockServer::start(|k, _| if k < 2 { Reply::status(503) } else { Reply::ok("fine", 7, 3) });
    let reply = complete(&client(&server, "m"), &payload()).unwrap();
    assert_eq!(reply.text, "fine");
    assert_eq!((reply.usage.input_tokens, reply.usage.output_tokens), (7, 3));
    assert_eq!(server.requests(), 3);
}

#[test]
fn auth_rejection_is_not_retried() {
    let server = MockServer::start(|_, _| Reply::status(401));
    let err = complete(&client(&server, "m"), &payload()).unwrap_err();
    assert!(matches!(err, ClientError::Auth { status: 401 }), "{err}");
    assert_eq!(server.requests(), 1);
}

#[test]
fn rate_limits_exhaust_into_quota_error() {
    let server = MockServer::start(|_, _| Reply::status(429));
    let err = complete(&client(&server, "m"), &payload()).unwrap_err();
    assert!(matches!(err, ClientError::Quota { attempts: 3 }), "{err}");
}

#[test]
fn slow_server_times_out() {
    let server = MockServer::start(|_, _| {
        std::thread::sleep(Duration::from_millis(800));
        Reply::ok("late", 1, 1)
    });
    let cfg = HttpClientConfig {
        timeout_secs: 0.2,
        max_attempts: 2,
        ..client(&server, "m").config().clone()
    };
    let c = HttpChatClient::with_api_key(cfg, None).unwrap();
    let err = complete(&c, &payload()).unwrap_err();
    assert!(matches!(err, ClientError::Timeout { attempts: 2 }), "{err}");
}

#[test]
fn missing_credential_fails_before_any_request() {
    let server = MockServer::start(|_, _| Reply::ok("x", 1, 1));
    let cfg = HttpClientConfig {
        url: server.url.clone(),
        api_key_env: Some("HIERNAV_TEST_UNSET_KEY".into()),
        ..Default::default()
    };
    let err = HttpChatClient::new(cfg).unwrap_err();
    assert!(matches!(err, ClientError::Config(_)));
    assert_eq!(server.requests(), 0);
}

#[test]
fn report_prices_tokens() {
    let prices = PriceTable {
        planner: StagePrice {
            input_per_mtok: 2.0,
            output_per_mtok: 8.0,
        },
        grounder: StagePrice::default(),
    };
    let ledger = UsageLedger::new(prices);
    let server = MockServer::start(|_, _| Reply::ok("x", 500_000, 100_000));
    let reply = complete(&client(&server, "big"), &payload()).unwrap();
    ledger.record("e0", Stage::Planner, &reply.usage);
    let report = ledger.report();
    assert!((report.usd_per_episode - (1.0 + 0.8)).abs() < 1e-12);
    assert!(report.to_string().contains("planner: 600,000 tokens with 1.00 calls per episode"));
}
