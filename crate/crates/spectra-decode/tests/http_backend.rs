//! Wire-format tests for the logit-server client against a real local
//! server speaking the JSON protocol.

mod common;

use spectra_decode::backend::{
    BackendError, HttpBackend, LmBackend, TokenSequence, TopK, ToyModelBuilder,
};
use spectra_decode::interp::{generate, DecodeConfig, DecoderKind};
use spectra_decode::twinning::{Embedder, HttpEmbedder};

fn serving_model() -> spectra_decode::backend::ToyModel {
    ToyModelBuilder::new()
        .model_id("toy-served")
        .token("p")
        .token("q")
        .token("x")
        .token("y")
        .row(&["p"], &[("x", 0.7), ("y", 0.3)])
        .row(&["q"], &[("x", 0.2), ("y", 0.8)])
        .row(&["x"], &[("x", 0.6), ("y", 0.4)])
        .row(&["y"], &[("x", 0.5), ("y", 0.5)])
        .default_row(&[("p", 0.25), ("q", 0.25), ("x", 0.25), ("y", 0.25)])
        .build()
        .unwrap()
}

#[test]
fn next_token_over_the_wire_matches_local_table() {
    let model = serving_model();
    let base = common::spawn_logit_server(model.clone());
    let backend = HttpBackend::new(&base, "toy-served", 4, 16).unwrap();

    let local = model
        .next_token_distribution(&TokenSequence(vec![0]), TopK::Full)
        .unwrap();
    let remote = backend
        .next_token_distribution(&TokenSequence(vec![0]), TopK::Full)
        .unwrap();
    assert_eq!(remote.len(), local.len());
    for (id, logprob) in local.iter() {
        assert!((remote.logprob(id).unwrap() - logprob).abs() < 1e-12);
    }
    assert!(!remote.truncated);
}

#[test]
fn prompt_contexts_and_token_cache() {
    let model = serving_model();
    let base = common::spawn_logit_server(model);
    let backend = HttpBackend::new(&base, "toy-served", 4, 16).unwrap();

    let dist = backend.next_for_prompt("p", TopK::Full).unwrap();
    assert!((dist.prob(2).unwrap() - 0.7).abs() < 1e-12);
    // Entries seen in responses populate the detokenize cache; ids the
    // server never reported stay unknown.
    assert_eq!(backend.detokenize(&[2, 3]).unwrap(), "xy");
    assert!(matches!(
        backend.detokenize(&[0]),
        Err(BackendError::UnknownTokenId(0))
    ));
}

#[test]
fn truncated_responses_keep_raw_logprobs() {
    let model = serving_model();
    let base = common::spawn_logit_server(model);
    let backend = HttpBackend::new(&base, "toy-served", 4, 16).unwrap();

    let dist = backend
        .next_token_distribution(&TokenSequence(vec![0]), TopK::K(1))
        .unwrap();
    assert!(dist.truncated);
    assert_eq!(dist.len(), 1);
    // No renormalization at this layer: the logprob is the table value.
    assert!((dist.logprob(2).unwrap() - 0.7f64.ln()).abs() < 1e-12);
}

#[test]
fn tokenize_is_unsupported_and_mode_is_text() {
    let model = serving_model();
    let base = common::spawn_logit_server(model);
    let backend = HttpBackend::new(&base, "toy-served", 4, 16).unwrap();
    assert!(matches!(
        backend.tokenize("p"),
        Err(BackendError::TokenizeUnsupported)
    ));
    assert_eq!(
        backend.context_mode(),
        spectra_decode::backend::ContextMode::Text
    );
}

#[test]
fn text_mode_generation_matches_token_mode() {
    // The same table served over HTTP must generate the same token trace as
    // the local toy backend in token-context mode.
    let model = serving_model();
    let base = common::spawn_logit_server(model.clone());
    let backend = HttpBackend::new(&base, "toy-served", 4, 16).unwrap();

    for lambda in [0.0, 0.5, 1.0] {
        let config = DecodeConfig::greedy(DecoderKind::Mixture, lambda, 4).with_record_steps(true);
        let local = generate(&model, "p", "q", &config).unwrap();
        let remote = generate(&backend, "p", "q", &config).unwrap();
        assert_eq!(local.tokens, remote.tokens, "lambda {lambda}");
        assert_eq!(local.text, remote.text);
        let (ls, rs) = (local.steps.unwrap(), remote.steps.unwrap());
        for (a, b) in ls.iter().zip(&rs) {
            assert!(a.dist.total_variation(&b.dist) < 1e-12);
        }
    }
}

#[test]
fn server_errors_map_to_typed_errors() {
    let model = serving_model();
    let base = common::spawn_logit_server(model);

    // 5xx surfaces as BackendUnavailable.
    let boom = HttpBackend::new(&base, "unavailable", 4, 16).unwrap();
    assert!(matches!(
        boom.next_token_distribution(&TokenSequence(vec![0]), TopK::Full),
        Err(BackendError::BackendUnavailable(_))
    ));

    // Unreachable host also maps to BackendUnavailable.
    let dead = HttpBackend::new("http://127.0.0.1:1", "toy", 4, 16).unwrap();
    assert!(matches!(
        dead.next_token_distribution(&TokenSequence(vec![0]), TopK::Full),
        Err(BackendError::BackendUnavailable(_))
    ));

    // Oversized context maps to ContextTooLong via HTTP 413.
    let backend = HttpBackend::new(&base, "toy-served", 4, 2048).unwrap();
    let huge = TokenSequence(vec![0; 600]);
    assert!(matches!(
        backend.next_token_distribution(&huge, TopK::Full),
        Err(BackendError::ContextTooLong { .. })
    ));

    // Malformed requests map to InvalidRequest via HTTP 400.
    let bad_prompt = backend.next_for_prompt("unknown!", TopK::Full);
    assert!(matches!(bad_prompt, Err(BackendError::InvalidRequest(_))));
}

#[test]
fn identical_queries_return_identical_distributions() {
    let model = serving_model();
    let base = common::spawn_logit_server(model);
    let backend = HttpBackend::new(&base, "toy-served", 4, 16).unwrap();
    let ctx = TokenSequence(vec![1, 2]);
    let first = backend.next_token_distribution(&ctx, TopK::Full).unwrap();
    let second = backend.next_token_distribution(&ctx, TopK::Full).unwrap();
    assert_eq!(first, second);
}

#[test]
fn backend_url_env_overrides_config() {
    // The config points at a dead port; SPECTRA_BACKEND_URL redirects the
    // subprocess to the live server. A tiny table whose vocabulary covers
    // the assembled prompt keeps the generation on the server side.
    let choice = "go";
    let wait = "wait";
    let side_low = "Calm.\n\nDecide.";
    let side_high = "Bold.\n\nDecide.";
    let model = ToyModelBuilder::new()
        .model_id("toy-env")
        .token(side_low)
        .token(side_high)
        .token(choice)
        .token(wait)
        .row(&[side_low], &[(choice, 0.2), (wait, 0.8)])
        .row(&[side_high], &[(choice, 0.8), (wait, 0.2)])
        .default_row(&[(choice, 0.5), (wait, 0.5)])
        .build()
        .unwrap();
    let base = common::spawn_logit_server(model);

    let dir = tempfile::tempdir().unwrap();
    let spectrum_path = dir.path().join("spectrum.json");
    std::fs::write(
        &spectrum_path,
        serde_json::json!({
            "name": "daring",
            "tau_low": ["Calm."],
            "tau_high": ["Bold."],
            "decoder_hint": "mixture",
            "lambda_range": [0.0, 1.0],
        })
        .to_string(),
    )
    .unwrap();
    let scenario_path = dir.path().join("scenario.json");
    std::fs::write(
        &scenario_path,
        serde_json::json!({"id": "d", "body": "Decide.", "response_format_hint": ""}).to_string(),
    )
    .unwrap();
    let config_path = dir.path().join("config.json");
    std::fs::write(
        &config_path,
        serde_json::json!({
            "experiment": "generate",
            "backend": {
                "kind": "http_logit_server",
                "model_id": "toy-env",
                "base_url": "http://127.0.0.1:1",
                "vocabulary_size": 4,
            },
            "spectra": [spectrum_path.display().to_string()],
            "scenarios": [scenario_path.display().to_string()],
            "decoder": "mixture",
            "anchor": "B",
            "lambda_grid": [1.0],
            "max_tokens": 1,
            "output": "results.jsonl",
        })
        .to_string(),
    )
    .unwrap();

    let output = std::process::Command::new(env!("CARGO_BIN_EXE_spectra-decode"))
        .arg("generate")
        .arg("--config")
        .arg(&config_path)
        .env("SPECTRA_BACKEND_URL", &base)
        .current_dir(dir.path())
        .output()
        .unwrap();
    assert!(
        output.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&output.stderr)
    );
    let results = std::fs::read_to_string(dir.path().join("results.jsonl")).unwrap();
    assert!(results.contains("\"text\":\"go\""), "{results}");
}

#[test]
fn http_embedder_round_trip() {
    let model = serving_model();
    let base = common::spawn_logit_server(model);
    let embedder = HttpEmbedder::new(&base, 4);
    let vectors = embedder.embed(&["abc", "x"]).unwrap();
    assert_eq!(vectors.len(), 2);
    assert_eq!(vectors[0], vec![3.0, 1.5, 1.0, -3.0]);
    assert_eq!(vectors[1], vec![1.0, 0.5, 1.0, -1.0]);

    let wrong_dim = HttpEmbedder::new(&base, 7);
    assert!(wrong_dim.embed(&["abc"]).is_err());
}
