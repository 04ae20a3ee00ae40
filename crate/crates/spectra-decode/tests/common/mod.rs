//! Shared fixtures: deterministic toy models whose interpolated behavior is
//! derivable by hand, plus a minimal HTTP logit server for wire-format
//! tests.

#![allow(dead_code)]

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::path::{Path, PathBuf};

use spectra_decode::backend::{LmBackend, TokenSequence, TopK, ToyModel, ToyModelBuilder};
use spectra_decode::psychometrics::{Inventory, Keying};
use spectra_decode::spectra::control_statements;

/// Digit-answer distribution for the low extremum: linear in lambda against
/// its reverse, the argmax crosses digits 1 through 5 at lambda
/// 0.2, 0.4, 0.6, 0.8.
pub const DIGIT_LOW: [f64; 5] = [0.24, 0.23, 0.21, 0.18, 0.14];

pub fn digit_high() -> [f64; 5] {
    let mut h = DIGIT_LOW;
    h.reverse();
    h
}

/// The lambda grid the monotone inventory fixture is built for, with the
/// greedy answer digit strictly increasing across it.
pub const MONOTONE_GRID: [f64; 5] = [0.1, 0.3, 0.5, 0.7, 0.9];

pub fn manifest_path(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join(rel)
}

pub fn shipped_inventory() -> Inventory {
    Inventory::from_csv_path(manifest_path("data/inventory_synthetic.csv")).unwrap()
}

/// Files written by the monotone inventory fixture.
pub struct InventoryFixture {
    pub model_path: PathBuf,
    pub spectra_paths: Vec<PathBuf>,
    pub inventory_path: PathBuf,
}

/// Builds a toy backend for the full inventory protocol in which the
/// interpolated answer digit is a strictly increasing function of lambda on
/// [`MONOTONE_GRID`], identically for every facet partition and trait.
///
/// Prompt shape (fixed by the runner): few-shot blocks
/// `Statement: <text>\nAnswer: <phrase>\n\n`, then the side descriptor, a
/// blank line, and `Statement: <text>\nAnswer (1-5):`. The vocabulary gives
/// each of those pieces one token, so every assembled prompt ends with
/// [side-token, statement-token] and the suffix table can key answer
/// distributions on (side, item) pairs. Descending items mirror the digit
/// distributions, so their reverse-keyed scores match the ascending ones.
pub fn build_inventory_fixture(dir: &Path) -> InventoryFixture {
    let inventory = shipped_inventory();
    let traits = [
        "openness",
        "conscientiousness",
        "extraversion",
        "agreeableness",
        "neuroticism",
    ];

    let mut builder = ToyModelBuilder::new().model_id("toy-inventory-monotone");
    builder = builder.token("\n\n");
    for digit in ["1", "2", "3", "4", "5"] {
        builder = builder.token(digit);
    }
    for phrase in [
        "Strongly disagree",
        "Disagree",
        "Neutral",
        "Agree",
        "Strongly agree",
    ] {
        builder = builder.token(phrase);
    }
    for item in inventory.items() {
        builder = builder.token(format!("Statement: {}\nAnswer: ", item.text));
        builder = builder.token(format!("\n\nStatement: {}\nAnswer (1-5):", item.text));
    }

    let mut spectra_paths = Vec::new();
    let mut side_tokens: Vec<(String, String, String)> = Vec::new();
    for (i, name) in traits.iter().enumerate() {
        let low = format!("{}.", spectra_control(i));
        let high = format!(
            "You live at the very top of the {name} scale in every situation."
        );
        builder = builder.token(low.clone());
        builder = builder.token(high.clone());
        side_tokens.push((name.to_string(), low.clone(), high.clone()));

        let spectrum = serde_json::json!({
            "name": name,
            "tau_low": [low],
            "tau_high": [high],
            "decoder_hint": "mixture",
            "lambda_range": [0.0, 1.0],
        });
        let path = dir.join(format!("spectrum_{name}.json"));
        std::fs::write(&path, serde_json::to_string_pretty(&spectrum).unwrap()).unwrap();
        spectra_paths.push(path);
    }

    let digit_dist = |values: &[f64; 5]| -> Vec<(String, f64)> {
        values
            .iter()
            .enumerate()
            .map(|(i, &p)| ((i + 1).to_string(), p))
            .collect()
    };
    let low_dist = digit_dist(&DIGIT_LOW);
    let high_dist = digit_dist(&digit_high());

    let mut model = builder;
    for item in inventory.items() {
        let (_, low_side, high_side) = side_tokens
            .iter()
            .find(|(name, _, _)| name == item.trait_id.as_str())
            .unwrap()
            .clone();
        let statement = format!("\n\nStatement: {}\nAnswer (1-5):", item.text);
        let (for_low, for_high) = match item.keying {
            Keying::Ascending => (&low_dist, &high_dist),
            Keying::Descending => (&high_dist, &low_dist),
        };
        let as_refs = |d: &Vec<(String, f64)>| -> Vec<(String, f64)> { d.clone() };
        let low_rows = as_refs(for_low);
        let high_rows = as_refs(for_high);
        let low_refs: Vec<(&str, f64)> =
            low_rows.iter().map(|(s, p)| (s.as_str(), *p)).collect();
        let high_refs: Vec<(&str, f64)> =
            high_rows.iter().map(|(s, p)| (s.as_str(), *p)).collect();
        model = model.row(&[low_side.as_str(), statement.as_str()], &low_refs);
        model = model.row(&[high_side.as_str(), statement.as_str()], &high_refs);
    }
    let model = model
        .default_row(&[("1", 0.2), ("2", 0.2), ("3", 0.2), ("4", 0.2), ("5", 0.2)])
        .build()
        .unwrap();

    let model_path = dir.join("toy_inventory.json");
    model.to_file(&model_path).unwrap();
    InventoryFixture {
        model_path,
        spectra_paths,
        inventory_path: manifest_path("data/inventory_synthetic.csv"),
    }
}

fn spectra_control(index: usize) -> String {
    // One packaged control statement per trait, phrased as a held belief.
    spectra_decode::spectra::control_prompt(index).unwrap()
}

/// Expected greedy answer digit per [`MONOTONE_GRID`] position, derived by
/// hand from the upper envelope of the five mixed digit probabilities.
pub fn expected_digit(lambda: f64) -> u8 {
    let low = DIGIT_LOW;
    let high = digit_high();
    let mut best = (0usize, f64::MIN);
    for d in 0..5 {
        let p = lambda * high[d] + (1.0 - lambda) * low[d];
        if p > best.1 {
            best = (d, p);
        }
    }
    best.0 as u8 + 1
}

/// Files written by the runoff/twin fixture.
pub struct TwinFixture {
    pub model_path: PathBuf,
    pub spectrum_path: PathBuf,
    pub scenario_path: PathBuf,
    pub twin_log_path: PathBuf,
    pub replay_log_path: PathBuf,
}

pub const TWIN_OBS_1: &str = "Report: pressure building on the eastern route.";
pub const TWIN_OBS_2: &str = "Report: the port is one step from collapse.";
pub const TWIN_SCENARIO_BODY: &str = "Replay one turn of a cooperative outbreak game. Answer with your chosen option.";
pub const TWIN_SPECTRUM_LOW: &str = "You follow whatever your teammates suggest.";
pub const TWIN_SPECTRUM_HIGH: &str = "You act on the tactical report alone.";

const MOVESET_0: [&str; 2] = ["move east", "treat east"];
const MOVESET_1: [&str; 2] = ["move port", "share knowledge"];

fn pair_tail(observation: &str, a: &[&str], b: &[&str]) -> String {
    format!(
        "\n\n{obs}\n\nOption A: {ma}\nOption B: {mb}\nConsider both options and finish with \"My final choice is A\" or \"My final choice is B\".",
        obs = observation,
        ma = a.join(", "),
        mb = b.join(", "),
    )
}

/// Toy backend for runoff replay and twinning over two movesets. The
/// high-extremum side assigns the first moveset probability 0.9 in every
/// pairing, the low side 0.1. Under mixture decoding anchored on the high
/// side, the induced probability of moveset 0 is exactly 0.1 + 0.8 * lambda
/// per turn; with one turn observing each moveset, the sum-logprob
/// objective ln(0.1 + 0.8 l) + ln(0.9 - 0.8 l) peaks at lambda = 0.5.
pub fn build_twin_fixture(dir: &Path) -> TwinFixture {
    let side_low = format!("{TWIN_SPECTRUM_LOW}\n\n{TWIN_SCENARIO_BODY}");
    let side_high = format!("{TWIN_SPECTRUM_HIGH}\n\n{TWIN_SCENARIO_BODY}");
    let choice_a = "My final choice is A";
    let choice_b = "My final choice is B";

    let mut builder = ToyModelBuilder::new()
        .model_id("toy-twin")
        .token(side_low.clone())
        .token(side_high.clone())
        .token(choice_a)
        .token(choice_b);

    let m0: Vec<&str> = MOVESET_0.to_vec();
    let m1: Vec<&str> = MOVESET_1.to_vec();
    let mut tails = Vec::new();
    for obs in [TWIN_OBS_1, TWIN_OBS_2] {
        // Ordered pair (0, 1): moveset 0 is option A.
        tails.push((pair_tail(obs, &m0, &m1), true));
        // Ordered pair (1, 0): moveset 0 is option B.
        tails.push((pair_tail(obs, &m1, &m0), false));
    }
    for (tail, _) in &tails {
        builder = builder.token(tail.clone());
    }
    for (tail, m0_is_a) in &tails {
        let (hi_a, hi_b) = if *m0_is_a { (0.9, 0.1) } else { (0.1, 0.9) };
        builder = builder
            .row(
                &[side_high.as_str(), tail.as_str()],
                &[(choice_a, hi_a), (choice_b, hi_b)],
            )
            .row(
                &[side_low.as_str(), tail.as_str()],
                &[(choice_a, 1.0 - hi_a), (choice_b, 1.0 - hi_b)],
            );
    }
    let model = builder
        .default_row(&[(choice_a, 0.5), (choice_b, 0.5)])
        .build()
        .unwrap();
    let model_path = dir.join("toy_twin.json");
    model.to_file(&model_path).unwrap();

    let spectrum = serde_json::json!({
        "name": "info-integration",
        "tau_low": [TWIN_SPECTRUM_LOW],
        "tau_high": [TWIN_SPECTRUM_HIGH],
        "decoder_hint": "mixture",
        "lambda_range": [0.0, 1.0],
    });
    let spectrum_path = dir.join("twin_spectrum.json");
    std::fs::write(&spectrum_path, serde_json::to_string_pretty(&spectrum).unwrap()).unwrap();

    let scenario = serde_json::json!({
        "id": "coop-replay",
        "body": TWIN_SCENARIO_BODY,
        "response_format_hint": "My final choice is A|B",
    });
    let scenario_path = dir.join("twin_scenario.json");
    std::fs::write(&scenario_path, serde_json::to_string_pretty(&scenario).unwrap()).unwrap();

    let turn = |id: &str, obs: &str, observed: Option<usize>| {
        serde_json::json!({
            "turn_id": id,
            "observation": obs,
            "candidate_movesets": [MOVESET_0, MOVESET_1],
            "observed_action_index": observed,
        })
    };
    let twin_log_path = dir.join("twin_log.jsonl");
    std::fs::write(
        &twin_log_path,
        format!(
            "{}\n{}\n",
            turn("t1", TWIN_OBS_1, Some(0)),
            turn("t2", TWIN_OBS_2, Some(1)),
        ),
    )
    .unwrap();
    let replay_log_path = dir.join("replay_log.jsonl");
    std::fs::write(
        &replay_log_path,
        format!(
            "{}\n{}\n{}\n",
            turn("t1", TWIN_OBS_1, Some(0)),
            turn("t2", TWIN_OBS_2, Some(1)),
            turn("t3", TWIN_OBS_1, None),
        ),
    )
    .unwrap();

    TwinFixture {
        model_path,
        spectrum_path,
        scenario_path,
        twin_log_path,
        replay_log_path,
    }
}

/// Verifies the packaged control statements are intact (used by fixtures
/// that pick per-trait control prompts).
pub fn control_count() -> usize {
    control_statements().len()
}

// ---------------------------------------------------------------------------
// Minimal HTTP logit server backed by a ToyModel.
// ---------------------------------------------------------------------------

/// Spawns a logit server on an ephemeral local port and returns its base
/// URL. The accept loop runs on a detached thread for the life of the test
/// process.
pub fn spawn_logit_server(model: ToyModel) -> String {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    std::thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(stream) = stream else { continue };
            let model = model.clone();
            std::thread::spawn(move || {
                let _ = handle_connection(stream, &model);
            });
        }
    });
    format!("http://{addr}")
}

fn handle_connection(mut stream: TcpStream, model: &ToyModel) -> std::io::Result<()> {
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut request_line = String::new();
    reader.read_line(&mut request_line)?;
    let mut content_length = 0usize;
    loop {
        let mut line = String::new();
        reader.read_line(&mut line)?;
        if line == "\r\n" || line == "\n" || line.is_empty() {
            break;
        }
        if let Some(value) = line.to_ascii_lowercase().strip_prefix("content-length:") {
            content_length = value.trim().parse().unwrap_or(0);
        }
    }
    let mut body = vec![0u8; content_length];
    reader.read_exact(&mut body)?;
    let path = request_line.split_whitespace().nth(1).unwrap_or("/");

    let (status, response_body) = if path.starts_with("/v1/next_token") {
        next_token_route(&body, model)
    } else if path.starts_with("/v1/embed") {
        embed_route(&body)
    } else {
        (404, r#"{"error":"not found"}"#.to_string())
    };
    let status_text = match status {
        200 => "OK",
        400 => "Bad Request",
        413 => "Payload Too Large",
        404 => "Not Found",
        _ => "Internal Server Error",
    };
    write!(
        stream,
        "HTTP/1.1 {status} {status_text}\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{}",
        response_body.len(),
        response_body
    )?;
    stream.flush()
}

fn next_token_route(body: &[u8], model: &ToyModel) -> (u16, String) {
    let parsed: serde_json::Value = match serde_json::from_slice(body) {
        Ok(v) => v,
        Err(e) => return (400, format!(r#"{{"error":"bad json: {e}"}}"#)),
    };
    if parsed.get("model").and_then(|m| m.as_str()) == Some("unavailable") {
        return (500, r#"{"error":"backend exploded"}"#.to_string());
    }
    let ctx: TokenSequence = if let Some(tokens) = parsed.get("tokens").and_then(|t| t.as_array())
    {
        TokenSequence(
            tokens
                .iter()
                .filter_map(|t| t.as_u64().map(|v| v as u32))
                .collect(),
        )
    } else if let Some(prompt) = parsed.get("prompt").and_then(|p| p.as_str()) {
        match model.tokenize(prompt) {
            Ok(seq) => seq,
            Err(e) => return (400, format!(r#"{{"error":"{e}"}}"#)),
        }
    } else {
        return (400, r#"{"error":"need tokens or prompt"}"#.to_string());
    };
    if ctx.len() > 512 {
        return (413, r#"{"error":"context too long"}"#.to_string());
    }
    let top_k = parsed.get("top_k").and_then(|k| k.as_u64()).unwrap_or(16) as u32;
    let full = match model.next_token_distribution(&ctx, TopK::Full) {
        Ok(d) => d,
        Err(e) => return (400, format!(r#"{{"error":"{e}"}}"#)),
    };
    let entries = full.sorted_entries();
    let truncated = (top_k as usize) < entries.len();
    let kept: Vec<serde_json::Value> = entries
        .into_iter()
        .take(top_k as usize)
        .map(|(id, logprob)| {
            serde_json::json!({
                "id": id,
                "token": model.detokenize(&[id]).unwrap_or_default(),
                "logprob": logprob,
            })
        })
        .collect();
    (
        200,
        serde_json::json!({"entries": kept, "truncated": truncated}).to_string(),
    )
}

fn embed_route(body: &[u8]) -> (u16, String) {
    let parsed: serde_json::Value = match serde_json::from_slice(body) {
        Ok(v) => v,
        Err(e) => return (400, format!(r#"{{"error":"bad json: {e}"}}"#)),
    };
    let Some(texts) = parsed.get("texts").and_then(|t| t.as_array()) else {
        return (400, r#"{"error":"need texts"}"#.to_string());
    };
    // Length-keyed deterministic vectors, dimension 4.
    let vectors: Vec<Vec<f64>> = texts
        .iter()
        .map(|t| {
            let len = t.as_str().map(|s| s.len()).unwrap_or(0) as f64;
            vec![len, len / 2.0, 1.0, -len]
        })
        .collect();
    (
        200,
        serde_json::json!({"vectors": vectors, "dim": 4}).to_string(),
    )
}

/// Reads payloads of a given kind from a results file.
pub fn payloads_of_kind(path: &Path, kind: &str) -> Vec<serde_json::Value> {
    let text = std::fs::read_to_string(path).unwrap();
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str::<serde_json::Value>(l).unwrap())
        .map(|r| r["payload"].clone())
        .filter(|p| p["kind"] == kind)
        .collect()
}

/// Map from token-id keys to probabilities, for oracle tables.
pub type ProbTable = BTreeMap<u32, f64>;
