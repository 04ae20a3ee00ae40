//! Per-experiment bodies dispatched by `run_experiment`.

use thiserror::Error;

use crate::backend::{BackendError, LmBackend};
use crate::harness::{
    evaluate_fidelity, parse_amount, parse_labeled_choice, EconGame, HarnessError,
};
use crate::interp::{generate, DecodeConfig, DecoderKind, InterpError, SamplingMode};
use crate::psychometrics::{
    facet_partitions, keyed_score, level_descriptor, parse_likert, pearson, spearman, Inventory,
    InventoryItem, LikertResponse, PsychError, TraitId,
};
use crate::spectra::{assemble_extrema_prompts, Scenario, SpectraError, TraitSpectrum};
use crate::twinning::{
    behavior_objective, golden_section_search, grid_search, load_dataset, mlp_mse, mlp_train,
    save_dataset, split_dataset, ActionInducer, BehaviorSample, Embedder, HashEmbedder,
    HttpEmbedder, RegressionSample, RunoffInducer, SearchResult, TwinError,
};

use super::config::{EmbedderKind, ExperimentConfig, SearchMethod};
use super::{derive_seed, ResultWriter, RunnerError};

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Error)]
pub(crate) enum ExperimentError {
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Interp(#[from] InterpError),
    #[error(transparent)]
    Psych(#[from] PsychError),
    #[error(transparent)]
    Harness(#[from] HarnessError),
    #[error(transparent)]
    Twin(#[from] TwinError),
    #[error(transparent)]
    Spectra(#[from] SpectraError),
    #[error("io error: {0}")]
    Io(String),
}

impl From<RunnerError> for ExperimentError {
    fn from(e: RunnerError) -> Self {
        ExperimentError::Io(e.to_string())
    }
}

fn interp_unavailable(e: &InterpError) -> bool {
    matches!(
        e,
        InterpError::Backend(BackendError::BackendUnavailable(_))
    )
}

fn harness_unavailable(e: &HarnessError) -> bool {
    match e {
        HarnessError::Decode(inner) => interp_unavailable(inner),
        _ => false,
    }
}

/// True when the failure chain bottoms out in an unreachable backend.
pub(crate) fn backend_unavailable(e: &ExperimentError) -> bool {
    match e {
        ExperimentError::Backend(b) => matches!(b, BackendError::BackendUnavailable(_)),
        ExperimentError::Interp(i) => interp_unavailable(i),
        ExperimentError::Harness(h) => harness_unavailable(h),
        ExperimentError::Twin(t) => match t {
            TwinError::Interp(i) => interp_unavailable(i),
            TwinError::Harness(h) => harness_unavailable(h),
            _ => false,
        },
        _ => false,
    }
}

fn load_spectra(config: &ExperimentConfig) -> Result<Vec<TraitSpectrum>, ExperimentError> {
    config
        .spectra
        .iter()
        .map(|p| TraitSpectrum::from_file(p).map_err(ExperimentError::from))
        .collect()
}

fn load_scenarios(config: &ExperimentConfig) -> Result<Vec<Scenario>, ExperimentError> {
    config
        .scenarios
        .iter()
        .map(|p| Scenario::from_file(p).map_err(ExperimentError::from))
        .collect()
}

fn decode_config(
    config: &ExperimentConfig,
    decoder: DecoderKind,
    lambda: f64,
    seed: u64,
) -> DecodeConfig {
    let mut sampling = config.sampling.clone();
    if sampling.mode == SamplingMode::Temperature {
        sampling.seed = seed;
    }
    DecodeConfig {
        decoder,
        lambda,
        anchor: config.anchor,
        sampling,
        max_tokens: config.max_tokens,
        stop_sequences: config.stop_sequences.clone(),
        record_steps: false,
        floor_penalty: crate::interp::DEFAULT_FLOOR_PENALTY,
    }
}

pub(crate) fn run_generate(
    config: &ExperimentConfig,
    backend: &dyn LmBackend,
    writer: &mut ResultWriter,
) -> Result<(), ExperimentError> {
    let spectra = load_spectra(config)?;
    let scenarios = load_scenarios(config)?;
    for spectrum in &spectra {
        let decoder = config.decoder.unwrap_or(spectrum.decoder_hint);
        for scenario in &scenarios {
            for &perm_seed in &config.permutation_seeds {
                let (prompt_low, prompt_high) =
                    assemble_extrema_prompts(spectrum, scenario, perm_seed);
                for (i, &lambda) in config.lambda_grid.iter().enumerate() {
                    let seed = derive_seed(
                        config.master_seed,
                        &format!("generate/{}/{}/{perm_seed}", spectrum.name, scenario.id),
                        i as u64,
                    );
                    let decode = decode_config(config, decoder, lambda, seed);
                    let record = generate(backend, &prompt_low, &prompt_high, &decode)?;
                    writer.write(serde_json::json!({
                        "kind": "generation",
                        "spectrum": spectrum.name,
                        "scenario": scenario.id,
                        "decoder": decoder,
                        "anchor": config.anchor,
                        "lambda": lambda,
                        "permutation_seed": perm_seed,
                        "sampling_seed": seed,
                        "text": record.text,
                        "tokens": record.tokens,
                        "stopped_by": record.stopped_by,
                    }))?;
                }
            }
        }
    }
    Ok(())
}

fn likert_phrase(value: u8) -> &'static str {
    match value {
        1 => "Strongly disagree",
        2 => "Disagree",
        3 => "Neutral",
        4 => "Agree",
        _ => "Strongly agree",
    }
}

/// The Psychological-Soundness loop: facet partitions x lambda grid, with
/// randomly answered few-shot items setting the target, assessment items
/// scored through the interpolated decoder, and per-trait correlations over
/// the collected (lambda, score) pairs.
pub(crate) fn run_inventory(
    config: &ExperimentConfig,
    backend: &dyn LmBackend,
    writer: &mut ResultWriter,
) -> Result<(), ExperimentError> {
    let inventory_path = config.inventory.as_ref().expect("validated");
    let inventory = Inventory::from_csv_path(inventory_path)?;
    let spectra = load_spectra(config)?;
    let perm_seed = config.permutation_seeds.first().copied().unwrap_or(0);
    writer.write(serde_json::json!({
        "kind": "run_metadata",
        "anchor": config.anchor,
        "slot_a": "tau_low-conditioned prompt",
        "fewshot_format": "Statement: <text>\nAnswer: <phrase>",
        "assessment_format": "Statement: <text>\nAnswer (1-5):",
        "fewshot_placement": "shared preamble on both sides",
    }))?;

    for spectrum in &spectra {
        let trait_id = TraitId::parse(&spectrum.name).ok_or_else(|| {
            ExperimentError::Config(format!(
                "inventory spectrum {:?} is not a Big Five trait",
                spectrum.name
            ))
        })?;
        let items = inventory.items_for(trait_id);
        if items.is_empty() {
            return Err(ExperimentError::Config(format!(
                "inventory has no items for {}",
                trait_id.as_str()
            )));
        }
        let decoder = config.decoder.unwrap_or(spectrum.decoder_hint);
        let partitions = facet_partitions(6, 3);
        let mut lambdas_seen = Vec::new();
        let mut scores_seen = Vec::new();

        for (p_idx, partition) in partitions.iter().enumerate() {
            let fewshot_items: Vec<&InventoryItem> = items
                .iter()
                .copied()
                .filter(|i| partition.fewshot.contains(&i.facet))
                .collect();
            let test_items: Vec<&InventoryItem> = items
                .iter()
                .copied()
                .filter(|i| partition.test.contains(&i.facet))
                .collect();

            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(
                config.master_seed,
                &format!("inventory.fewshot/{}", spectrum.name),
                p_idx as u64,
            ));
            let answers: Vec<(LikertResponse, &InventoryItem)> = fewshot_items
                .iter()
                .map(|item| {
                    let value = rng.gen_range(1..=5u8);
                    (
                        LikertResponse::new(item.id.clone(), value).expect("value in range"),
                        *item,
                    )
                })
                .collect();
            let target_mean = answers
                .iter()
                .map(|(r, item)| keyed_score(r, item).expect("ids match") as f64)
                .sum::<f64>()
                / answers.len().max(1) as f64;
            let target_level = level_descriptor(target_mean);
            let fewshot_block: String = answers
                .iter()
                .map(|(r, item)| {
                    format!(
                        "Statement: {}\nAnswer: {}\n\n",
                        item.text,
                        likert_phrase(r.value)
                    )
                })
                .collect();

            for (l_idx, &lambda) in config.lambda_grid.iter().enumerate() {
                let mut responses = Vec::new();
                for item in &test_items {
                    let scenario = Scenario::new(
                        item.id.clone(),
                        format!("Statement: {}\nAnswer (1-5):", item.text),
                        "single Likert value 1-5",
                    )
                    .expect("item text is non-empty");
                    let (low, high) = assemble_extrema_prompts(spectrum, &scenario, perm_seed);
                    let prompt_a = format!("{fewshot_block}{low}");
                    let prompt_b = format!("{fewshot_block}{high}");
                    let seed = derive_seed(
                        config.master_seed,
                        &format!("inventory/{}/{p_idx}/{l_idx}/{}", spectrum.name, item.id),
                        0,
                    );
                    let decode = decode_config(config, decoder, lambda, seed);
                    let record = generate(backend, &prompt_a, &prompt_b, &decode)?;
                    let value = parse_likert(&record.text)?;
                    responses.push(LikertResponse::new(item.id.clone(), value)?);
                }
                let report = crate::psychometrics::trait_score(&responses, &test_items, trait_id)?;
                lambdas_seen.push(lambda);
                scores_seen.push(report.mean_score);
                writer.write(serde_json::json!({
                    "kind": "trait_score",
                    "trait": trait_id.as_str(),
                    "lambda": lambda,
                    "partition": p_idx,
                    "fewshot_facets": partition.fewshot,
                    "test_facets": partition.test,
                    "target_mean": target_mean,
                    "target_level": target_level.as_str(),
                    "score": report.mean_score,
                    "n_items": report.n_items,
                }))?;
            }
        }

        let pearson_r = pearson(&lambdas_seen, &scores_seen)?;
        let spearman_rho = spearman(&lambdas_seen, &scores_seen)?;
        writer.write(serde_json::json!({
            "kind": "correlation",
            "trait": trait_id.as_str(),
            "pearson": pearson_r,
            "spearman": spearman_rho,
            "n": lambdas_seen.len(),
        }))?;
    }
    Ok(())
}

pub(crate) fn run_econ_game(
    config: &ExperimentConfig,
    backend: &dyn LmBackend,
    writer: &mut ResultWriter,
) -> Result<(), ExperimentError> {
    let game = config.game.expect("validated");
    let spectra = load_spectra(config)?;
    let scenarios = load_scenarios(config)?;
    let spectrum = &spectra[0];
    let scenario = &scenarios[0];
    let decoder = config.decoder.unwrap_or(spectrum.decoder_hint);
    let endowment = config.endowment.unwrap_or(0);

    for (l_idx, &lambda) in config.lambda_grid.iter().enumerate() {
        let mut amounts = Vec::new();
        for &perm_seed in &config.permutation_seeds {
            let (prompt_low, prompt_high) =
                assemble_extrema_prompts(spectrum, scenario, perm_seed);
            let seed = derive_seed(
                config.master_seed,
                &format!("econ/{}/{perm_seed}", game.as_str()),
                l_idx as u64,
            );
            let mut decode = decode_config(config, decoder, lambda, seed);
            match game {
                EconGame::Dictator | EconGame::Thieves => {
                    let record = generate(backend, &prompt_low, &prompt_high, &decode)?;
                    let parsed = parse_amount(&record.text, endowment);
                    let (amount, parse_error) = match parsed {
                        Ok(a) => {
                            amounts.push(a as f64);
                            (Some(a), None)
                        }
                        Err(e) => (None, Some(e.to_string())),
                    };
                    writer.write(serde_json::json!({
                        "kind": "econ_action",
                        "game": game.as_str(),
                        "lambda": lambda,
                        "permutation_seed": perm_seed,
                        "amount": amount,
                        "parse_error": parse_error,
                        "text": record.text,
                    }))?;
                }
                EconGame::Chicken => {
                    decode.record_steps = true;
                    let record = generate(backend, &prompt_low, &prompt_high, &decode)?;
                    let hit =
                        parse_labeled_choice(&record, ("swerve", "straight"), config.window)?;
                    let (choice, probability) = match hit {
                        Some(h) => (
                            Some(if h.label_index == 0 { "swerve" } else { "straight" }),
                            h.probability,
                        ),
                        None => (None, 0.5),
                    };
                    writer.write(serde_json::json!({
                        "kind": "econ_choice",
                        "game": game.as_str(),
                        "lambda": lambda,
                        "permutation_seed": perm_seed,
                        "choice": choice,
                        "probability": probability,
                        "text": record.text,
                    }))?;
                }
            }
        }
        if matches!(game, EconGame::Dictator | EconGame::Thieves) {
            let mean = if amounts.is_empty() {
                None
            } else {
                Some(amounts.iter().sum::<f64>() / amounts.len() as f64)
            };
            writer.write(serde_json::json!({
                "kind": "econ_summary",
                "game": game.as_str(),
                "lambda": lambda,
                "mean_amount": mean,
                "n": amounts.len(),
            }))?;
        }
    }
    Ok(())
}

pub(crate) fn run_runoff_replay(
    config: &ExperimentConfig,
    backend: &dyn LmBackend,
    writer: &mut ResultWriter,
) -> Result<(), ExperimentError> {
    let turns = crate::harness::read_game_log(config.game_log.as_ref().expect("validated"))?;
    let spectra = load_spectra(config)?;
    let scenarios = load_scenarios(config)?;
    let spectrum = &spectra[0];
    let scenario = &scenarios[0];
    let decoder = config.decoder.unwrap_or(spectrum.decoder_hint);
    let n_considered = config.n_considered.expect("validated");
    let perm_seed = config.permutation_seeds.first().copied().unwrap_or(0);

    for (l_idx, &lambda) in config.lambda_grid.iter().enumerate() {
        let seed = derive_seed(config.master_seed, "runoff_replay", l_idx as u64);
        let decode = decode_config(config, decoder, lambda, seed);
        let mut inducer = RunoffInducer::new(
            backend,
            spectrum,
            scenario,
            decode,
            n_considered,
            config.labels.clone(),
            config.window,
            perm_seed,
        );
        let mut dists = Vec::with_capacity(turns.len());
        for turn in &turns {
            dists.push(inducer.induce(turn, lambda)?);
        }
        let report = evaluate_fidelity(&turns, &dists)?;
        writer.write(serde_json::json!({
            "kind": "fidelity",
            "model": config.backend.model_id,
            "n_considered": n_considered,
            "decoder": decoder,
            "lambda": lambda,
            "average_ppx": report.average_perplexity,
            "missed_moves": report.missed_moves as f64,
            "n_scored_turns": report.n_scored_turns,
        }))?;
    }
    Ok(())
}

pub(crate) fn run_twin(
    config: &ExperimentConfig,
    backend: &dyn LmBackend,
    writer: &mut ResultWriter,
) -> Result<(), ExperimentError> {
    let turns = crate::harness::read_game_log(config.game_log.as_ref().expect("validated"))?;
    let spectra = load_spectra(config)?;
    let scenarios = load_scenarios(config)?;
    let spectrum = spectra[0].clone();
    let scenario = scenarios[0].clone();
    let decoder = config.decoder.unwrap_or(spectrum.decoder_hint);
    let search = config.search.as_ref().expect("validated");
    let n_considered = config.n_considered.expect("validated");
    let perm_seed = config.permutation_seeds.first().copied().unwrap_or(0);
    let sample = BehaviorSample::new(turns, spectrum.clone(), scenario.clone())
        .map_err(ExperimentError::from)?;

    let seed = derive_seed(config.master_seed, "twin", 0);
    let decode = decode_config(config, decoder, 0.0, seed);
    let mut inducer = RunoffInducer::new(
        backend,
        &spectrum,
        &scenario,
        decode,
        n_considered,
        config.labels.clone(),
        config.window,
        perm_seed,
    );
    let mode = search.mode;
    let mut objective =
        |lambda: f64| behavior_objective(lambda, &sample, &mut inducer, mode);
    let result: SearchResult = match search.method {
        SearchMethod::Grid => grid_search(&mut objective, &config.lambda_grid, mode)?,
        SearchMethod::GoldenSection => {
            let lo = search.lo.unwrap_or(spectrum.lambda_range.0);
            let hi = search.hi.unwrap_or(spectrum.lambda_range.1);
            golden_section_search(&mut objective, lo, hi, search.tol, search.max_iters, mode)?
        }
    };
    writer.write(serde_json::json!({
        "kind": "twin_search",
        "spectrum": spectrum.name,
        "decoder": decoder,
        "method": search.method,
        "mode": mode,
        "lambda_star": result.lambda_star,
        "objective_value": result.objective_value,
        "n_evaluations": result.trace.len(),
        "converged": result.converged,
        "multimodal_hint": result.multimodal_hint,
        "trace": result.trace,
    }))?;
    Ok(())
}

pub(crate) fn run_regress(
    config: &ExperimentConfig,
    backend: &dyn LmBackend,
    writer: &mut ResultWriter,
) -> Result<(), ExperimentError> {
    let regression = config.regression.as_ref().expect("validated");
    let embedder: Box<dyn Embedder> = match regression.embedder {
        EmbedderKind::Hash => Box::new(HashEmbedder::new(regression.embedding_dim)),
        EmbedderKind::Http => {
            let url = regression.embed_url.clone().ok_or_else(|| {
                ExperimentError::Config("http embedder requires embed_url".into())
            })?;
            Box::new(HttpEmbedder::new(url, regression.embedding_dim))
        }
    };

    let samples: Vec<RegressionSample> = match &regression.dataset_in {
        Some(path) => load_dataset(path)?,
        None => {
            let spectra = load_spectra(config)?;
            let scenarios = load_scenarios(config)?;
            let decode = decode_config(
                config,
                config.decoder.unwrap_or(DecoderKind::Contrastive),
                0.0,
                derive_seed(config.master_seed, "regress", 0),
            );
            crate::twinning::build_regression_dataset(
                &spectra,
                &scenarios,
                &config.lambda_grid,
                &config.permutation_seeds,
                &decode,
                backend,
                embedder.as_ref(),
            )?
        }
    };
    if let Some(path) = &regression.dataset_out {
        save_dataset(&samples, path)?;
    }
    let (train, validation) = split_dataset(samples);
    writer.write(serde_json::json!({
        "kind": "regression_dataset",
        "n_train": train.len(),
        "n_validation": validation.len(),
        "embedding_dim": regression.embedding_dim,
    }))?;

    if !regression.train {
        return Ok(());
    }
    let mut hyper = regression.hyper.clone();
    hyper.seed = derive_seed(config.master_seed, "regress.train", 0);
    let (model, report) = mlp_train(&train, &hyper)?;
    if let Some(path) = &regression.model_out {
        model.save(path)?;
    }
    writer.write(serde_json::json!({
        "kind": "regression_train",
        "n_train": train.len(),
        "final_train_mse": report.final_train_mse,
        "epochs": hyper.epochs,
        "learning_rate": hyper.learning_rate,
    }))?;

    let mut names: Vec<String> = validation.iter().map(|s| s.spectrum.clone()).collect();
    names.sort();
    names.dedup();
    for name in names {
        let group: Vec<RegressionSample> = validation
            .iter()
            .filter(|s| s.spectrum == name)
            .cloned()
            .collect();
        let mse = mlp_mse(&model, &group)?;
        writer.write(serde_json::json!({
            "kind": "regression_eval",
            "trait": name,
            "lambda_mse": mse,
            "n_validation": group.len(),
        }))?;
    }
    if !validation.is_empty() {
        let overall = mlp_mse(&model, &validation)?;
        writer.write(serde_json::json!({
            "kind": "regression_eval_overall",
            "lambda_mse": overall,
            "n_validation": validation.len(),
        }))?;
    }
    Ok(())
}
