//! Interpolative decoding between two prompt-conditioned next-token
//! distributions, and its inverse: fitting the interpolation parameter
//! lambda that best explains observed behavior ("twinning").
//!
//! A character spectrum is a pair of extremum prompts. During generation the
//! backend is queried once per prompt at every step, the two distributions
//! are combined under a mixture or contrastive rule governed by lambda, and
//! a single token is sampled and appended to both contexts. Downstream
//! modules administer Big Five inventories, run economic games and runoff
//! replays, and search or regress lambda from recorded behavior.

pub mod backend;
pub mod harness;
pub mod interp;
pub mod psychometrics;
pub mod runner;
pub mod spectra;
pub mod twinning;

pub use backend::{
    BackendDescriptor, BackendError, BackendKind, HttpBackend, LmBackend, TokenDistribution,
    TokenId, TokenSequence, TopK, ToyModel, ToyModelBuilder,
};
pub use harness::{
    evaluate_fidelity, parse_amount, parse_labeled_choice, runoff_distribution,
    ActionDistribution, EconGame, FidelityReport, GameTurn, HarnessError,
};
pub use interp::{
    align_supports, contrastive_combine, generate, mixture_combine, sample_token, Anchor,
    DecodeConfig, DecoderKind, GenerationRecord, InterpError, SamplingMode, SamplingPolicy,
    StepTrace, StopReason,
};
pub use spectra::{
    assemble_extrema_prompts, control_prompt, control_statements, Scenario, SpectraError,
    TraitSpectrum, CONTROL_PROMPT_COUNT,
};
pub use twinning::{
    behavior_objective, golden_section_search, grid_search, BehaviorSample, Embedder,
    HashEmbedder, MlpModel, ObjectiveMode, RegressionSample, SearchResult, TwinError,
};
