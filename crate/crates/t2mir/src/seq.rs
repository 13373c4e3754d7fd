//! Token-sequence types shared by the policy model, data pipeline, and
//! analysis exports.

use serde::{Deserialize, Serialize};

/// Which of the three interleaved channels a token carries.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Modality {
    State,
    Action,
    Reward,
}

impl Modality {
    pub fn tag(self) -> &'static str {
        match self {
            Modality::State => "state",
            Modality::Action => "action",
            Modality::Reward => "reward",
        }
    }
}

/// Half-open token span `[start, end)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn len(&self) -> usize {
        self.end - self.start
    }
    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }
}

/// Raw per-token content, before any learned embedding.
#[derive(Clone, Debug)]
pub enum TokenFeat {
    /// Environment observation vector.
    State(Vec<f64>),
    /// Discrete action id.
    ActionDiscrete(usize),
    /// Continuous action vector.
    ActionContinuous(Vec<f64>),
    /// Scalar reward.
    Reward(f64),
}

impl TokenFeat {
    pub fn modality(&self) -> Modality {
        match self {
            TokenFeat::State(_) => Modality::State,
            TokenFeat::ActionDiscrete(_) | TokenFeat::ActionContinuous(_) => Modality::Action,
            TokenFeat::Reward(_) => Modality::Reward,
        }
    }
}

/// Supervision target attached to one token position.
#[derive(Clone, Debug)]
pub enum Target {
    Discrete(usize),
    Continuous(Vec<f64>),
}

/// One model input sequence: interleaved (s, a, r) tokens, per-token
/// episode-relative timesteps, and the episode spans used as routing groups
/// by the task-wise mixture layer.
#[derive(Clone, Debug)]
pub struct TokenSeq {
    pub feats: Vec<TokenFeat>,
    pub timesteps: Vec<usize>,
    /// Routing groups; for across-episode contexts, one span per episode.
    pub groups: Vec<Span>,
    /// Tokens belonging to the prompt when the final token is a query state;
    /// equals `feats.len()` when there is no query token.
    pub prompt_len: usize,
    /// (token position, target) pairs where the imitation loss applies.
    pub targets: Vec<(usize, Target)>,
    /// Source task, used for contrastive pairing and analysis exports.
    pub task_index: usize,
}

impl TokenSeq {
    pub fn len(&self) -> usize {
        self.feats.len()
    }
    pub fn is_empty(&self) -> bool {
        self.feats.is_empty()
    }
    pub fn modalities(&self) -> Vec<Modality> {
        self.feats.iter().map(|f| f.modality()).collect()
    }
}

/// One routing observation: either a per-token decision from the token-wise
/// layer or a per-group decision from the task-wise layer.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RoutingRecord {
    pub layer: usize,
    /// `token_wise` or `task_wise`.
    pub kind: RoutingKind,
    /// Token position for token-wise records; group index for task-wise.
    pub index: usize,
    pub modality: Option<Modality>,
    pub experts: Vec<usize>,
    pub weights: Vec<f64>,
    /// Full router distribution for task-wise records.
    pub z: Option<Vec<f64>>,
    pub task_index: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoutingKind {
    TokenWise,
    TaskWise,
}
