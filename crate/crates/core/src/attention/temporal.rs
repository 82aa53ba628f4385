use std::fmt;
use std::str::FromStr;

use super::multihead::{multihead_attention, MultiheadVars};
use crate::error::{Error, Result};
use crate::tensor::{Real, Var};

/// Which preserved embeddings temporal self-attention reads as keys/values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum HistoryMode {
    /// Only the embedding of the previous buffer step.
    Last,
    /// Every embedding produced so far, oldest first.
    #[default]
    All,
}

impl fmt::Display for HistoryMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            HistoryMode::Last => "last",
            HistoryMode::All => "all",
        })
    }
}

impl FromStr for HistoryMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "last" => Ok(HistoryMode::Last),
            "all" => Ok(HistoryMode::All),
            other => Err(Error::config("history_mode", format!("expected `last` or `all`, got `{other}`"))),
        }
    }
}

/// Embeddings `E^1 … E^{i−1}` produced by earlier buffer steps.
#[derive(Clone)]
pub struct HistoryBank<'t, T: Real> {
    mode: HistoryMode,
    entries: Vec<Var<'t, T>>,
    steps: usize,
}

impl<'t, T: Real> HistoryBank<'t, T> {
    pub fn new(mode: HistoryMode) -> Self {
        HistoryBank {
            mode,
            entries: Vec::new(),
            steps: 0,
        }
    }

    pub fn mode(&self) -> HistoryMode {
        self.mode
    }

    /// Number of completed buffer steps.
    pub fn len(&self) -> usize {
        self.steps
    }

    pub fn is_empty(&self) -> bool {
        self.steps == 0
    }

    /// Embeddings currently retained (one in `Last` mode).
    pub fn entries(&self) -> &[Var<'t, T>] {
        &self.entries
    }

    pub fn push(&mut self, embedding: Var<'t, T>) {
        if self.mode == HistoryMode::Last {
            self.entries.clear();
        }
        self.entries.push(embedding);
        self.steps += 1;
    }
}

/// Attention of the query over the history bank.
///
/// With an empty bank the query attends to itself, i.e. this is exactly
/// `multihead_attention(q, q, q)`.
pub fn temporal_self_attention<'t, T: Real>(
    q: Var<'t, T>,
    history: &HistoryBank<'t, T>,
    vars: &MultiheadVars<'t, T>,
    num_heads: usize,
) -> Result<Var<'t, T>> {
    let kv = match history.entries() {
        [] => q,
        [single] => *single,
        many => q.tape().concat(many, 0)?,
    };
    multihead_attention(q, kv, kv, vars, num_heads)
}
