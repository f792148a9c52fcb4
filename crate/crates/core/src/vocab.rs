//! Shared token vocabulary.
//!
//! One vocabulary serves the environment's instruction grammar, the speaker's
//! emergent messages and the semantic grounding table. Id 0 is EoS and id 1 is
//! SoS; the instruction words come next and every remaining id is an
//! ungrounded symbol.

use crate::error::{EtherError, Result};
use serde::{Deserialize, Serialize};

pub type TokenId = u32;

pub const EOS: TokenId = 0;
pub const SOS: TokenId = 1;

pub const COLOURS: [&str; 6] = ["red", "green", "blue", "purple", "yellow", "grey"];
pub const SHAPES: [&str; 3] = ["ball", "key", "box"];
const FUNCTION_WORDS: [&str; 4] = ["pick", "up", "a", "the"];

const FIRST_WORD: TokenId = 2;

/// Number of instruction words (function words, colours, shapes).
pub const GROUNDED_TOKENS: usize = FUNCTION_WORDS.len() + COLOURS.len() + SHAPES.len();

/// Default vocabulary size: 62 ungrounded symbols plus SoS and EoS.
pub const DEFAULT_VOCAB_SIZE: usize = 64;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabulary {
    size: usize,
}

impl Vocabulary {
    pub fn new(size: usize) -> Result<Self> {
        let needed = Self::word_count() + 2;
        if size < needed {
            return Err(EtherError::Config(format!(
                "vocabulary of {size} tokens cannot hold the {needed} instruction tokens plus SoS/EoS"
            )));
        }
        Ok(Self { size })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    fn word_count() -> usize {
        FUNCTION_WORDS.len() + COLOURS.len() + SHAPES.len()
    }

    pub fn pick(&self) -> TokenId {
        FIRST_WORD
    }

    pub fn up(&self) -> TokenId {
        FIRST_WORD + 1
    }

    pub fn article_a(&self) -> TokenId {
        FIRST_WORD + 2
    }

    pub fn article_the(&self) -> TokenId {
        FIRST_WORD + 3
    }

    pub fn colour(&self, index: usize) -> TokenId {
        FIRST_WORD + FUNCTION_WORDS.len() as TokenId + index as TokenId
    }

    pub fn shape(&self, index: usize) -> TokenId {
        FIRST_WORD + (FUNCTION_WORDS.len() + COLOURS.len()) as TokenId + index as TokenId
    }

    pub fn colour_tokens(&self) -> Vec<TokenId> {
        (0..COLOURS.len()).map(|i| self.colour(i)).collect()
    }

    pub fn shape_tokens(&self) -> Vec<TokenId> {
        (0..SHAPES.len()).map(|i| self.shape(i)).collect()
    }

    pub fn colour_of(&self, token: TokenId) -> Option<usize> {
        let first = self.colour(0);
        (token >= first && token < first + COLOURS.len() as TokenId).then(|| (token - first) as usize)
    }

    pub fn shape_of(&self, token: TokenId) -> Option<usize> {
        let first = self.shape(0);
        (token >= first && token < first + SHAPES.len() as TokenId).then(|| (token - first) as usize)
    }

    pub fn word(&self, token: TokenId) -> String {
        match token {
            EOS => "<eos>".into(),
            SOS => "<sos>".into(),
            t if (t as usize) < FIRST_WORD as usize + Self::word_count() => {
                let i = (t - FIRST_WORD) as usize;
                if i < FUNCTION_WORDS.len() {
                    FUNCTION_WORDS[i].into()
                } else if i < FUNCTION_WORDS.len() + COLOURS.len() {
                    COLOURS[i - FUNCTION_WORDS.len()].into()
                } else {
                    SHAPES[i - FUNCTION_WORDS.len() - COLOURS.len()].into()
                }
            }
            t => format!("s{t}"),
        }
    }

    pub fn render(&self, goal: &Goal) -> String {
        goal.tokens().iter().map(|&t| self.word(t)).collect::<Vec<_>>().join(" ")
    }
}

impl Default for Vocabulary {
    fn default() -> Self {
        Self { size: DEFAULT_VOCAB_SIZE }
    }
}

/// A goal as a token sequence, truncated at (and excluding) the first EoS.
///
/// Environment instructions and speaker-generated relabelling goals share this
/// type; equality is token-exact.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
pub struct Goal {
    tokens: Vec<TokenId>,
}

impl Goal {
    pub fn new(tokens: impl IntoIterator<Item = TokenId>) -> Self {
        Self {
            tokens: tokens.into_iter().take_while(|&t| t != EOS).collect(),
        }
    }

    /// The single-EoS goal, used as the contrastive negative.
    pub fn eos() -> Self {
        Self { tokens: Vec::new() }
    }

    pub fn tokens(&self) -> &[TokenId] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Tokens followed by EoS, the form a speaker is trained to emit.
    pub fn with_eos(&self) -> Vec<TokenId> {
        let mut v = self.tokens.clone();
        v.push(EOS);
        v
    }

    pub fn contains(&self, token: TokenId) -> bool {
        self.tokens.contains(&token)
    }
}
