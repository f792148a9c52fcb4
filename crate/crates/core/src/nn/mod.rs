//! Differentiable building blocks shared by the RL agent and the
//! referential-game agents.

pub mod dueling;
pub mod encoder;
pub mod film;
pub mod gradcheck;
pub mod im2col;
pub mod language;
pub mod params;
pub mod speaker;

pub use dueling::DuelingHead;
pub use encoder::{global_pool, VisualEncoder, FEATURE_DIM};
pub use film::FiLMAdapter;
pub use gradcheck::{check_gradients, GradCheckOptions, GradCheckReport};
pub use language::{GoalEncoder, MessageEncoder, TokenEmbedding};
pub use params::{ParamSnapshot, ParameterStore};
pub use speaker::{Decoding, Speaker, SpeakerConfig, SpeakerOutput};
