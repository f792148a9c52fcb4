pub mod augment;
pub mod game;
pub mod listener;
pub mod losses;
pub mod stgs;

pub use augment::{augment, AugmentConfig};
pub use game::{
    build_games, sample_games, symbolic_stimuli, GameConfig, GameLearner, GameOutput, GameStepReport, RefGame, Stimulus,
    StimulusBatch, StimulusEncoder, SymbolicStimulus,
};
pub use listener::Listener;
pub use losses::{hinge_loss, impatient_loss, kl_divergence, lazy_loss, lazy_loss_via_kl, PROB_FLOOR};
pub use stgs::{learned_temperature, stgs_sample, stgs_sample_seeded, StgsSample};
