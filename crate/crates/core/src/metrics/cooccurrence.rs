use super::Policy;
use crate::error::Result;
use crate::gridworld::{Colour, EnvConfig, GridWorld, Observation, Shape, SymbolicImage};
use crate::seeding::derive_indexed;
use crate::vocab::{Vocabulary, COLOURS, SHAPES};
use serde::{Deserialize, Serialize};

/// Object sightings per colour and per shape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CoOccurrence {
    pub colours: [u64; COLOURS.len()],
    pub shapes: [u64; SHAPES.len()],
}

fn rank(counts: &[u64], i: usize) -> usize {
    1 + counts.iter().filter(|&&c| c > counts[i]).count()
}

impl CoOccurrence {
    pub fn add_view(&mut self, view: &SymbolicImage) {
        for (c, s) in view.objects() {
            self.colours[c.index()] += 1;
            self.shapes[s.index()] += 1;
        }
    }

    /// 1-based competition rank (ties share the better rank).
    pub fn colour_rank(&self, c: Colour) -> usize {
        rank(&self.colours, c.index())
    }

    pub fn shape_rank(&self, s: Shape) -> usize {
        rank(&self.shapes, s.index())
    }

    pub fn is_empty(&self) -> bool {
        self.colours.iter().chain(&self.shapes).all(|&c| c == 0)
    }
}

pub fn histogram_from_views<'a>(views: impl IntoIterator<Item = &'a SymbolicImage>) -> CoOccurrence {
    let mut h = CoOccurrence::default();
    for v in views {
        h.add_view(v);
    }
    h
}

/// Count every visible object over every view of `n_episodes` episodes whose
/// goal is the fully specified `(colour, shape)`.
pub fn co_occurrence_histogram(
    policy: &mut dyn Policy,
    env_cfg: &EnvConfig,
    goal: (Colour, Shape),
    n_episodes: usize,
    seed: u64,
) -> Result<CoOccurrence> {
    let mut h = CoOccurrence::default();
    let mut envs = Vec::with_capacity(n_episodes);
    let mut observations: Vec<Observation> = Vec::with_capacity(n_episodes);
    for i in 0..n_episodes {
        let mut env = GridWorld::new(env_cfg.clone(), Vocabulary::default())?;
        let (obs, _) = env.reset_with(derive_indexed(seed, i as u64), Some((goal.0, goal.1, true)))?;
        h.add_view(obs.view());
        envs.push(env);
        observations.push(obs);
    }
    policy.begin(n_episodes)?;
    loop {
        let ids: Vec<usize> = (0..n_episodes).filter(|&i| !envs[i].is_done()).collect();
        if ids.is_empty() {
            break;
        }
        let actions = {
            let env_refs: Vec<&GridWorld> = ids.iter().map(|&i| &envs[i]).collect();
            let obs_refs: Vec<&Observation> = ids.iter().map(|&i| &observations[i]).collect();
            policy.act(&ids, &env_refs, &obs_refs)?
        };
        for (&i, a) in ids.iter().zip(actions) {
            let step = envs[i].step(a)?;
            h.add_view(step.observation.view());
            observations[i] = step.observation;
        }
    }
    Ok(h)
}
