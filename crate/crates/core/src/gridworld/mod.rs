//! Single-room pickup gridworld.
//!
//! A room of `room_size`×`room_size` cells (walls included) holds one object
//! matching the instruction and a handful of distractors. The agent sees a
//! forward-facing 7×7 crop rendered to 64×64 RGB and stacked over the last
//! four frames. Any pickup ends the episode; so does the 40-step limit.

mod expert;
mod render;
mod view;

pub use expert::{expert_action, expert_plan};
pub use render::{render_frame, FRAME_CHANNELS, FRAME_LEN, FRAME_SIZE};
pub use view::{symbolic_view, view_cell_to_world, SymbolicCell, SymbolicImage, VIEW_SIZE};

use crate::error::{EtherError, Result};
use crate::vocab::{Goal, Vocabulary, COLOURS, SHAPES};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;
use std::sync::Arc;

pub const MAX_STEPS: usize = 40;
pub const STACK: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Colour {
    Red,
    Green,
    Blue,
    Purple,
    Yellow,
    Grey,
}

impl Colour {
    pub const ALL: [Colour; 6] = [
        Colour::Red,
        Colour::Green,
        Colour::Blue,
        Colour::Purple,
        Colour::Yellow,
        Colour::Grey,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        COLOURS[self.index()]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Shape {
    Ball,
    Key,
    Box,
}

impl Shape {
    pub const ALL: [Shape; 3] = [Shape::Ball, Shape::Key, Shape::Box];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        SHAPES[self.index()]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Pos {
    pub row: i32,
    pub col: i32,
}

impl Pos {
    pub fn new(row: i32, col: i32) -> Self {
        Self { row, col }
    }

    pub fn step(self, dir: Dir) -> Pos {
        let (dr, dc) = dir.delta();
        Pos::new(self.row + dr, self.col + dc)
    }
}

/// Facing direction, numbered clockwise from east.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Dir {
    Right,
    Down,
    Left,
    Up,
}

impl Dir {
    pub const ALL: [Dir; 4] = [Dir::Right, Dir::Down, Dir::Left, Dir::Up];

    pub fn delta(self) -> (i32, i32) {
        match self {
            Dir::Right => (0, 1),
            Dir::Down => (1, 0),
            Dir::Left => (0, -1),
            Dir::Up => (-1, 0),
        }
    }

    pub fn left(self) -> Dir {
        Dir::ALL[(self as usize + 3) % 4]
    }

    pub fn right(self) -> Dir {
        Dir::ALL[(self as usize + 1) % 4]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Action {
    TurnLeft,
    TurnRight,
    Forward,
    Pickup,
}

impl Action {
    pub const ALL: [Action; 4] = [Action::TurnLeft, Action::TurnRight, Action::Forward, Action::Pickup];
    pub const COUNT: usize = 4;

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Result<Action> {
        Action::ALL
            .get(i)
            .copied()
            .ok_or_else(|| EtherError::Domain(format!("action index {i} out of range")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct WorldObject {
    pub colour: Colour,
    pub shape: Shape,
    pub pos: Pos,
}

/// Structured pickup instruction: "pick up" + article + optional colour + shape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Instruction {
    pub definite: bool,
    pub colour: Option<Colour>,
    pub shape: Shape,
}

impl Instruction {
    pub fn matches(&self, obj: &WorldObject) -> bool {
        obj.shape == self.shape && self.colour.is_none_or(|c| c == obj.colour)
    }

    pub fn to_goal(&self, vocab: &Vocabulary) -> Goal {
        let mut t = vec![vocab.pick(), vocab.up()];
        t.push(if self.definite { vocab.article_the() } else { vocab.article_a() });
        if let Some(c) = self.colour {
            t.push(vocab.colour(c.index()));
        }
        t.push(vocab.shape(self.shape.index()));
        Goal::new(t)
    }
}

/// Longest instruction in tokens, excluding EoS.
pub const MAX_INSTRUCTION_LEN: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvConfig {
    pub room_size: usize,
    pub n_distractors: usize,
    pub allow_colorless_goals: bool,
    pub seed: u64,
    /// Skip pixel rendering; symbolic views are still produced.
    pub render_pixels: bool,
    /// Picking up the goal object counts as a failure; no episode can succeed.
    pub success_impossible: bool,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            room_size: 8,
            n_distractors: 5,
            allow_colorless_goals: true,
            seed: 0,
            render_pixels: true,
            success_impossible: false,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        let interior = self.room_size.saturating_sub(2).pow(2);
        if interior == 0 {
            return Err(EtherError::Config(format!(
                "room_size {} leaves no placeable cells",
                self.room_size
            )));
        }
        if self.n_distractors + 2 > interior {
            return Err(EtherError::Config(format!(
                "{} objects and the agent do not fit in {interior} cells",
                self.n_distractors + 1
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorldState {
    pub size: i32,
    pub agent: Pos,
    pub dir: Dir,
    pub objects: Vec<WorldObject>,
}

impl WorldState {
    pub fn is_interior(&self, p: Pos) -> bool {
        p.row >= 1 && p.col >= 1 && p.row < self.size - 1 && p.col < self.size - 1
    }

    pub fn object_at(&self, p: Pos) -> Option<&WorldObject> {
        self.objects.iter().find(|o| o.pos == p)
    }

    pub fn front(&self) -> Pos {
        self.agent.step(self.dir)
    }
}

/// Stacked frames, oldest first, plus the symbolic view of the newest frame.
#[derive(Debug, Clone)]
pub struct Observation {
    frames: [Arc<[u8]>; STACK],
    view: Arc<SymbolicImage>,
}

impl Observation {
    pub fn new(frames: [Arc<[u8]>; STACK], view: Arc<SymbolicImage>) -> Self {
        Self { frames, view }
    }

    pub fn frames(&self) -> &[Arc<[u8]>; STACK] {
        &self.frames
    }

    pub fn view(&self) -> &SymbolicImage {
        &self.view
    }

    pub fn has_pixels(&self) -> bool {
        self.frames.iter().all(|f| f.len() == FRAME_LEN)
    }

    /// Channel count of the stacked tensor, `4·C`.
    pub const CHANNELS: usize = STACK * FRAME_CHANNELS;

    /// Pixels in `[0, 1]`, laid out `(4·C, 64, 64)`.
    pub fn pixels(&self) -> Result<Vec<f32>> {
        if !self.has_pixels() {
            return Err(EtherError::Usage("observation was produced without pixel rendering".into()));
        }
        let mut out = Vec::with_capacity(STACK * FRAME_LEN);
        for f in &self.frames {
            out.extend(f.iter().map(|&b| b as f32 / 255.0));
        }
        Ok(out)
    }

    /// Bit-level identity: same frames (by content) and same view.
    pub fn same_as(&self, other: &Observation) -> bool {
        self.frames.iter().zip(other.frames.iter()).all(|(a, b)| a[..] == b[..]) && self.view == other.view
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OutcomeStatus {
    Success,
    Failure,
    Timeout,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EpisodeOutcome {
    pub status: OutcomeStatus,
    pub length: usize,
}

#[derive(Debug, Clone)]
pub struct StepResult {
    pub observation: Observation,
    pub reward: f32,
    pub done: bool,
    pub outcome: Option<EpisodeOutcome>,
}

pub struct GridWorld {
    config: EnvConfig,
    vocab: Vocabulary,
    state: WorldState,
    instruction: Instruction,
    steps: usize,
    done: bool,
    stack: VecDeque<Arc<[u8]>>,
}

impl GridWorld {
    pub fn new(config: EnvConfig, vocab: Vocabulary) -> Result<Self> {
        config.validate()?;
        let size = config.room_size as i32;
        Ok(Self {
            config,
            vocab,
            state: WorldState {
                size,
                agent: Pos::new(1, 1),
                dir: Dir::Right,
                objects: Vec::new(),
            },
            instruction: Instruction {
                definite: true,
                colour: None,
                shape: Shape::Ball,
            },
            steps: 0,
            done: true,
            stack: VecDeque::with_capacity(STACK),
        })
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn state(&self) -> &WorldState {
        &self.state
    }

    pub fn instruction(&self) -> Instruction {
        self.instruction
    }

    pub fn goal(&self) -> Goal {
        self.instruction.to_goal(&self.vocab)
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn reset(&mut self, seed: u64) -> Result<(Observation, Goal)> {
        self.reset_with(seed, None)
    }

    /// Reset with a forced target `(colour, shape)` and colour specification.
    pub fn reset_with(&mut self, seed: u64, target: Option<(Colour, Shape, bool)>) -> Result<(Observation, Goal)> {
        let mut rng = StdRng::seed_from_u64(seed);
        let size = self.config.room_size as i32;
        for _ in 0..1000 {
            let (colour, shape, colour_given) = match target {
                Some(t) => t,
                None => (
                    Colour::ALL[rng.random_range(0..Colour::ALL.len())],
                    Shape::ALL[rng.random_range(0..Shape::ALL.len())],
                    !(self.config.allow_colorless_goals && rng.random_bool(0.5)),
                ),
            };
            let mut free: Vec<Pos> = (1..size - 1)
                .flat_map(|r| (1..size - 1).map(move |c| Pos::new(r, c)))
                .collect();
            let mut take = |rng: &mut StdRng| free.swap_remove(rng.random_range(0..free.len()));
            let mut objects = vec![WorldObject {
                colour,
                shape,
                pos: take(&mut rng),
            }];
            while objects.len() < self.config.n_distractors + 1 {
                let c = Colour::ALL[rng.random_range(0..Colour::ALL.len())];
                let s = Shape::ALL[rng.random_range(0..Shape::ALL.len())];
                if colour_given && c == colour && s == shape {
                    continue;
                }
                objects.push(WorldObject {
                    colour: c,
                    shape: s,
                    pos: take(&mut rng),
                });
            }
            let agent = take(&mut rng);
            let dir = Dir::ALL[rng.random_range(0..4)];
            let mut instruction = Instruction {
                definite: true,
                colour: colour_given.then_some(colour),
                shape,
            };
            let n_matching = objects.iter().filter(|o| instruction.matches(o)).count();
            instruction.definite = n_matching == 1;
            let state = WorldState {
                size,
                agent,
                dir,
                objects,
            };
            if expert_plan(&state, &instruction).is_ok() {
                self.state = state;
                self.instruction = instruction;
                self.steps = 0;
                self.done = false;
                let frame = self.render();
                self.stack.clear();
                for _ in 0..STACK {
                    self.stack.push_back(frame.clone());
                }
                return Ok((self.observation(), self.goal()));
            }
        }
        Err(EtherError::Config("could not generate a layout with a reachable goal".into()))
    }

    fn render(&self) -> Arc<[u8]> {
        if self.config.render_pixels {
            render_frame(&self.state).into()
        } else {
            Arc::from(Vec::new())
        }
    }

    pub fn observation(&self) -> Observation {
        let frames = [
            self.stack[0].clone(),
            self.stack[1].clone(),
            self.stack[2].clone(),
            self.stack[3].clone(),
        ];
        Observation::new(frames, Arc::new(symbolic_view(&self.state)))
    }

    pub fn step(&mut self, action: Action) -> Result<StepResult> {
        if self.done {
            return Err(EtherError::Usage("step called on a finished episode; call reset".into()));
        }
        self.steps += 1;
        let mut reward = 0.0;
        let mut status = None;
        match action {
            Action::TurnLeft => self.state.dir = self.state.dir.left(),
            Action::TurnRight => self.state.dir = self.state.dir.right(),
            Action::Forward => {
                let front = self.state.front();
                if self.state.is_interior(front) && self.state.object_at(front).is_none() {
                    self.state.agent = front;
                }
            }
            Action::Pickup => {
                let front = self.state.front();
                if let Some(i) = self.state.objects.iter().position(|o| o.pos == front) {
                    let obj = self.state.objects.remove(i);
                    if self.instruction.matches(&obj) && !self.config.success_impossible {
                        reward = 1.0;
                        status = Some(OutcomeStatus::Success);
                    } else {
                        status = Some(OutcomeStatus::Failure);
                    }
                }
            }
        }
        if status.is_none() && self.steps >= MAX_STEPS {
            status = Some(OutcomeStatus::Timeout);
        }
        self.done = status.is_some();
        let frame = self.render();
        self.stack.pop_front();
        self.stack.push_back(frame);
        Ok(StepResult {
            observation: self.observation(),
            reward,
            done: self.done,
            outcome: status.map(|status| EpisodeOutcome {
                status,
                length: self.steps,
            }),
        })
    }
}
