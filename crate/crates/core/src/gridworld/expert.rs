use super::{Action, Dir, Instruction, Pos, WorldState};
use crate::error::{EtherError, Result};
use std::collections::{HashMap, VecDeque};

/// Shortest action sequence that ends with picking up an object matching
/// `instruction`, by breadth-first search over (cell, heading) states.
pub fn expert_plan(state: &WorldState, instruction: &Instruction) -> Result<Vec<Action>> {
    let facing_goal = |p: Pos, d: Dir| {
        state
            .object_at(p.step(d))
            .is_some_and(|o| instruction.matches(o))
    };
    let start = (state.agent, state.dir);
    let mut parent: HashMap<(Pos, Dir), ((Pos, Dir), Action)> = HashMap::new();
    let mut queue = VecDeque::from([start]);
    let mut seen = std::collections::HashSet::from([start]);
    while let Some((p, d)) = queue.pop_front() {
        if facing_goal(p, d) {
            let mut plan = vec![Action::Pickup];
            let mut cur = (p, d);
            while let Some(&(prev, a)) = parent.get(&cur) {
                plan.push(a);
                cur = prev;
            }
            plan.reverse();
            return Ok(plan);
        }
        let fwd = p.step(d);
        let moves = [
            (Action::TurnLeft, (p, d.left())),
            (Action::TurnRight, (p, d.right())),
            (Action::Forward, (fwd, d)),
        ];
        for (a, next) in moves {
            if a == Action::Forward && !(state.is_interior(fwd) && state.object_at(fwd).is_none()) {
                continue;
            }
            if seen.insert(next) {
                parent.insert(next, ((p, d), a));
                queue.push_back(next);
            }
        }
    }
    Err(EtherError::NoPath)
}

pub fn expert_action(state: &WorldState, instruction: &Instruction) -> Result<Action> {
    Ok(expert_plan(state, instruction)?[0])
}
