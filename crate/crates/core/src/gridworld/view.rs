use super::{Colour, Pos, Shape, WorldState};

/// Side of the square egocentric field of view.
pub const VIEW_SIZE: usize = 7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SymbolicCell {
    pub shape: usize,
    pub colour: usize,
    pub present: bool,
}

/// Per-cell object records over the agent's field of view.
///
/// Row 0 is the farthest row ahead of the agent; the agent stands at row
/// `VIEW_SIZE - 1`, column `VIEW_SIZE / 2`, facing up.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SymbolicImage {
    cells: [[SymbolicCell; VIEW_SIZE]; VIEW_SIZE],
}

impl SymbolicImage {
    pub fn empty() -> Self {
        Self {
            cells: [[SymbolicCell::default(); VIEW_SIZE]; VIEW_SIZE],
        }
    }

    pub fn cell(&self, row: usize, col: usize) -> SymbolicCell {
        self.cells[row][col]
    }

    pub fn set(&mut self, row: usize, col: usize, cell: SymbolicCell) {
        self.cells[row][col] = cell;
    }

    pub fn objects(&self) -> impl Iterator<Item = (Colour, Shape)> + '_ {
        self.cells
            .iter()
            .flatten()
            .filter(|c| c.present)
            .map(|c| (Colour::ALL[c.colour], Shape::ALL[c.shape]))
    }

    pub fn visible_colours(&self) -> Vec<Colour> {
        let mut v: Vec<Colour> = self.objects().map(|(c, _)| c).collect();
        v.sort_by_key(|c| c.index());
        v.dedup();
        v
    }

    pub fn visible_shapes(&self) -> Vec<Shape> {
        let mut v: Vec<Shape> = self.objects().map(|(_, s)| s).collect();
        v.sort_by_key(|s| s.index());
        v.dedup();
        v
    }
}

/// World cell shown at view position `(row, col)`.
pub fn view_cell_to_world(state: &WorldState, row: usize, col: usize) -> Pos {
    let ahead = (VIEW_SIZE - 1 - row) as i32;
    let lateral = col as i32 - (VIEW_SIZE / 2) as i32;
    let (fr, fc) = state.dir.delta();
    let (rr, rc) = state.dir.right().delta();
    Pos::new(
        state.agent.row + ahead * fr + lateral * rr,
        state.agent.col + ahead * fc + lateral * rc,
    )
}

/// Objects in the agent's forward 7×7 crop. In a single walled room nothing
/// but the room boundary can hide an object, and all objects are inside it.
pub fn symbolic_view(state: &WorldState) -> SymbolicImage {
    let mut img = SymbolicImage::empty();
    for row in 0..VIEW_SIZE {
        for col in 0..VIEW_SIZE {
            let p = view_cell_to_world(state, row, col);
            if let Some(o) = state.object_at(p) {
                img.set(
                    row,
                    col,
                    SymbolicCell {
                        shape: o.shape.index(),
                        colour: o.colour.index(),
                        present: true,
                    },
                );
            }
        }
    }
    img
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gridworld::{Dir, WorldObject};
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn state_with(objects: Vec<WorldObject>, agent: Pos, dir: Dir) -> WorldState {
        WorldState {
            size: 8,
            agent,
            dir,
            objects,
        }
    }

    #[test]
    fn empty_view_has_no_objects() {
        let s = state_with(vec![], Pos::new(3, 3), Dir::Up);
        let v = symbolic_view(&s);
        assert_eq!(v.objects().count(), 0);
    }

    #[test]
    fn object_directly_ahead() {
        let key = WorldObject {
            colour: Colour::Green,
            shape: Shape::Key,
            pos: Pos::new(3, 4),
        };
        let s = state_with(vec![key], Pos::new(3, 3), Dir::Right);
        let v = symbolic_view(&s);
        let c = v.cell(VIEW_SIZE - 2, VIEW_SIZE / 2);
        assert_eq!(
            c,
            SymbolicCell {
                shape: Shape::Key.index(),
                colour: Colour::Green.index(),
                present: true
            }
        );
        assert_eq!(v.objects().collect::<Vec<_>>(), vec![(Colour::Green, Shape::Key)]);
    }

    /// Independent visibility oracle: project each object onto the agent's
    /// forward/right axes by dot products.
    fn oracle(state: &WorldState) -> Vec<(usize, usize, WorldObject)> {
        let (fr, fc) = state.dir.delta();
        // right-hand normal of the facing vector, rows growing downwards
        let (rr, rc) = (fc, -fr);
        let mut out = Vec::new();
        for o in &state.objects {
            let dr = o.pos.row - state.agent.row;
            let dc = o.pos.col - state.agent.col;
            let ahead = dr * fr + dc * fc;
            let lateral = dr * rr + dc * rc;
            if (0..VIEW_SIZE as i32).contains(&ahead) && lateral.abs() <= (VIEW_SIZE / 2) as i32 {
                out.push((
                    VIEW_SIZE - 1 - ahead as usize,
                    (lateral + (VIEW_SIZE / 2) as i32) as usize,
                    *o,
                ));
            }
        }
        out
    }

    #[test]
    fn view_matches_projection_oracle_on_random_states() {
        let mut rng = StdRng::seed_from_u64(99);
        for _ in 0..100 {
            let mut objects = Vec::new();
            while objects.len() < 6 {
                let p = Pos::new(rng.random_range(1..7), rng.random_range(1..7));
                if objects.iter().any(|o: &WorldObject| o.pos == p) {
                    continue;
                }
                objects.push(WorldObject {
                    colour: Colour::ALL[rng.random_range(0..6)],
                    shape: Shape::ALL[rng.random_range(0..3)],
                    pos: p,
                });
            }
            let agent = loop {
                let p = Pos::new(rng.random_range(1..7), rng.random_range(1..7));
                if objects.iter().all(|o| o.pos != p) {
                    break p;
                }
            };
            let s = state_with(objects, agent, Dir::ALL[rng.random_range(0..4)]);
            let view = symbolic_view(&s);
            let expected = oracle(&s);
            assert_eq!(view.objects().count(), expected.len());
            for (row, col, o) in expected {
                let c = view.cell(row, col);
                assert!(c.present);
                assert_eq!((c.shape, c.colour), (o.shape.index(), o.colour.index()));
            }
        }
    }
}
