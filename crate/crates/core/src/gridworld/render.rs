use super::view::{view_cell_to_world, VIEW_SIZE};
use super::{Colour, Shape, WorldState};

pub const FRAME_SIZE: usize = 64;
pub const FRAME_CHANNELS: usize = 3;
pub const FRAME_LEN: usize = FRAME_CHANNELS * FRAME_SIZE * FRAME_SIZE;

const WALL: [u8; 3] = [60, 60, 60];
const AGENT: [u8; 3] = [255, 255, 255];

fn palette(c: Colour) -> [u8; 3] {
    match c {
        Colour::Red => [255, 0, 0],
        Colour::Green => [0, 255, 0],
        Colour::Blue => [0, 0, 255],
        Colour::Purple => [112, 39, 195],
        Colour::Yellow => [255, 255, 0],
        Colour::Grey => [100, 100, 100],
    }
}

/// Sprite coverage at fractional cell coordinates `(y, x)` in `[0, 1)`.
fn covers(shape: Shape, y: f32, x: f32) -> bool {
    match shape {
        Shape::Ball => (y - 0.5).powi(2) + (x - 0.5).powi(2) <= 0.31 * 0.31,
        Shape::Key => {
            let head = {
                let r2 = (y - 0.27).powi(2) + (x - 0.5).powi(2);
                (0.09 * 0.09..=0.2 * 0.2).contains(&r2)
            };
            let shaft = (0.44..=0.56).contains(&x) && (0.45..=0.9).contains(&y);
            let teeth = (0.56..=0.74).contains(&x) && ((0.62..=0.7).contains(&y) || (0.78..=0.86).contains(&y));
            head || shaft || teeth
        }
        Shape::Box => {
            let outer = (0.12..=0.88).contains(&y) && (0.12..=0.88).contains(&x);
            let inner = (0.25..=0.75).contains(&y) && (0.25..=0.75).contains(&x);
            outer && !inner
        }
    }
}

/// Render the egocentric 7×7 crop as a `(3, 64, 64)` channel-major frame.
///
/// Each output pixel samples the view cell it falls into, which is the
/// nearest-neighbour resize of a cell raster to 64×64.
pub fn render_frame(state: &WorldState) -> Vec<u8> {
    let mut out = vec![0u8; FRAME_LEN];
    let plane = FRAME_SIZE * FRAME_SIZE;
    let scale = VIEW_SIZE as f32 / FRAME_SIZE as f32;
    for py in 0..FRAME_SIZE {
        let fy = (py as f32 + 0.5) * scale;
        let row = fy as usize;
        let y = fy - row as f32;
        for px in 0..FRAME_SIZE {
            let fx = (px as f32 + 0.5) * scale;
            let col = fx as usize;
            let x = fx - col as f32;
            let p = view_cell_to_world(state, row, col);
            let rgb = if row == VIEW_SIZE - 1 && col == VIEW_SIZE / 2 {
                // the agent, drawn as an upward triangle
                ((0.2..=0.85).contains(&y) && (x - 0.5).abs() <= (y - 0.2) * 0.5).then_some(AGENT)
            } else if !state.is_interior(p) {
                (p.row >= 0 && p.col >= 0 && p.row < state.size && p.col < state.size).then_some(WALL)
            } else {
                state
                    .object_at(p)
                    .and_then(|o| covers(o.shape, y, x).then(|| palette(o.colour)))
            };
            if let Some(rgb) = rgb {
                for (ch, v) in rgb.iter().enumerate() {
                    out[ch * plane + py * FRAME_SIZE + px] = *v;
                }
            }
        }
    }
    out
}
