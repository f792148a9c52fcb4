use crate::error::{EtherError, Result};
use crate::trainer::network::argmax;

/// Double-Q n-step targets for the `valid_len` transitions of one segment.
///
/// `q_online[j]` and `q_target[j]` are the Q-values of state `s_j` for
/// `j ∈ [0, valid_len]`. The return is cut at the first done; a horizon
/// running past the segment bootstraps from `s_{valid_len}` with the
/// matching shorter discount.
pub fn n_step_targets(
    rewards: &[f32],
    dones: &[bool],
    valid_len: usize,
    q_online: &[Vec<f32>],
    q_target: &[Vec<f32>],
    gamma: f64,
    n: usize,
) -> Result<Vec<f64>> {
    if rewards.len() < valid_len || dones.len() < valid_len || q_online.len() <= valid_len || q_target.len() <= valid_len {
        return Err(EtherError::shape(
            format!("{valid_len} rewards and dones, {} Q rows", valid_len + 1),
            (rewards.len(), dones.len(), q_online.len(), q_target.len()),
        ));
    }
    if n == 0 {
        return Err(EtherError::Config("n-step return needs n ≥ 1".into()));
    }
    let mut out = Vec::with_capacity(valid_len);
    for t in 0..valid_len {
        let mut y = 0.0;
        let mut discount = 1.0;
        let mut k = 0;
        let mut terminated = false;
        while k < n && t + k < valid_len {
            y += discount * rewards[t + k] as f64;
            discount *= gamma;
            k += 1;
            if dones[t + k - 1] {
                terminated = true;
                break;
            }
        }
        if !terminated {
            let j = t + k;
            let a = argmax(&q_online[j]);
            y += discount * q_target[j][a] as f64;
        }
        out.push(y);
    }
    Ok(out)
}
