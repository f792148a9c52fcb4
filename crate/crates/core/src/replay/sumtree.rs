/// Binary sum tree over a fixed number of non-negative leaf masses.
#[derive(Debug, Clone)]
pub struct SumTree {
    leaves: usize,
    nodes: Vec<f64>,
}

impl SumTree {
    pub fn new(leaves: usize) -> Self {
        let leaves = leaves.max(1).next_power_of_two();
        Self {
            leaves,
            nodes: vec![0.0; 2 * leaves],
        }
    }

    pub fn capacity(&self) -> usize {
        self.leaves
    }

    pub fn total(&self) -> f64 {
        self.nodes[1]
    }

    pub fn get(&self, leaf: usize) -> f64 {
        self.nodes[self.leaves + leaf]
    }

    pub fn set(&mut self, leaf: usize, mass: f64) {
        debug_assert!(mass >= 0.0 && mass.is_finite());
        let mut i = self.leaves + leaf;
        self.nodes[i] = mass;
        while i > 1 {
            i /= 2;
            self.nodes[i] = self.nodes[2 * i] + self.nodes[2 * i + 1];
        }
    }

    /// Leaf whose cumulative interval contains `u ∈ [0, total)`; never a
    /// zero-mass leaf while the total is positive.
    pub fn find(&self, u: f64) -> usize {
        let mut u = u.clamp(0.0, self.total());
        let mut i = 1;
        while i < self.leaves {
            let left = self.nodes[2 * i];
            if (u < left && left > 0.0) || self.nodes[2 * i + 1] == 0.0 {
                i *= 2;
            } else {
                u -= left;
                i = 2 * i + 1;
            }
        }
        i - self.leaves
    }
}
