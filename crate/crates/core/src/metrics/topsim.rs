/// Positions at which two equal-length tuples differ.
pub fn hamming<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    a.iter().zip(b).filter(|(x, y)| x != y).count() + a.len().abs_diff(b.len())
}

/// Edit distance with unit insert, delete and substitute costs.
pub fn levenshtein<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, x) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(x != y);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Ranks with ties averaged, 1-based.
fn ranks(values: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut out = vec![0.0; values.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && values[idx[j + 1]] == values[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = avg;
        }
        i = j + 1;
    }
    out
}

/// Spearman rank correlation; `None` when either side has no variance.
pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Spearman correlation between pairwise Hamming distances of meanings and
/// pairwise edit distances of messages. `None` below three pairs or when
/// either distance list is constant.
pub fn topographic_similarity<M: PartialEq, T: PartialEq>(meanings: &[Vec<M>], messages: &[Vec<T>]) -> Option<f64> {
    if meanings.len() != messages.len() {
        return None;
    }
    let n = meanings.len();
    let mut dm = Vec::with_capacity(n * n.saturating_sub(1) / 2);
    let mut ds = Vec::with_capacity(dm.capacity());
    for i in 0..n {
        for j in i + 1..n {
            dm.push(hamming(&meanings[i], &meanings[j]) as f64);
            ds.push(levenshtein(&messages[i], &messages[j]) as f64);
        }
    }
    if dm.len() < 3 {
        return None;
    }
    spearman(&dm, &ds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    #[test]
    fn edit_distance_cases() {
        assert_eq!(levenshtein(b"kitten", b"sitting"), 3);
        assert_eq!(levenshtein::<u8>(b"", b"abc"), 3);
        assert_eq!(levenshtein(b"abc", b"abc"), 0);
    }

    #[test]
    fn identity_mapping_is_perfect() {
        let meanings: Vec<Vec<u32>> = (0..3).flat_map(|a| (0..3).map(move |b| vec![a, b])).collect();
        let rho = topographic_similarity(&meanings, &meanings).unwrap();
        assert!((rho - 1.0).abs() < 1e-12);
    }

    #[test]
    fn reversed_distances_give_minus_one() {
        let x: Vec<f64> = (0..10).map(f64::from).collect();
        let y: Vec<f64> = x.iter().rev().cloned().collect();
        assert!((spearman(&x, &y).unwrap() + 1.0).abs() < 1e-12);
    }

    #[test]
    fn constant_messages_are_undefined() {
        let meanings = vec![vec![0], vec![1], vec![2], vec![3]];
        let messages = vec![vec![7u32]; 4];
        assert!(topographic_similarity(&meanings, &messages).is_none());
        assert!(topographic_similarity(&meanings[..2], &messages[..2]).is_none());
    }

    #[test]
    fn random_messages_sit_in_the_null_band() {
        // 142 items ⇒ 10011 pairs; |ρ| under the null has sd ≈ 0.01
        let mut rng = StdRng::seed_from_u64(11);
        let meanings: Vec<Vec<u8>> = (0..142).map(|_| (0..4).map(|_| rng.random_range(0..4)).collect()).collect();
        let messages: Vec<Vec<u8>> = (0..142).map(|_| (0..5).map(|_| rng.random_range(0..8)).collect()).collect();
        let rho = topographic_similarity(&meanings, &messages).unwrap();
        assert!(rho.abs() < 0.05, "{rho}");
    }

    proptest! {
        #[test]
        fn spearman_is_bounded_and_symmetric(x in proptest::collection::vec(-5.0f64..5.0, 3..30), y in proptest::collection::vec(-5.0f64..5.0, 3..30)) {
            let n = x.len().min(y.len());
            if let Some(r) = spearman(&x[..n], &y[..n]) {
                prop_assert!((-1.0..=1.0).contains(&r));
                prop_assert!((r - spearman(&y[..n], &x[..n]).unwrap()).abs() < 1e-12);
            }
        }

        #[test]
        fn edit_distance_is_a_metric(a in proptest::collection::vec(0u8..3, 0..8), b in proptest::collection::vec(0u8..3, 0..8), c in proptest::collection::vec(0u8..3, 0..8)) {
            prop_assert_eq!(levenshtein(&a, &b), levenshtein(&b, &a));
            prop_assert!(levenshtein(&a, &c) <= levenshtein(&a, &b) + levenshtein(&b, &c));
            prop_assert!(levenshtein(&a, &b) <= a.len().max(b.len()));
        }
    }
}
