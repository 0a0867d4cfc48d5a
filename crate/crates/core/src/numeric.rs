//! Pairwise (tree) accumulation. Rounding error grows as O(log n) instead of O(n).

const BLOCK: usize = 64;

/// Sums `term(i)` for `i` in `0..n` with pairwise accumulation.
#[inline]
pub fn pairwise_sum_by<F: Fn(usize) -> f64>(n: usize, term: F) -> f64 {
    sum_range(0, n, &term)
}

fn sum_range<F: Fn(usize) -> f64>(lo: usize, hi: usize, term: &F) -> f64 {
    let len = hi - lo;
    if len <= BLOCK {
        let mut acc = 0.0;
        for i in lo..hi {
            acc += term(i);
        }
        return acc;
    }
    let mid = lo + len / 2;
    sum_range(lo, mid, term) + sum_range(mid, hi, term)
}

pub fn pairwise_sum(values: &[f64]) -> f64 {
    pairwise_sum_by(values.len(), |i| values[i])
}

pub fn median(values: &[f64]) -> f64 {
    assert!(!values.is_empty(), "median of empty slice");
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let mid = v.len() / 2;
    if v.len() % 2 == 1 {
        v[mid]
    } else {
        0.5 * (v[mid - 1] + v[mid])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matches_naive_on_small_input() {
        let v: Vec<f64> = (1..=10).map(f64::from).collect();
        assert_eq!(pairwise_sum(&v), 55.0);
    }

    #[test]
    fn beats_naive_accumulation_on_long_input() {
        let n = 1_000_000;
        let exact = 0.1 * n as f64;
        let naive: f64 = (0..n).map(|_| 0.1).sum();
        let tree = pairwise_sum_by(n, |_| 0.1);
        assert!((tree - exact).abs() <= (naive - exact).abs());
        assert!((tree - exact).abs() < 1e-8);
    }

    #[test]
    fn median_even_and_odd() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }
}
