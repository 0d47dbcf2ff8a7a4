/// Uniform frame sampling that always keeps the first and last frame.
///
/// `index_i = floor(i * (total - 1) / (m - 1))` for `m > 1`, and the middle
/// frame for `m == 1`. Indices are nondecreasing and repeat when
/// `total < m`.
///
/// # Panics
///
/// When `total` or `m` is zero.
pub fn sample_frame_indices(total: usize, m: usize) -> Vec<usize> {
    assert!(total >= 1 && m >= 1, "sample_frame_indices needs total >= 1 and m >= 1");
    if m == 1 {
        return vec![(total - 1) / 2];
    }
    (0..m).map(|i| i * (total - 1) / (m - 1)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn identity_when_equal() {
        assert_eq!(sample_frame_indices(50, 50), (0..50).collect::<Vec<_>>());
    }

    #[test]
    fn formula_examples() {
        assert_eq!(sample_frame_indices(5, 3), [0, 2, 4]);
        assert_eq!(sample_frame_indices(2, 4), [0, 0, 0, 1]);
        assert_eq!(sample_frame_indices(7, 1), [3]);
        assert_eq!(sample_frame_indices(1, 3), [0, 0, 0]);
    }

    proptest! {
        #[test]
        fn sorted_in_range(total in 1usize..500, m in 1usize..200) {
            let idx = sample_frame_indices(total, m);
            prop_assert_eq!(idx.len(), m);
            prop_assert!(idx.windows(2).all(|w| w[0] <= w[1]));
            prop_assert!(idx.iter().all(|&i| i < total));
            if m > 1 {
                prop_assert_eq!(idx[0], 0);
                prop_assert_eq!(idx[m - 1], total - 1);
            }
        }
    }
}
