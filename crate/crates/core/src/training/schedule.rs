/// Stepped geometric decay: `base * factor^floor(epoch / every)`.
pub fn lr_at_epoch(base: f64, epoch: usize, factor: f64, every: usize) -> f64 {
    base * factor.powi((epoch / every.max(1)) as i32)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn examples() {
        assert_eq!(lr_at_epoch(3e-5, 0, 0.95, 10), 3e-5);
        assert!((lr_at_epoch(3e-5, 10, 0.95, 10) - 2.85e-5).abs() < 1e-18);
        assert_eq!(lr_at_epoch(3e-5, 9, 0.95, 10), 3e-5);
        assert!((lr_at_epoch(3e-5, 25, 0.95, 10) - 3e-5 * 0.9025).abs() < 1e-18);
    }
}
