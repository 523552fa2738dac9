/// Learning rate for the 0-based `epoch` index.
///
/// The rate stays at `base` for the first `warmup` epochs and is divided by 5
/// at every decay point `p1 = warmup`, `p(k+1) = p(k) + warmup * 2^k`, i.e.
/// 50, 150, 350, 750, ... for a warmup of 50. A warmup of zero keeps the
/// rate constant.
pub fn lr_at_epoch(base: f64, warmup: usize, epoch: usize) -> f64 {
    if warmup == 0 {
        return base;
    }
    let mut decays = 0i32;
    let mut point = warmup;
    let mut gap = warmup;
    while point <= epoch {
        decays += 1;
        gap = gap.saturating_mul(2);
        point = point.saturating_add(gap);
    }
    base / 5f64.powi(decays)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_table() {
        let cases = [
            (0, 1e-3),
            (49, 1e-3),
            (50, 2e-4),
            (149, 2e-4),
            (150, 4e-5),
            (349, 4e-5),
            (350, 8e-6),
            (500, 8e-6),
        ];
        for (epoch, lr) in cases {
            assert_eq!(lr_at_epoch(1e-3, 50, epoch), lr, "epoch {epoch}");
        }
        assert_eq!(lr_at_epoch(1e-3, 50, 750), 1e-3 / 625.0);
    }

    #[test]
    fn zero_warmup_is_constant() {
        for e in [1, 10, 1000] {
            assert_eq!(lr_at_epoch(0.01, 0, e), 0.01);
        }
    }
}
