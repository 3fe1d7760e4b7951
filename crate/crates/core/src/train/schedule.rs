//! Warmup-cosine learning-rate schedule.

use super::TrainError;

/// Learning rate at `step`: a linear ramp from 0 to `lr_max` over
/// `warmup_steps`, then cosine decay to 0 at `total_steps`.
///
/// The two pieces agree at the junction (`step == warmup_steps` evaluates to
/// exactly `lr_max` on both) and the cosine piece is non-increasing.
pub fn lr_schedule(
    step: usize,
    total_steps: usize,
    warmup_steps: usize,
    lr_max: f64,
) -> Result<f64, TrainError> {
    if !(lr_max.is_finite() && lr_max > 0.0) {
        return Err(TrainError::BadConfig {
            detail: format!("lr_max {lr_max} must be finite and positive"),
        });
    }
    if warmup_steps == 0 || warmup_steps >= total_steps {
        return Err(TrainError::BadConfig {
            detail: format!("warmup steps {warmup_steps} outside (0, total {total_steps})"),
        });
    }
    if step >= total_steps {
        return Err(TrainError::BadConfig {
            detail: format!("step {step} outside [0, total {total_steps})"),
        });
    }
    if step <= warmup_steps {
        return Ok(lr_max * step as f64 / warmup_steps as f64);
    }
    let progress = (step - warmup_steps) as f64 / (total_steps - warmup_steps) as f64;
    Ok(lr_max * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos()))
}

#[cfg(test)]
mod tests {
    use super::*;

    const LR: f64 = 1e-4;

    #[test]
    fn anchors_are_exact() {
        // Ramp start, warmup end, and cosine midpoint hit their closed-form
        // values to 1e-12.
        assert_eq!(lr_schedule(0, 1000, 100, LR).unwrap(), 0.0);
        assert!((lr_schedule(100, 1000, 100, LR).unwrap() - LR).abs() < 1e-12);
        // Midpoint of the cosine phase: step = (warmup + total)/2.
        let mid = lr_schedule(550, 1000, 100, LR).unwrap();
        assert!((mid - LR / 2.0).abs() < 1e-12, "midpoint {mid}");
    }

    #[test]
    fn continuous_at_junction_and_nonincreasing_after() {
        let before = lr_schedule(99, 1000, 100, LR).unwrap();
        let at = lr_schedule(100, 1000, 100, LR).unwrap();
        let after = lr_schedule(101, 1000, 100, LR).unwrap();
        assert!(before < at);
        assert!(after <= at);
        assert!(at - after < LR * 0.01, "jump at junction");
        let mut prev = at;
        for step in 101..1000 {
            let lr = lr_schedule(step, 1000, 100, LR).unwrap();
            assert!(lr <= prev + 1e-18, "increase at step {step}");
            prev = lr;
        }
        assert!(prev < LR * 1e-4, "did not decay toward zero");
    }

    #[test]
    fn ramp_is_linear() {
        for step in 0..=100 {
            let lr = lr_schedule(step, 1000, 100, LR).unwrap();
            assert!((lr - LR * step as f64 / 100.0).abs() < 1e-18);
        }
    }

    #[test]
    fn bounds_are_enforced() {
        assert!(lr_schedule(1000, 1000, 100, LR).is_err());
        assert!(lr_schedule(0, 1000, 0, LR).is_err());
        assert!(lr_schedule(0, 100, 100, LR).is_err());
        assert!(lr_schedule(0, 100, 10, 0.0).is_err());
        assert!(lr_schedule(0, 100, 10, f64::NAN).is_err());
    }
}
