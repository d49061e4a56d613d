use crate::error::{Error, Result};

/// Linear warmup from 0 to `base_lr` over the first `ceil(warmup_fraction * total_steps)`
/// steps, then linear decay towards 0 over the remaining steps.
pub fn lr_schedule(step: usize, total_steps: usize, base_lr: f64, warmup_fraction: f64) -> Result<f64> {
    if total_steps == 0 || step >= total_steps {
        return Err(Error::Schedule { step, total_steps });
    }
    if !(0.0..=1.0).contains(&warmup_fraction) {
        return Err(Error::Config(format!("warmup fraction {warmup_fraction} outside [0, 1]")));
    }
    let warmup = warmup_steps(total_steps, warmup_fraction);
    if step < warmup {
        Ok(base_lr * step as f64 / warmup as f64)
    } else {
        Ok(base_lr * (total_steps - step) as f64 / (total_steps - warmup) as f64)
    }
}

pub fn warmup_steps(total_steps: usize, warmup_fraction: f64) -> usize {
    ((warmup_fraction * total_steps as f64).ceil() as usize).min(total_steps)
}
