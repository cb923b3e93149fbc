/// Constant learning rate, then a linear ramp to zero.
///
/// `lr(t) = base` for `t <= decay_start`, falling linearly to `0` at `total`
/// and staying there.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Schedule {
    pub base_lr: f64,
    pub decay_start: usize,
    pub total: usize,
}

pub const BASE_LR: f64 = 2e-4;

impl Schedule {
    pub fn new(base_lr: f64, decay_start: usize, total: usize) -> Self {
        Schedule { base_lr, decay_start: decay_start.min(total), total }
    }

    pub fn lr_at(&self, t: usize) -> f64 {
        if t >= self.total {
            0.0
        } else if t <= self.decay_start {
            self.base_lr
        } else {
            self.base_lr * (self.total - t) as f64 / (self.total - self.decay_start) as f64
        }
    }
}
