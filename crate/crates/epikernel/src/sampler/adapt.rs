//! Robbins-Monro step-size adaptation for scalar random-walk proposals.

/// Per-parameter proposal scale, tuned toward a target acceptance rate during
/// the adaptation window and frozen afterwards.
#[derive(Debug, Clone)]
pub struct ScalarAdaptor {
    log_step: f64,
    target: f64,
    adapt_count: u64,
    pub proposals: u64,
    pub accepts: u64,
    frozen: bool,
    step_at_freeze: f64,
}

impl ScalarAdaptor {
    pub fn new(initial_step: f64, target: f64) -> Self {
        Self {
            log_step: initial_step.ln(),
            target,
            adapt_count: 0,
            proposals: 0,
            accepts: 0,
            frozen: false,
            step_at_freeze: f64::NAN,
        }
    }

    pub fn step(&self) -> f64 {
        self.log_step.exp()
    }

    /// Record one proposal. `alpha` is the computed acceptance probability;
    /// the scale moves only while `adapting` and before the freeze.
    pub fn observe(&mut self, alpha: f64, accepted: bool, adapting: bool) {
        self.proposals += 1;
        if accepted {
            self.accepts += 1;
        }
        if adapting && !self.frozen {
            self.adapt_count += 1;
            let gain = 1.0 / (self.adapt_count as f64).powf(0.7);
            self.log_step += gain * (alpha - self.target);
            self.log_step = self.log_step.clamp(-12.0, 6.0);
        }
    }

    /// Freeze the scale; later `observe` calls only keep acceptance counts.
    pub fn freeze(&mut self) {
        if !self.frozen {
            self.frozen = true;
            self.step_at_freeze = self.step();
        }
    }

    pub fn step_at_freeze(&self) -> f64 {
        self.step_at_freeze
    }

    pub fn acceptance_rate(&self) -> f64 {
        if self.proposals == 0 {
            f64::NAN
        } else {
            self.accepts as f64 / self.proposals as f64
        }
    }
}
