/// Multiplies the learning rate by `factor` whenever `patience` consecutive
/// epochs fail to strictly beat the best monitored value. The wait counter
/// restarts after every reduction.
#[derive(Debug, Clone, PartialEq)]
pub struct PlateauScheduler {
    lr: f64,
    factor: f64,
    patience: usize,
    best: Option<f64>,
    wait: usize,
}

impl PlateauScheduler {
    pub fn new(initial_lr: f64, factor: f64, patience: usize) -> Self {
        Self {
            lr: initial_lr,
            factor,
            patience,
            best: None,
            wait: 0,
        }
    }

    pub fn learning_rate(&self) -> f64 {
        self.lr
    }

    /// Feeds one epoch's monitored value; returns the rate for the next epoch.
    pub fn observe(&mut self, value: f64) -> f64 {
        match self.best {
            Some(best) if value <= best => {
                self.wait += 1;
                if self.wait >= self.patience {
                    self.lr *= self.factor;
                    self.wait = 0;
                }
            }
            _ => {
                self.best = Some(value);
                self.wait = 0;
            }
        }
        self.lr
    }
}

/// Learning rate after replaying `history` through a [`PlateauScheduler`].
pub fn reduce_lr_on_plateau(history: &[f64], initial_lr: f64, factor: f64, patience: usize) -> f64 {
    let mut s = PlateauScheduler::new(initial_lr, factor, patience);
    for &v in history {
        s.observe(v);
    }
    s.learning_rate()
}
