/// Stops when the monitored loss has not improved for `patience`
/// consecutive epochs.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: usize,
    best: f64,
    best_epoch: Option<usize>,
    stale: usize,
}

/// What to do after recording an epoch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Improved,
    Continue,
    Stop,
}

impl EarlyStopping {
    /// `patience == 0` disables stopping.
    pub fn new(patience: usize) -> Self {
        EarlyStopping {
            patience,
            best: f64::INFINITY,
            best_epoch: None,
            stale: 0,
        }
    }

    /// Records the loss of 1-based `epoch`.
    pub fn observe(&mut self, epoch: usize, loss: f64) -> Verdict {
        if loss < self.best {
            self.best = loss;
            self.best_epoch = Some(epoch);
            self.stale = 0;
            return Verdict::Improved;
        }
        self.stale += 1;
        if self.patience > 0 && self.stale >= self.patience {
            Verdict::Stop
        } else {
            Verdict::Continue
        }
    }

    pub fn best(&self) -> f64 {
        self.best
    }

    pub fn best_epoch(&self) -> Option<usize> {
        self.best_epoch
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn patience_three_trace() {
        let mut es = EarlyStopping::new(3);
        let trace = [3.0, 2.0, 2.1, 2.2, 2.3, 1.0];
        let mut stopped = None;
        for (i, &l) in trace.iter().enumerate() {
            if es.observe(i + 1, l) == Verdict::Stop {
                stopped = Some(i + 1);
                break;
            }
        }
        assert_eq!(stopped, Some(5));
        assert_eq!(es.best_epoch(), Some(2));
        assert_eq!(es.best(), 2.0);
    }

    #[test]
    fn equal_loss_is_not_improvement() {
        let mut es = EarlyStopping::new(1);
        assert_eq!(es.observe(1, 1.0), Verdict::Improved);
        assert_eq!(es.observe(2, 1.0), Verdict::Stop);
    }

    #[test]
    fn zero_patience_never_stops() {
        let mut es = EarlyStopping::new(0);
        for e in 1..20 {
            assert_ne!(es.observe(e, e as f64), Verdict::Stop);
        }
    }
}
