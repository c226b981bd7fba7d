/// Model-selection bookkeeping on validation BLEU.
#[derive(Clone, Debug, PartialEq)]
pub struct EarlyStopState {
    pub best_bleu: f64,
    pub best_epoch: usize,
    pub epochs_since_improvement: usize,
    pub patience: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopDecision {
    Improved,
    Continue,
    Stop,
}

impl EarlyStopState {
    pub fn new(patience: usize) -> Self {
        Self {
            best_bleu: f64::NEG_INFINITY,
            best_epoch: 0,
            epochs_since_improvement: 0,
            patience,
        }
    }

    /// Records the score of `epoch` (1-based). Training halts once
    /// `patience` consecutive epochs pass without a strict improvement,
    /// i.e. at epoch `best_epoch + patience`.
    pub fn observe(&mut self, epoch: usize, bleu: f64) -> StopDecision {
        if bleu > self.best_bleu {
            self.best_bleu = bleu;
            self.best_epoch = epoch;
            self.epochs_since_improvement = 0;
            return StopDecision::Improved;
        }
        self.epochs_since_improvement = epoch - self.best_epoch;
        if self.epochs_since_improvement >= self.patience {
            StopDecision::Stop
        } else {
            StopDecision::Continue
        }
    }
}
