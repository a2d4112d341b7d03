/// True once `patience` evaluations have passed without strictly beating
/// the best value so far.
pub fn early_stop_check(history: &[f64], patience: usize) -> bool {
    match best_index(history) {
        Some(best) => history.len() - 1 - best >= patience,
        None => false,
    }
}

/// Index of the first occurrence of the maximum.
fn best_index(history: &[f64]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &v) in history.iter().enumerate() {
        if best.is_none_or(|(_, b)| v > b) {
            best = Some((i, v));
        }
    }
    best.map(|(i, _)| i)
}

/// Outcome of recording one evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EvalDecision {
    pub improved: bool,
    pub stop: bool,
}

/// Incremental form of [`early_stop_check`].
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: usize,
    history: Vec<f64>,
    best: Option<(usize, f64)>,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        assert!(patience >= 1, "patience must be at least 1");
        Self {
            patience,
            history: Vec::new(),
            best: None,
        }
    }

    pub fn observe(&mut self, value: f64) -> EvalDecision {
        let i = self.history.len();
        self.history.push(value);
        let improved = self.best.is_none_or(|(_, b)| value > b);
        if improved {
            self.best = Some((i, value));
        }
        let stop = i - self.best.map_or(i, |(b, _)| b) >= self.patience;
        debug_assert_eq!(stop, early_stop_check(&self.history, self.patience));
        EvalDecision { improved, stop }
    }

    pub fn best(&self) -> Option<f64> {
        self.best.map(|(_, v)| v)
    }

    pub fn history(&self) -> &[f64] {
        &self.history
    }
}
