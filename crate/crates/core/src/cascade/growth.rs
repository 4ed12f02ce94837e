use crate::scalar::Scalar;

/// Why cascade growth stopped after a level.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopReason {
    MaxLayers,
    /// `patience` consecutive levels without improving on the best measure.
    Patience,
}

impl StopReason {
    pub fn name(self) -> &'static str {
        match self {
            StopReason::MaxLayers => "max_layers",
            StopReason::Patience => "patience",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "max_layers" => Some(StopReason::MaxLayers),
            "patience" => Some(StopReason::Patience),
            _ => None,
        }
    }
}

/// Tracks the per-level training measure and decides when to stop growing.
///
/// Improvement is strict: a level only becomes the best when its measure exceeds every
/// earlier one, so the best level is the first argmax of the history.
#[derive(Clone, Debug)]
pub struct GrowthMonitor<F> {
    max_layers: usize,
    patience: usize,
    history: Vec<F>,
    best: usize,
}

impl<F: Scalar> GrowthMonitor<F> {
    pub fn new(max_layers: usize, patience: usize) -> Self {
        assert!(max_layers >= 1, "max_layers must be at least 1");
        assert!(patience >= 1, "patience must be at least 1");
        Self {
            max_layers,
            patience,
            history: Vec::new(),
            best: 0,
        }
    }

    /// Records the measure of the level just built and says whether to stop.
    pub fn observe(&mut self, measure: F) -> Option<StopReason> {
        self.history.push(measure);
        let t = self.history.len() - 1;
        if t == 0 || measure > self.history[self.best] {
            self.best = t;
        }
        if self.history.len() >= self.max_layers {
            Some(StopReason::MaxLayers)
        } else if t - self.best >= self.patience {
            Some(StopReason::Patience)
        } else {
            None
        }
    }

    /// 1-based index of the best level so far.
    pub fn best_layer(&self) -> usize {
        self.best + 1
    }

    pub fn history(&self) -> &[F] {
        &self.history
    }
}
