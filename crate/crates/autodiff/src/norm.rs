//! Running statistics for batch normalization.

/// Per-channel batch moments observed during one train-mode pass.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchMoments {
    pub mean: Vec<f64>,
    /// Unbiased (n-1) variance, which is what the running estimate tracks.
    pub var_unbiased: Vec<f64>,
}

/// Exponential moving averages used by batch norm in eval mode.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub momentum: f64,
    /// Number of train-mode updates folded in so far.
    pub updates: u64,
}

impl RunningStats {
    pub const DEFAULT_MOMENTUM: f64 = 0.1;

    /// Zero mean, unit variance.
    pub fn new(channels: usize) -> Self {
        Self {
            mean: vec![0.0; channels],
            var: vec![1.0; channels],
            momentum: Self::DEFAULT_MOMENTUM,
            updates: 0,
        }
    }

    pub fn channels(&self) -> usize {
        self.mean.len()
    }

    pub fn update(&mut self, moments: &BatchMoments) {
        let m = self.momentum;
        for (r, &b) in self.mean.iter_mut().zip(&moments.mean) {
            *r = (1.0 - m) * *r + m * b;
        }
        for (r, &b) in self.var.iter_mut().zip(&moments.var_unbiased) {
            *r = (1.0 - m) * *r + m * b;
        }
        self.updates += 1;
    }
}

/// How a batch-norm node normalizes its input.
#[derive(Debug, Clone, Copy)]
pub enum BatchNormMode<'a> {
    /// Normalize with the moments of the current batch.
    Train,
    /// Normalize with stored running statistics; `None` means the layer was
    /// never trained nor given statistics.
    Eval(Option<&'a RunningStats>),
}
