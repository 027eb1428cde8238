/// Step decay: `lr0 * 0.5^floor(step / period)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LrSchedule {
    pub lr0: f64,
    pub halving_period: u64,
}

impl LrSchedule {
    pub fn new(lr0: f64, halving_period: u64) -> Self {
        Self {
            lr0,
            halving_period,
        }
    }

    pub fn lr(&self, step: u64) -> f64 {
        let halvings = step / self.halving_period.max(1);
        self.lr0 * 0.5f64.powi(halvings.min(i32::MAX as u64) as i32)
    }
}
