//! Small order-statistic helpers shared by the scheduler, data layer and
//! simulator.

/// Nearest-rank percentile (`q` in `[0, 1]`). `None` on empty input.
pub fn percentile(values: &[f64], q: f64) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let rank = (q.clamp(0.0, 1.0) * v.len() as f64).ceil() as usize;
    Some(v[rank.saturating_sub(1).min(v.len() - 1)])
}

pub fn p95(values: &[f64]) -> Option<f64> {
    percentile(values, 0.95)
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    Some(if v.len() % 2 == 1 {
        v[mid]
    } else {
        (v[mid - 1] + v[mid]) / 2.0
    })
}

pub fn mean(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        None
    } else {
        Some(values.iter().sum::<f64>() / values.len() as f64)
    }
}

/// Exponentially weighted moving average; the first observation initializes.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Ewma {
    value: Option<f64>,
}

impl Ewma {
    pub fn new() -> Self {
        Self { value: None }
    }

    pub fn observe(&mut self, x: f64, alpha: f64) -> f64 {
        let next = match self.value {
            None => x,
            Some(old) => alpha * x + (1.0 - alpha) * old,
        };
        self.value = Some(next);
        next
    }

    pub fn get(&self) -> Option<f64> {
        self.value
    }
}

/// Fixed-capacity window of recent observations.
#[derive(Debug, Clone)]
pub struct Window {
    cap: usize,
    values: std::collections::VecDeque<f64>,
}

impl Window {
    pub fn new(cap: usize) -> Self {
        Self {
            cap: cap.max(1),
            values: std::collections::VecDeque::with_capacity(cap.max(1)),
        }
    }

    pub fn push(&mut self, x: f64) {
        if self.values.len() == self.cap {
            self.values.pop_front();
        }
        self.values.push_back(x);
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.values.iter().copied().collect()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn clear(&mut self) {
        self.values.clear();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nearest_rank() {
        let v: Vec<f64> = (1..=100).map(f64::from).collect();
        assert_eq!(percentile(&v, 0.95), Some(95.0));
        assert_eq!(percentile(&v, 0.0), Some(1.0));
        assert_eq!(percentile(&v, 1.0), Some(100.0));
        assert_eq!(percentile(&[], 0.5), None);
    }

    #[test]
    fn median_even_odd() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), Some(2.5));
    }

    #[test]
    fn ewma_formula_and_convergence() {
        let mut e = Ewma::new();
        assert_eq!(e.observe(100.0, 0.5), 100.0);
        assert_eq!(e.observe(200.0, 0.5), 150.0);

        let mut e = Ewma::new();
        e.observe(0.0, 0.5);
        for _ in 0..10 {
            e.observe(40.0, 0.5);
        }
        assert!((e.get().unwrap() - 40.0).abs() <= 0.4);
    }

    #[test]
    fn window_evicts_oldest() {
        let mut w = Window::new(2);
        w.push(1.0);
        w.push(2.0);
        w.push(3.0);
        assert_eq!(w.to_vec(), vec![2.0, 3.0]);
    }
}
