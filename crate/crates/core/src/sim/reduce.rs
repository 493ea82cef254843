//! Analytic map/shuffle/reduce makespan model.
//!
//! `T(R) = startup + ceil(n_map / slots) * map + shuffle * R
//!        + ceil(reduce_work / R) * reduce`
//!
//! The shuffle term grows linearly with the reducer count (each reducer
//! pulls from every map output), while the reduce term shrinks as work
//! units spread over more reducers. This is a model, not a measurement.

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReduceModel {
    pub startup_ms: f64,
    pub avg_map_ms: f64,
    /// Time to reduce one work unit.
    pub avg_reduce_ms: f64,
    /// Fan-in cost per reducer.
    pub avg_shuffle_ms: f64,
    /// Independent reduce work units (key partitions).
    pub reduce_work: u32,
}

impl ReduceModel {
    pub fn makespan(&self, n_map_tasks: u64, slots: u64, reducers: u32) -> f64 {
        let slots = slots.max(1);
        let r = reducers.max(1);
        let waves = n_map_tasks.div_ceil(slots) as f64;
        let reduce_waves = self.reduce_work.max(1).div_ceil(r) as f64;
        self.startup_ms + waves * self.avg_map_ms + self.avg_shuffle_ms * f64::from(r) + reduce_waves * self.avg_reduce_ms
    }
}

/// Predicted makespan for `R = 1..=max_reducers`.
pub fn reduce_stage_model(model: &ReduceModel, n_map_tasks: u64, slots: u64, max_reducers: u32) -> Vec<(u32, f64)> {
    (1..=max_reducers.max(1))
        .map(|r| (r, model.makespan(n_map_tasks, slots, r)))
        .collect()
}
