use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::Arc;

use super::DataError;
use crate::stats::Ewma;

/// Floor on the execution time in the depth formula.
pub const EPSILON_MS: f64 = 0.1;

pub const DEFAULT_CACHE_BYTES: u64 = 256 * 1024 * 1024;

/// `K = max(1, ceil(fetch / max(exec, EPSILON_MS)) + margin)`.
pub fn compute_prefetch_depth(avg_fetch_ms: f64, avg_exec_ms: f64, margin: usize) -> usize {
    let ratio = (avg_fetch_ms.max(0.0) / avg_exec_ms.max(EPSILON_MS)).ceil() as usize;
    (ratio + margin).max(1)
}

/// Tracks fetch and execution averages and derives the prefetch depth.
#[derive(Debug, Clone, PartialEq)]
pub struct PrefetchController {
    pub avg_fetch_ms: Ewma,
    pub avg_exec_ms: Ewma,
    pub margin: usize,
    pub alpha: f64,
}

impl PrefetchController {
    pub fn new(margin: usize, alpha: f64) -> Self {
        Self {
            avg_fetch_ms: Ewma::new(),
            avg_exec_ms: Ewma::new(),
            margin,
            alpha,
        }
    }

    pub fn observe(&mut self, fetch_ms: f64, exec_ms: f64) {
        self.avg_fetch_ms.observe(fetch_ms, self.alpha);
        self.avg_exec_ms.observe(exec_ms, self.alpha);
    }

    /// Current K. Before any observation this is `max(1, margin)`.
    pub fn depth(&self) -> usize {
        compute_prefetch_depth(
            self.avg_fetch_ms.get().unwrap_or(0.0),
            self.avg_exec_ms.get().unwrap_or(EPSILON_MS),
            self.margin,
        )
    }
}

/// Worker-local sample cache, LRU by bytes.
#[derive(Debug, Clone)]
pub struct LocalCache {
    capacity_bytes: u64,
    used: u64,
    tick: u64,
    entries: HashMap<u64, (Arc<Vec<u8>>, u64)>,
    order: BTreeMap<u64, u64>,
}

impl LocalCache {
    pub fn new(capacity_bytes: u64) -> Self {
        Self {
            capacity_bytes,
            used: 0,
            tick: 0,
            entries: HashMap::new(),
            order: BTreeMap::new(),
        }
    }

    pub fn contains(&self, id: u64) -> bool {
        self.entries.contains_key(&id)
    }

    pub fn get(&mut self, id: u64) -> Option<Arc<Vec<u8>>> {
        let (payload, old) = self.entries.get(&id).cloned()?;
        self.order.remove(&old);
        self.tick += 1;
        self.order.insert(self.tick, id);
        self.entries.insert(id, (payload.clone(), self.tick));
        Some(payload)
    }

    /// Inserts and evicts least-recently-used entries until under capacity.
    /// A payload larger than the whole cache is still kept, alone.
    pub fn insert(&mut self, id: u64, payload: Arc<Vec<u8>>) {
        if let Some((p, t)) = self.entries.remove(&id) {
            self.used -= p.len() as u64;
            self.order.remove(&t);
        }
        self.tick += 1;
        self.used += payload.len() as u64;
        self.entries.insert(id, (payload, self.tick));
        self.order.insert(self.tick, id);
        while self.used > self.capacity_bytes && self.entries.len() > 1 {
            let (&t, &victim) = self.order.iter().next().unwrap();
            if victim == id {
                break;
            }
            self.order.remove(&t);
            if let Some((p, _)) = self.entries.remove(&victim) {
                self.used -= p.len() as u64;
            }
        }
    }

    pub fn used_bytes(&self) -> u64 {
        self.used
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Makes every sample of the next `k` queued tasks resident, fetching only
/// what is missing. Returns the sample ids fetched by this call.
pub fn prefetch_for_queue<F>(
    queued_tasks: &[Vec<u64>],
    k: usize,
    cache: &mut LocalCache,
    mut fetch_one: F,
) -> Result<BTreeSet<u64>, DataError>
where
    F: FnMut(u64) -> Result<Arc<Vec<u8>>, DataError>,
{
    let mut fetched = BTreeSet::new();
    for task in queued_tasks.iter().take(k) {
        for &s in task {
            if cache.contains(s) {
                continue;
            }
            let payload = fetch_one(s)?;
            cache.insert(s, payload);
            fetched.insert(s);
        }
    }
    Ok(fetched)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn depth_formula() {
        assert_eq!(compute_prefetch_depth(2.0, 1.0, 1), 3);
        assert_eq!(compute_prefetch_depth(0.0, 1.0, 0), 1);
        assert_eq!(compute_prefetch_depth(10.0, 1.0, 1), 11);
        assert_eq!(compute_prefetch_depth(1.0, 0.0, 0), 10);
    }

    #[test]
    fn cache_evicts_lru_by_bytes() {
        let mut c = LocalCache::new(100);
        c.insert(1, Arc::new(vec![0; 40]));
        c.insert(2, Arc::new(vec![0; 40]));
        c.get(1);
        c.insert(3, Arc::new(vec![0; 40]));
        assert!(c.contains(1) && c.contains(3) && !c.contains(2));
        assert_eq!(c.used_bytes(), 80);
        c.insert(4, Arc::new(vec![0; 500]));
        assert_eq!(c.len(), 1);
    }

    #[test]
    fn prefetch_clamps_and_is_idempotent() {
        let mut cache = LocalCache::new(1 << 20);
        let q = vec![vec![1, 2], vec![3]];
        let mut calls = 0;
        let got = prefetch_for_queue(&q, 10, &mut cache, |_| {
            calls += 1;
            Ok(Arc::new(vec![0; 8]))
        })
        .unwrap();
        assert_eq!(got.len(), 3);
        let again = prefetch_for_queue(&q, 10, &mut cache, |_| panic!("no fetch expected")).unwrap();
        assert!(again.is_empty());
        assert_eq!(calls, 3);
    }

    #[test]
    fn prefetch_stays_within_k() {
        let mut cache = LocalCache::new(1 << 20);
        let q = vec![vec![1], vec![2], vec![3]];
        let got = prefetch_for_queue(&q, 2, &mut cache, |_| Ok(Arc::new(vec![]))).unwrap();
        assert_eq!(got, BTreeSet::from([1, 2]));
    }
}
