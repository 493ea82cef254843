use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};

use super::{DataError, ReplicaPlan};
use crate::rng;
use crate::stats::Window;
use crate::NodeId;

const RESPONSE_WINDOW: usize = 256;

/// One data node's in-memory store. Reads take a shared lock; writes are
/// serialized.
#[derive(Debug)]
pub struct DataNode {
    pub node_id: NodeId,
    store: RwLock<HashMap<u64, Arc<Vec<u8>>>>,
    served: AtomicU64,
    recent: Mutex<Window>,
}

impl DataNode {
    pub fn new(node_id: NodeId) -> Self {
        Self {
            node_id,
            store: RwLock::new(HashMap::new()),
            served: AtomicU64::new(0),
            recent: Mutex::new(Window::new(RESPONSE_WINDOW)),
        }
    }

    pub fn put(&self, sample_id: u64, payload: Vec<u8>) {
        self.store.write().unwrap().insert(sample_id, Arc::new(payload));
    }

    pub fn get(&self, sample_id: u64) -> Option<Arc<Vec<u8>>> {
        let got = self.store.read().unwrap().get(&sample_id).cloned();
        if got.is_some() {
            self.served.fetch_add(1, Ordering::Relaxed);
        }
        got
    }

    pub fn contains(&self, sample_id: u64) -> bool {
        self.store.read().unwrap().contains_key(&sample_id)
    }

    pub fn len(&self) -> usize {
        self.store.read().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn stored_bytes(&self) -> u64 {
        self.store.read().unwrap().values().map(|v| v.len() as u64).sum()
    }

    pub fn served_count(&self) -> u64 {
        self.served.load(Ordering::Relaxed)
    }

    pub fn record_response(&self, ms: f64) {
        self.recent.lock().unwrap().push(ms);
    }

    pub fn recent_fetch_ms(&self) -> Vec<f64> {
        self.recent.lock().unwrap().to_vec()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TransportError {
    /// No answer before the deadline.
    Timeout { elapsed_ms: f64 },
    Unreachable,
    NotFound,
}

/// Something that can ask one data node for one sample.
pub trait DataTransport {
    /// Returns the payload and the observed response time in ms.
    fn get(&self, node: NodeId, sample_id: u64, deadline_ms: f64) -> Result<(Arc<Vec<u8>>, f64), TransportError>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct FetchResult {
    pub payload: Arc<Vec<u8>>,
    /// Total time across every attempt.
    pub fetch_ms: f64,
    pub node: NodeId,
    pub failovers: u32,
    pub attempts: u32,
}

/// Reads `sample_id` from its replicas in plan order, moving on after a
/// timeout or an unreachable or missing replica. The payload length is
/// checked against `expected_size` when given.
pub fn fetch<T: DataTransport + ?Sized>(
    transport: &T,
    plan: &ReplicaPlan,
    sample_id: u64,
    expected_size: Option<u64>,
    deadline_ms: f64,
) -> Result<FetchResult, DataError> {
    let replicas = plan.replicas(sample_id).ok_or(DataError::NotInPlan(sample_id))?;
    let mut elapsed = 0.0;
    let mut failovers = 0;
    for (attempt, &node) in replicas.iter().enumerate() {
        match transport.get(node, sample_id, deadline_ms) {
            Ok((payload, ms)) => {
                elapsed += ms;
                if let Some(exp) = expected_size {
                    if payload.len() as u64 != exp {
                        return Err(DataError::CorruptPayload {
                            id: sample_id,
                            expected: exp,
                            actual: payload.len() as u64,
                        });
                    }
                }
                return Ok(FetchResult {
                    payload,
                    fetch_ms: elapsed,
                    node,
                    failovers,
                    attempts: attempt as u32 + 1,
                });
            }
            Err(e) => {
                if let TransportError::Timeout { elapsed_ms } = e {
                    elapsed += elapsed_ms;
                }
                log::debug!("sample {sample_id}: replica {node} failed ({e:?}), failing over");
                failovers += 1;
            }
        }
    }
    Err(DataError::SampleUnavailable(sample_id))
}

/// Shifted-exponential response time: `shift_ms + Exp(mean = mean_extra_ms)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatencyModel {
    pub shift_ms: f64,
    pub mean_extra_ms: f64,
}

impl LatencyModel {
    pub fn new(shift_ms: f64, mean_extra_ms: f64) -> Self {
        Self {
            shift_ms,
            mean_extra_ms,
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        if self.mean_extra_ms <= 0.0 {
            return self.shift_ms;
        }
        self.shift_ms + Exp::new(1.0 / self.mean_extra_ms).unwrap().sample(rng)
    }

    pub fn cdf(&self, t: f64) -> f64 {
        if t < self.shift_ms {
            0.0
        } else if self.mean_extra_ms <= 0.0 {
            1.0
        } else {
            1.0 - (-(t - self.shift_ms) / self.mean_extra_ms).exp()
        }
    }

    pub fn mean(&self) -> f64 {
        self.shift_ms + self.mean_extra_ms
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SimNodeState {
    Up,
    /// Connection refused: fails immediately.
    Down,
    /// Accepts the request but never answers.
    Unresponsive,
}

struct SimNode {
    data: Arc<DataNode>,
    latency: LatencyModel,
    state: SimNodeState,
}

/// In-process transport with sampled response times. Deterministic for a
/// fixed seed and call order.
pub struct SimTransport {
    nodes: RwLock<HashMap<NodeId, SimNode>>,
    rng: Mutex<ChaCha8Rng>,
}

impl SimTransport {
    pub fn new(seed: u64) -> Self {
        Self {
            nodes: RwLock::new(HashMap::new()),
            rng: Mutex::new(rng::stream(seed, &[rng::TAG_NET])),
        }
    }

    pub fn add_node(&self, data: Arc<DataNode>, latency: LatencyModel) {
        self.nodes.write().unwrap().insert(
            data.node_id,
            SimNode {
                data,
                latency,
                state: SimNodeState::Up,
            },
        );
    }

    pub fn set_state(&self, node: NodeId, state: SimNodeState) {
        if let Some(n) = self.nodes.write().unwrap().get_mut(&node) {
            n.state = state;
        }
    }

    pub fn node(&self, node: NodeId) -> Option<Arc<DataNode>> {
        self.nodes.read().unwrap().get(&node).map(|n| n.data.clone())
    }
}

impl DataTransport for SimTransport {
    fn get(&self, node: NodeId, sample_id: u64, deadline_ms: f64) -> Result<(Arc<Vec<u8>>, f64), TransportError> {
        let nodes = self.nodes.read().unwrap();
        let n = nodes.get(&node).ok_or(TransportError::Unreachable)?;
        match n.state {
            SimNodeState::Down => return Err(TransportError::Unreachable),
            SimNodeState::Unresponsive => {
                return Err(TransportError::Timeout {
                    elapsed_ms: deadline_ms,
                })
            }
            SimNodeState::Up => {}
        }
        let ms = n.latency.sample(&mut *self.rng.lock().unwrap());
        if ms > deadline_ms {
            return Err(TransportError::Timeout {
                elapsed_ms: deadline_ms,
            });
        }
        let payload = n.data.get(sample_id).ok_or(TransportError::NotFound)?;
        n.data.record_response(ms);
        Ok((payload, ms))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datalayer::build_initial_plan;

    struct Counting<'a> {
        inner: &'a SimTransport,
        calls: Mutex<Vec<NodeId>>,
    }

    impl DataTransport for Counting<'_> {
        fn get(&self, node: NodeId, sample_id: u64, deadline_ms: f64) -> Result<(Arc<Vec<u8>>, f64), TransportError> {
            self.calls.lock().unwrap().push(node);
            self.inner.get(node, sample_id, deadline_ms)
        }
    }

    fn setup() -> (SimTransport, ReplicaPlan) {
        let t = SimTransport::new(1);
        for id in 0..2 {
            let d = Arc::new(DataNode::new(id));
            d.put(5, vec![1; 32]);
            t.add_node(d, LatencyModel::new(1.0, 0.5));
        }
        let mut plan = build_initial_plan(&[5], &[0, 1], 0).unwrap();
        plan.assignment.insert(5, vec![0, 1]);
        (t, plan)
    }

    #[test]
    fn healthy_first_replica_is_one_request() {
        let (t, plan) = setup();
        let c = Counting { inner: &t, calls: Mutex::new(vec![]) };
        let r = fetch(&c, &plan, 5, Some(32), 100.0).unwrap();
        assert_eq!(*c.calls.lock().unwrap(), vec![0]);
        assert_eq!(r.failovers, 0);
        assert_eq!(&r.payload[..], &[1u8; 32][..]);
    }

    #[test]
    fn unresponsive_first_replica_fails_over() {
        let (t, plan) = setup();
        t.set_state(0, SimNodeState::Unresponsive);
        let r = fetch(&t, &plan, 5, Some(32), 50.0).unwrap();
        assert_eq!(r.failovers, 1);
        assert_eq!(r.node, 1);
        assert!(r.fetch_ms >= 50.0);
    }

    #[test]
    fn exhausted_and_corrupt() {
        let (t, plan) = setup();
        assert_eq!(
            fetch(&t, &plan, 5, Some(31), 50.0).unwrap_err(),
            DataError::CorruptPayload { id: 5, expected: 31, actual: 32 }
        );
        t.set_state(0, SimNodeState::Down);
        t.set_state(1, SimNodeState::Down);
        assert_eq!(fetch(&t, &plan, 5, None, 50.0).unwrap_err(), DataError::SampleUnavailable(5));
        assert_eq!(fetch(&t, &plan, 6, None, 50.0).unwrap_err(), DataError::NotInPlan(6));
    }
}
