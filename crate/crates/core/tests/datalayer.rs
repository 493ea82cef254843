use std::collections::BTreeSet;
use std::sync::Arc;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};

use tinymr::datalayer::{
    adapt_replication, build_initial_plan, fetch, DataError, DataNode, Decision, LatencyModel, ReplicationConfig,
    ReplicationController, SimNodeState, SimTransport,
};

fn p95(xs: &mut [f64]) -> f64 {
    xs.sort_by(f64::total_cmp);
    let rank = (0.95 * xs.len() as f64).ceil() as usize;
    xs[rank.max(1) - 1]
}

fn payload(id: u64, len: usize) -> Vec<u8> {
    (0..len).map(|i| (id as usize * 31 + i) as u8).collect()
}

fn cluster(models: &[LatencyModel], samples: u64, seed: u64) -> SimTransport {
    let t = SimTransport::new(seed);
    for (i, m) in models.iter().enumerate() {
        let node = Arc::new(DataNode::new(i as u32));
        for id in 0..samples {
            node.put(id, payload(id, 64 + id as usize % 50));
        }
        t.add_node(node, *m);
    }
    t
}

#[test]
fn fetched_bytes_equal_what_was_stored_across_failover() {
    let models = [LatencyModel::new(1.0, 2.0); 3];
    let t = cluster(&models, 40, 5);
    let plan = build_initial_plan(&(0..40).collect::<Vec<_>>(), &[0, 1, 2], 9).unwrap();
    t.set_state(0, SimNodeState::Down);
    t.set_state(1, SimNodeState::Unresponsive);
    for id in 0..40 {
        let r = fetch(&t, &plan, id, Some(64 + id % 50), 1e6).unwrap();
        assert_eq!(*r.payload, payload(id, 64 + id as usize % 50));
        assert_eq!(r.node, 2);
    }
    t.set_state(2, SimNodeState::Down);
    assert_eq!(fetch(&t, &plan, 0, None, 1e6), Err(DataError::SampleUnavailable(0)));
    assert_eq!(fetch(&t, &plan, 99, None, 1e6), Err(DataError::NotInPlan(99)));
}

#[test]
fn size_mismatch_is_reported_as_corruption() {
    let t = cluster(&[LatencyModel::new(1.0, 0.0)], 2, 0);
    let plan = build_initial_plan(&[0, 1], &[0], 0).unwrap();
    assert_eq!(
        fetch(&t, &plan, 1, Some(7), 10.0),
        Err(DataError::CorruptPayload { id: 1, expected: 7, actual: 65 })
    );
}

/// Per-sample fetch time is the first replica's draw when it beats the
/// deadline, else the deadline plus the next replica's draw, and so on.
/// The oracle redraws that order statistic with its own generator.
fn monte_carlo_p95(models: &[LatencyModel], firsts: &[Vec<u32>], deadline: f64, draws: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(0xfeed);
    let mut out = Vec::with_capacity(draws);
    for i in 0..draws {
        let order = &firsts[i % firsts.len()];
        let mut t = 0.0;
        for &n in order {
            let m = models[n as usize];
            let x = m.shift_ms + Exp::new(1.0 / m.mean_extra_ms).unwrap().sample(&mut rng);
            if x <= deadline {
                t += x;
                break;
            }
            t += deadline;
        }
        out.push(t);
    }
    p95(&mut out)
}

#[test]
fn p95_fetch_matches_order_statistic_oracle() {
    let models = [
        LatencyModel::new(0.5, 1.0),
        LatencyModel::new(0.5, 3.0),
        LatencyModel::new(2.0, 6.0),
        LatencyModel::new(0.2, 0.5),
    ];
    let n = 500u64;
    let ids: Vec<u64> = (0..n).collect();
    let plan = build_initial_plan(&ids, &[0, 1, 2, 3], 21).unwrap();
    let orders: Vec<Vec<u32>> = ids.iter().map(|id| plan.replicas(*id).unwrap().to_vec()).collect();
    for deadline in [1e9, 6.0] {
        let t = cluster(&models, n, 3);
        let mut measured = Vec::new();
        for _ in 0..8 {
            for &id in &ids {
                measured.push(fetch(&t, &plan, id, None, deadline).unwrap().fetch_ms);
            }
        }
        let got = p95(&mut measured);
        let oracle = monte_carlo_p95(&models, &orders, deadline, 200_000);
        assert!((got / oracle - 1.0).abs() <= 0.10, "deadline {deadline}: p95 {got} vs oracle {oracle}");
    }
}

#[test]
fn rule_adds_exactly_one_and_respects_floor() {
    let plan = build_initial_plan(&[1, 2], &[0, 1], 0).unwrap();
    let cfg = ReplicationConfig::default();
    let exec = [1.0];
    let (next, d) = adapt_replication(&plan, &[20.0; 10], &exec, 10.0, &cfg, Some(7)).unwrap();
    assert_eq!(d, Decision::Added(7));
    assert_eq!(next.replication_factor, 3);
    next.validate().unwrap();
    let (same, d) = adapt_replication(&plan, &[0.01; 10], &exec, 10.0, &cfg, Some(7)).unwrap();
    assert_eq!(d, Decision::Unchanged);
    assert_eq!(same, plan);
}

/// Fetch latency grows with the load per replica. The controller must
/// settle and then stay put over 100 windows.
#[test]
fn contention_controller_settles_without_oscillation() {
    let budget = 100.0;
    let load = 160.0;
    let cfg = ReplicationConfig { cooldown_tasks: 5, ..ReplicationConfig::default() };
    let mut plan = build_initial_plan(&(0..50).collect::<Vec<_>>(), &[0, 1], 1).unwrap();
    let mut ctl = ReplicationController::new(cfg.clone(), (2..12).collect());
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..100 {
        let model = LatencyModel::new(2.0, load / (plan.replication_factor as f64).powi(2));
        let fetches: Vec<f64> = (0..400).map(|_| model.sample(&mut rng)).collect();
        for _ in 0..cfg.cooldown_tasks {
            ctl.task_completed();
        }
        let (next, _) = ctl.step(&plan, &fetches, &[10.0], budget).unwrap();
        next.validate().unwrap();
        plan = next;
    }
    let h = ctl.history();
    let mut changes = 0;
    let mut last_dir = 0i32;
    for w in h.windows(2) {
        let dir = (w[1] as i32 - w[0] as i32).signum();
        if dir != 0 && last_dir != 0 && dir != last_dir {
            changes += 1;
        }
        if dir != 0 {
            last_dir = dir;
        }
    }
    assert!(changes <= 1, "{h:?}");
    let tail = &h[h.len() - 50..];
    assert!(tail.iter().all(|&r| r == tail[0]), "{h:?}");
    assert_eq!(tail[0], 4, "{h:?}");
}

#[derive(Debug, Clone)]
enum Op {
    Add(u32),
    Remove(u32),
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn plan_edits_keep_every_list_a_permutation_of_the_nodes(
        samples in prop::collection::btree_set(0u64..10_000, 1..60),
        nodes in prop::collection::btree_set(0u32..20, 1..8),
        ops in prop::collection::vec(prop_oneof![(0u32..30).prop_map(Op::Add), (0u32..30).prop_map(Op::Remove)], 0..20),
        seed in any::<u64>(),
    ) {
        let ids: Vec<u64> = samples.iter().copied().collect();
        let nodes: Vec<u32> = nodes.iter().copied().collect();
        let mut plan = build_initial_plan(&ids, &nodes, seed).unwrap();
        for op in ops {
            let next = match op {
                Op::Add(n) => match plan.with_node_added(n) {
                    Ok(p) => p,
                    Err(e) => {
                        prop_assert_eq!(e, DataError::DuplicateNode(n));
                        continue;
                    }
                },
                Op::Remove(n) => {
                    if plan.data_node_ids.len() == 1 && plan.data_node_ids[0] == n {
                        continue;
                    }
                    plan.with_node_removed(n)
                }
            };
            plan = next;
            prop_assert!(plan.validate().is_ok());
            let want: BTreeSet<u32> = plan.data_node_ids.iter().copied().collect();
            prop_assert_eq!(want.len(), plan.data_node_ids.len());
            for id in &ids {
                let got: BTreeSet<u32> = plan.replicas(*id).unwrap().iter().copied().collect();
                prop_assert_eq!(&got, &want);
            }
        }
    }

    #[test]
    fn plan_is_a_function_of_its_inputs(n in 1u64..200, k in 1u32..6, seed in any::<u64>()) {
        let ids: Vec<u64> = (0..n).collect();
        let nodes: Vec<u32> = (0..k).collect();
        prop_assert_eq!(build_initial_plan(&ids, &nodes, seed).unwrap(), build_initial_plan(&ids, &nodes, seed).unwrap());
    }

    #[test]
    fn fetch_prefers_the_first_live_replica(down in prop::collection::vec(any::<bool>(), 3), id in 0u64..20) {
        let t = cluster(&[LatencyModel::new(1.0, 1.0); 3], 20, 0);
        let plan = build_initial_plan(&(0..20).collect::<Vec<_>>(), &[0, 1, 2], 4).unwrap();
        for (n, &d) in down.iter().enumerate() {
            if d {
                t.set_state(n as u32, SimNodeState::Down);
            }
        }
        let order = plan.replicas(id).unwrap();
        match order.iter().position(|&n| !down[n as usize]) {
            Some(i) => {
                let r = fetch(&t, &plan, id, None, 1e9).unwrap();
                prop_assert_eq!(r.node, order[i]);
                prop_assert_eq!(r.failovers as usize, i);
            }
            None => prop_assert!(fetch(&t, &plan, id, None, 1e9).is_err()),
        }
    }
}
