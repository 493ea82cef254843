use std::collections::BTreeMap;
use std::io::{self, Write};

use super::DataError;
use crate::rng;
use crate::NodeId;

/// Which data nodes hold which samples, in read-preference order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReplicaPlan {
    pub replication_factor: usize,
    pub data_node_ids: Vec<NodeId>,
    pub assignment: BTreeMap<u64, Vec<NodeId>>,
}

/// Full replication over `data_node_ids`. Each sample's list is the node
/// list rotated by a seeded per-sample offset, which spreads first-choice
/// reads across nodes.
pub fn build_initial_plan(sample_ids: &[u64], data_node_ids: &[NodeId], seed: u64) -> Result<ReplicaPlan, DataError> {
    if data_node_ids.is_empty() {
        return Err(DataError::NoDataNodes);
    }
    if sample_ids.is_empty() {
        return Err(DataError::EmptyManifest);
    }
    let n = data_node_ids.len();
    let assignment = sample_ids
        .iter()
        .map(|&id| {
            let off = (rng::derive_seed(seed, &[rng::TAG_PLAN, id]) % n as u64) as usize;
            let mut order = data_node_ids.to_vec();
            order.rotate_left(off);
            (id, order)
        })
        .collect();
    Ok(ReplicaPlan {
        replication_factor: n,
        data_node_ids: data_node_ids.to_vec(),
        assignment,
    })
}

impl ReplicaPlan {
    pub fn replicas(&self, sample_id: u64) -> Option<&[NodeId]> {
        self.assignment.get(&sample_id).map(Vec::as_slice)
    }

    pub fn validate(&self) -> Result<(), DataError> {
        if self.replication_factor == 0 {
            return Err(DataError::Invariant("replication_factor is 0".into()));
        }
        if self.replication_factor > self.data_node_ids.len() {
            return Err(DataError::Invariant("more replicas than data nodes".into()));
        }
        for (id, r) in &self.assignment {
            if r.len() != self.replication_factor {
                return Err(DataError::Invariant(format!(
                    "sample {id} has {} replicas, expected {}",
                    r.len(),
                    self.replication_factor
                )));
            }
        }
        Ok(())
    }

    /// Replicates every sample onto `node`, appended last in preference.
    pub fn with_node_added(&self, node: NodeId) -> Result<ReplicaPlan, DataError> {
        if self.data_node_ids.contains(&node) {
            return Err(DataError::DuplicateNode(node));
        }
        let mut next = self.clone();
        next.data_node_ids.push(node);
        next.replication_factor += 1;
        for r in next.assignment.values_mut() {
            r.push(node);
        }
        Ok(next)
    }

    /// Drops `node` from every replica list.
    pub fn with_node_removed(&self, node: NodeId) -> ReplicaPlan {
        let mut next = self.clone();
        let before = next.data_node_ids.len();
        next.data_node_ids.retain(|&n| n != node);
        if next.data_node_ids.len() < before {
            next.replication_factor -= 1;
            for r in next.assignment.values_mut() {
                r.retain(|&n| n != node);
            }
        }
        next
    }

    /// `sample_id,node_id,rank` audit dump.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "sample_id,node_id,rank")?;
        for (id, nodes) in &self.assignment {
            for (rank, n) in nodes.iter().enumerate() {
                writeln!(w, "{id},{n},{rank}")?;
            }
        }
        w.flush()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_replication() {
        let p = build_initial_plan(&[1, 2, 3, 4], &[10, 11, 12], 5).unwrap();
        assert_eq!(p.replication_factor, 3);
        for r in p.assignment.values() {
            let mut s = r.clone();
            s.sort_unstable();
            assert_eq!(s, vec![10, 11, 12]);
        }
        p.validate().unwrap();
        assert!(build_initial_plan(&[1], &[], 0).is_err());
        assert!(build_initial_plan(&[], &[1], 0).is_err());
        assert_eq!(build_initial_plan(&[1], &[7], 0).unwrap().replicas(1), Some(&[7][..]));
    }

    #[test]
    fn add_and_remove_keep_invariant() {
        let p = build_initial_plan(&[1, 2], &[0, 1], 0).unwrap();
        let q = p.with_node_added(2).unwrap();
        q.validate().unwrap();
        assert_eq!(q.replication_factor, 3);
        assert!(q.with_node_added(2).is_err());
        let r = q.with_node_removed(0);
        r.validate().unwrap();
        assert_eq!(r.replication_factor, 2);
    }

    #[test]
    fn csv_dump() {
        let p = build_initial_plan(&[9], &[4], 0).unwrap();
        let mut buf = Vec::new();
        p.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "sample_id,node_id,rank\n9,4,0\n");
    }
}
