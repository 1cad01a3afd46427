use std::collections::BTreeMap;

use ndarray::Array2;

use super::hash::SpectrogramHash;
use crate::error::{Error, Result};
use crate::extract::LoopLayout;

/// Hashes closer than this many differing bits are duplicates.
pub const DUPLICATE_DISTANCE: u32 = 5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DedupCandidate {
    pub hash: SpectrogramHash,
    /// Sum of the loop's layout activations.
    pub activation_total: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DedupOutcome {
    /// Surviving loop indices, ascending.
    pub kept: Vec<usize>,
    /// Removed loop → the survivor it merged into.
    pub merge_map: BTreeMap<usize, usize>,
}

struct UnionFind(Vec<usize>);

impl UnionFind {
    fn find(&mut self, mut i: usize) -> usize {
        while self.0[i] != i {
            self.0[i] = self.0[self.0[i]];
            i = self.0[i];
        }
        i
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.0[ra.max(rb)] = ra.min(rb);
        }
    }
}

/// Groups loops whose hashes differ in fewer than five bits (transitively)
/// and keeps the most active loop of every group.
pub fn dedup_loops(candidates: &[DedupCandidate]) -> DedupOutcome {
    let n = candidates.len();
    let mut uf = UnionFind((0..n).collect());
    for i in 0..n {
        for j in i + 1..n {
            if candidates[i].hash.hamming(candidates[j].hash) < DUPLICATE_DISTANCE {
                uf.union(i, j);
            }
        }
    }
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for i in 0..n {
        let root = uf.find(i);
        groups.entry(root).or_default().push(i);
    }
    let mut outcome = DedupOutcome::default();
    for members in groups.values() {
        // ties go to the lowest index
        let winner = *members
            .iter()
            .max_by(|&&a, &&b| {
                candidates[a]
                    .activation_total
                    .total_cmp(&candidates[b].activation_total)
                    .then(b.cmp(&a))
            })
            .expect("groups are non-empty");
        outcome.kept.push(winner);
        for &m in members.iter().filter(|&&m| m != winner) {
            outcome.merge_map.insert(m, winner);
        }
    }
    outcome.kept.sort_unstable();
    outcome
}

/// Folds duplicate rows into their survivors, then scales every bar so its
/// largest activation is one. Rows of the result follow the ascending
/// survivor indices; all-zero bars stay zero.
pub fn refine_layout(layout: &LoopLayout, merge_map: &BTreeMap<usize, usize>) -> Result<LoopLayout> {
    let loops = layout.loops();
    for (&loser, &winner) in merge_map {
        if loser >= loops || winner >= loops {
            return Err(Error::invalid(format!("merge {loser}->{winner} outside {loops} loops")));
        }
        if merge_map.contains_key(&winner) {
            return Err(Error::invalid(format!("merge target {winner} was itself merged")));
        }
    }
    let kept: Vec<usize> = (0..loops).filter(|i| !merge_map.contains_key(i)).collect();
    let row_of: BTreeMap<usize, usize> = kept.iter().enumerate().map(|(r, &l)| (l, r)).collect();
    let mut merged = Array2::zeros((kept.len(), layout.bars()));
    for l in 0..loops {
        let target = merge_map.get(&l).copied().unwrap_or(l);
        let r = row_of[&target];
        merged.row_mut(r).scaled_add(1.0, &layout.activations.row(l));
    }
    for mut column in merged.columns_mut() {
        let peak = column.fold(0.0f64, |m, &v| m.max(v));
        if peak > 0.0 {
            column.mapv_inplace(|v| v / peak);
        }
    }
    Ok(LoopLayout { activations: merged })
}
