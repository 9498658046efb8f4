use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::store::{check_query, l1, EmbeddingStore};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForestConfig {
    pub trees: usize,
    pub leaf_capacity: usize,
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        ForestConfig {
            trees: 10,
            leaf_capacity: 16,
            seed: 0,
        }
    }
}

/// Candidates examined per tree by default.
pub const BUDGET_PER_TREE: usize = 64;

#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    /// Items with `x[dim] < threshold` go left.
    Split {
        dim: u32,
        threshold: f32,
        left: u32,
        right: u32,
    },
    Leaf(Vec<u32>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tree {
    /// Root first.
    pub nodes: Vec<Node>,
}

/// A forest of axis-aligned random split trees.
#[derive(Debug, Clone, PartialEq)]
pub struct RpForest {
    pub config: ForestConfig,
    pub trees: Vec<Tree>,
}

/// Draws for a usable pair before falling back to a scan.
const SPLIT_TRIES: usize = 8;

/// Picks a split separating two distinct items: the coordinate where the
/// pair differs most, cut at the midpoint.
fn choose_split(store: &EmbeddingStore, items: &[u32], rng: &mut ChaCha8Rng) -> Option<(u32, f32)> {
    let split_of = |a: u32, b: u32| {
        let (ea, eb) = (store.embedding(a as usize), store.embedding(b as usize));
        let (dim, diff) = ea
            .iter()
            .zip(eb)
            .map(|(x, y)| (x - y).abs())
            .enumerate()
            .fold((0, 0.0f32), |best, (d, v)| if v > best.1 { (d, v) } else { best });
        let (lo, hi) = (ea[dim].min(eb[dim]), ea[dim].max(eb[dim]));
        let mid = lo + (hi - lo) / 2.0;
        // `lo < mid` keeps both sides nonempty even when rounding collapses
        // the midpoint onto `lo`.
        let threshold = if mid > lo { mid } else { hi };
        (diff > 0.0).then_some((dim as u32, threshold))
    };
    for _ in 0..SPLIT_TRIES {
        let i = rng.random_range(0..items.len());
        let mut j = rng.random_range(0..items.len() - 1);
        if j >= i {
            j += 1;
        }
        if let Some(s) = split_of(items[i], items[j]) {
            return Some(s);
        }
    }
    let first = items[0];
    items[1..].iter().find_map(|&b| split_of(first, b))
}

fn build_tree(store: &EmbeddingStore, capacity: usize, rng: &mut ChaCha8Rng) -> Tree {
    let mut nodes = vec![Node::Leaf(Vec::new())];
    let mut stack = vec![(0usize, (0..store.len() as u32).collect::<Vec<u32>>())];
    while let Some((slot, items)) = stack.pop() {
        if items.len() <= capacity {
            nodes[slot] = Node::Leaf(items);
            continue;
        }
        let Some((dim, threshold)) = choose_split(store, &items, rng) else {
            // Every item has the same embedding; no split can separate them.
            nodes[slot] = Node::Leaf(items);
            continue;
        };
        let (left, right): (Vec<u32>, Vec<u32>) = items
            .into_iter()
            .partition(|&id| store.embedding(id as usize)[dim as usize] < threshold);
        let (l, r) = (nodes.len(), nodes.len() + 1);
        nodes.push(Node::Leaf(Vec::new()));
        nodes.push(Node::Leaf(Vec::new()));
        nodes[slot] = Node::Split {
            dim,
            threshold,
            left: l as u32,
            right: r as u32,
        };
        stack.push((r, right));
        stack.push((l, left));
    }
    Tree { nodes }
}

/// Builds the forest; deterministic in `config.seed`.
pub fn build_index(store: &EmbeddingStore, config: ForestConfig) -> Result<RpForest> {
    if store.is_empty() {
        return Err(Error::Index("cannot index an empty store".into()));
    }
    if config.trees == 0 || config.leaf_capacity == 0 {
        return Err(Error::Config("tree count and leaf capacity must be ≥ 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let trees = (0..config.trees).map(|_| build_tree(store, config.leaf_capacity, &mut rng)).collect();
    Ok(RpForest { config, trees })
}

#[derive(PartialEq)]
struct Frontier {
    priority: f64,
    tree: u32,
    node: u32,
}

impl Eq for Frontier {}

impl Ord for Frontier {
    fn cmp(&self, other: &Self) -> Ordering {
        self.priority
            .total_cmp(&other.priority)
            .then_with(|| other.tree.cmp(&self.tree))
            .then_with(|| other.node.cmp(&self.node))
    }
}

impl PartialOrd for Frontier {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl RpForest {
    pub fn default_budget(&self) -> usize {
        self.trees.len() * BUDGET_PER_TREE
    }

    /// Collects distinct candidate ids, visiting leaves across all trees in
    /// order of how far the query is from the splits that lead to them,
    /// until `budget` candidates are gathered or every leaf has been seen.
    ///
    /// The visiting order does not depend on `budget`, so a larger budget
    /// always yields a superset of candidates.
    pub fn candidates(&self, store: &EmbeddingStore, query: &[f32], budget: usize) -> Vec<u32> {
        let mut seen = vec![false; store.len()];
        let mut out = Vec::new();
        let mut heap: BinaryHeap<Frontier> = (0..self.trees.len() as u32)
            .map(|tree| Frontier {
                priority: f64::INFINITY,
                tree,
                node: 0,
            })
            .collect();
        while let Some(Frontier { priority, tree, node }) = heap.pop() {
            match &self.trees[tree as usize].nodes[node as usize] {
                Node::Leaf(items) => {
                    for &id in items {
                        if !std::mem::replace(&mut seen[id as usize], true) {
                            out.push(id);
                        }
                    }
                    if out.len() >= budget.max(1) {
                        break;
                    }
                }
                &Node::Split {
                    dim,
                    threshold,
                    left,
                    right,
                } => {
                    let margin = query[dim as usize] as f64 - threshold as f64;
                    let (near, far) = if margin < 0.0 { (left, right) } else { (right, left) };
                    heap.push(Frontier {
                        priority: priority.min(margin.abs()),
                        tree,
                        node: near,
                    });
                    heap.push(Frontier {
                        priority: priority.min(-margin.abs()),
                        tree,
                        node: far,
                    });
                }
            }
        }
        out
    }

    /// Approximate nearest item under L1 among the candidates; ties go to
    /// the lowest id.
    pub fn query(&self, store: &EmbeddingStore, query: &[f32], budget: usize) -> Result<usize> {
        check_query(store, query)?;
        let mut cands = self.candidates(store, query, budget);
        cands.sort_unstable();
        let mut best = (f64::INFINITY, 0usize);
        for id in cands {
            let d = l1(store.embedding(id as usize), query);
            if d < best.0 {
                best = (d, id as usize);
            }
        }
        Ok(best.1)
    }

    /// Every item appears in exactly one leaf of every tree, and leaves hold
    /// at most `leaf_capacity` items unless their embeddings are identical.
    pub fn check_partition(&self, store: &EmbeddingStore) -> Result<()> {
        for (t, tree) in self.trees.iter().enumerate() {
            let mut count = vec![0u32; store.len()];
            for node in &tree.nodes {
                if let Node::Leaf(items) = node {
                    for &id in items {
                        let c = count
                            .get_mut(id as usize)
                            .ok_or_else(|| Error::Index(format!("tree {t} references item {id}")))?;
                        *c += 1;
                    }
                }
            }
            if let Some(id) = count.iter().position(|&c| c != 1) {
                return Err(Error::Index(format!("item {id} appears {} times in tree {t}", count[id])));
            }
        }
        Ok(())
    }
}
