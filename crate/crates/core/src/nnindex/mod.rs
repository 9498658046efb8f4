//! Approximate nearest-neighbour search over tile embeddings under the
//! Manhattan distance, used to snap generated embeddings to real tiles.
//!
//! An [`RpForest`] holds several trees of axis-aligned splits. A query walks
//! all trees at once, best-first by split margin, gathers a budget of
//! candidates and returns the L1-nearest of them. [`exact_nn`] is the
//! brute-force reference.

mod forest;
mod store;

use std::path::Path;

pub use forest::{build_index, ForestConfig, Node, RpForest, Tree, BUDGET_PER_TREE};
pub use store::{exact_nn, l1, EmbeddingStore, Payload, PAYLOAD_PIXELS};

use crate::affordance::{AffordanceVector, TAG_COUNT};
use crate::binio::{read_file, write_atomic, Reader, Writer};
use crate::corpus::SampleSource;
use crate::error::{Error, Result};

/// A store and the forest built over it.
#[derive(Debug, Clone, PartialEq)]
pub struct NnIndex {
    pub store: EmbeddingStore,
    pub forest: RpForest,
}

const MAGIC: &[u8; 4] = b"TCNN";
const VERSION: u16 = 1;
const NODE_SPLIT: u8 = 0;
const NODE_LEAF: u8 = 1;

impl NnIndex {
    pub fn build(store: EmbeddingStore, config: ForestConfig) -> Result<Self> {
        let forest = build_index(&store, config)?;
        Ok(NnIndex { store, forest })
    }

    /// Nearest stored item with the default search budget.
    pub fn query(&self, query: &[f32]) -> Result<usize> {
        self.forest.query(&self.store, query, self.forest.default_budget())
    }

    /// Binary `TCNN` encoding (little-endian):
    ///
    /// ```text
    /// magic b"TCNN", version u16, dim u32, count u32
    /// embeddings  f32 × count·dim
    /// payloads    per item: 768 f32 pixels, 13 u8 flags,
    ///             game str, level str, x u32, y u32
    /// forest      trees u32, leaf_capacity u32, seed u64
    ///             per tree: node_count u32, then per node
    ///               0u8 dim u32 threshold f32 left u32 right u32   (split)
    ///               1u8 len u32 ids u32 × len                      (leaf)
    /// ```
    /// `str` is a `u16` byte length followed by UTF-8.
    pub fn encode(&self) -> Result<Vec<u8>> {
        let s = &self.store;
        let mut w = Writer::new();
        w.bytes(MAGIC);
        w.u16(VERSION);
        w.u32(s.dim() as u32);
        w.u32(s.len() as u32);
        w.f32s(s.raw_embeddings());
        for p in s.payloads() {
            w.f32s(&p.pixels);
            w.bytes(&p.affordance.flags());
            w.str(&p.source.game_id)?;
            w.str(&p.source.level_id)?;
            w.u32(p.source.x as u32);
            w.u32(p.source.y as u32);
        }
        let f = &self.forest;
        w.u32(f.trees.len() as u32);
        w.u32(f.config.leaf_capacity as u32);
        w.u64(f.config.seed);
        for tree in &f.trees {
            w.u32(tree.nodes.len() as u32);
            for node in &tree.nodes {
                match node {
                    Node::Split {
                        dim,
                        threshold,
                        left,
                        right,
                    } => {
                        w.u8(NODE_SPLIT);
                        w.u32(*dim);
                        w.f32s(&[*threshold]);
                        w.u32(*left);
                        w.u32(*right);
                    }
                    Node::Leaf(ids) => {
                        w.u8(NODE_LEAF);
                        w.u32(ids.len() as u32);
                        for &id in ids {
                            w.u32(id);
                        }
                    }
                }
            }
        }
        Ok(w.into_bytes())
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        r.magic(MAGIC)?;
        r.version("TCNN", VERSION)?;
        let dim = r.u32("dim")? as usize;
        let count = r.u32("item count")? as usize;
        let embeddings = r.f32s(
            dim.checked_mul(count).ok_or_else(|| Error::Format("store size overflows".into()))?,
            "embeddings",
        )?;
        let mut payloads = Vec::with_capacity(count.min(1 << 20));
        for _ in 0..count {
            let pixels = r.f32s(PAYLOAD_PIXELS, "payload pixels")?;
            let flags: [u8; TAG_COUNT] = r.take(TAG_COUNT, "payload flags")?.try_into().expect("13 bytes");
            let affordance = AffordanceVector::from_flags(&flags)?;
            let game_id = r.str("payload game")?;
            let level_id = r.str("payload level")?;
            let x = r.u32("payload x")? as usize;
            let y = r.u32("payload y")? as usize;
            payloads.push(Payload {
                pixels,
                affordance,
                source: SampleSource { game_id, level_id, x, y },
            });
        }
        let trees_n = r.u32("tree count")? as usize;
        let leaf_capacity = r.u32("leaf capacity")? as usize;
        let seed = r.u64("seed")?;
        let mut trees = Vec::with_capacity(trees_n.min(1 << 12));
        for _ in 0..trees_n {
            let n = r.u32("node count")? as usize;
            let mut nodes = Vec::with_capacity(n.min(1 << 20));
            for i in 0..n {
                let node = match r.u8("node tag")? {
                    NODE_SPLIT => {
                        let split_dim = r.u32("split dim")?;
                        let threshold = r.f32s(1, "split threshold")?[0];
                        let left = r.u32("left child")?;
                        let right = r.u32("right child")?;
                        // Children always follow their parent, which rules out cycles.
                        if [left, right].iter().any(|&c| c as usize >= n || c as usize <= i) {
                            return Err(Error::Format(format!("node {i} has an invalid child index")));
                        }
                        if split_dim as usize >= dim {
                            return Err(Error::Format(format!("split dimension {split_dim} out of range")));
                        }
                        Node::Split {
                            dim: split_dim,
                            threshold,
                            left,
                            right,
                        }
                    }
                    NODE_LEAF => {
                        let len = r.u32("leaf length")? as usize;
                        let ids = (0..len).map(|_| r.u32("leaf id")).collect::<Result<Vec<_>>>()?;
                        Node::Leaf(ids)
                    }
                    t => return Err(Error::Format(format!("unknown node tag {t}"))),
                };
                nodes.push(node);
            }
            trees.push(Tree { nodes });
        }
        r.finish("TCNN")?;
        let store = EmbeddingStore::from_parts(dim, embeddings, payloads);
        let forest = RpForest {
            config: ForestConfig {
                trees: trees_n,
                leaf_capacity,
                seed,
            },
            trees,
        };
        forest.check_partition(&store)?;
        Ok(NnIndex { store, forest })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.encode()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        NnIndex::decode(&read_file(path)?)
    }
}
