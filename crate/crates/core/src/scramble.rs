//! Block-wise temporal scrambling.
//!
//! A clip is cut into `n` contiguous blocks of near-equal length and the blocks
//! are reordered under three constraints: the first block may not stay first,
//! the last block must land strictly inside the sequence, and no two blocks
//! that were adjacent in the source may be adjacent in the output, in either
//! order. Blocks are numbered from 1 in permutations.
//!
//! Sampling is exact: all `n!` orders are enumerated, filtered, and one is
//! drawn uniformly with ChaCha8 seeded from SHA-256 of the seed and the clip
//! key (see [`crate::seed`]).

use std::sync::{Arc, OnceLock};

use itertools::Itertools;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seed;
use crate::tree::{
    MircRole, NodeId, NodeStatus, QuadrantNode, ReductionTree, Selection, Temporal, TreeError,
};

pub const DEFAULT_BLOCKS: usize = 5;

/// Enumeration grows as `n!`; larger block counts are refused.
pub const MAX_BLOCKS: usize = 9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScrambleError {
    #[error("clip has {frame_count} frames, fewer than the {n} blocks requested")]
    TooShortClip { frame_count: usize, n: usize },
    #[error("block count {0} must lie in 2..={MAX_BLOCKS}")]
    BlockCount(usize),
    #[error("no permutation of {0} blocks satisfies the scrambling constraints")]
    NoValidPermutation(usize),
    #[error("plan covers {plan} frames but the clip has {clip}")]
    Integrity { plan: usize, clip: usize },
    #[error("invalid plan: {0}")]
    InvalidPlan(String),
    #[error(transparent)]
    Tree(#[from] TreeError),
}

/// A scrambling of one clip. `block_bounds` are half-open `[start, end)`
/// frame ranges; `permutation` lists 1-based source blocks in output order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScramblePlan {
    pub n_blocks: usize,
    pub block_bounds: Vec<(usize, usize)>,
    pub permutation: Vec<usize>,
    pub seed: u64,
}

impl ScramblePlan {
    pub fn frame_count(&self) -> usize {
        self.block_bounds.last().map_or(0, |b| b.1)
    }
}

pub fn partition_blocks(
    frame_count: usize,
    n: usize,
) -> Result<Vec<(usize, usize)>, ScrambleError> {
    if n < 2 {
        return Err(ScrambleError::BlockCount(n));
    }
    if frame_count < n {
        return Err(ScrambleError::TooShortClip { frame_count, n });
    }
    let (base, extra) = (frame_count / n, frame_count % n);
    let mut bounds = Vec::with_capacity(n);
    let mut start = 0;
    for i in 0..n {
        let len = base + usize::from(i < extra);
        bounds.push((start, start + len));
        start += len;
    }
    Ok(bounds)
}

fn is_bijection(perm: &[usize], n: usize) -> bool {
    if perm.len() != n {
        return false;
    }
    let mut seen = vec![false; n + 1];
    perm.iter()
        .all(|&b| b >= 1 && b <= n && !std::mem::replace(&mut seen[b], true))
}

/// True iff `perm` is a bijection on `1..=n` meeting all three constraints.
pub fn is_valid_permutation(perm: &[usize], n: usize) -> bool {
    if !is_bijection(perm, n) || n < 2 {
        return false;
    }
    if perm[0] == 1 {
        return false;
    }
    let last_pos = perm.iter().position(|&b| b == n).expect("bijection");
    if last_pos == 0 || last_pos == n - 1 {
        return false;
    }
    perm.windows(2).all(|w| w[0].abs_diff(w[1]) != 1)
}

/// All valid permutations of `n` blocks in lexicographic order.
pub fn valid_permutations(n: usize) -> Result<Vec<Vec<usize>>, ScrambleError> {
    if !(2..=MAX_BLOCKS).contains(&n) {
        return Err(ScrambleError::BlockCount(n));
    }
    Ok((1..=n)
        .permutations(n)
        .filter(|p| is_valid_permutation(p, n))
        .collect())
}

/// Draws plans from a cached valid set.
#[derive(Debug, Clone)]
pub struct Scrambler {
    n: usize,
    valid: Arc<Vec<Vec<usize>>>,
}

/// Valid sets per block count, enumerated once per process.
fn cached_valid_set(n: usize) -> Result<Arc<Vec<Vec<usize>>>, ScrambleError> {
    static CACHE: [OnceLock<Arc<Vec<Vec<usize>>>>; MAX_BLOCKS + 1] =
        [const { OnceLock::new() }; MAX_BLOCKS + 1];
    let slot = CACHE.get(n).ok_or(ScrambleError::BlockCount(n))?;
    if let Some(v) = slot.get() {
        return Ok(Arc::clone(v));
    }
    let valid = Arc::new(valid_permutations(n)?);
    Ok(Arc::clone(slot.get_or_init(|| valid)))
}

impl Scrambler {
    pub fn new(n: usize) -> Result<Self, ScrambleError> {
        let valid = cached_valid_set(n)?;
        if valid.is_empty() {
            return Err(ScrambleError::NoValidPermutation(n));
        }
        Ok(Self { n, valid })
    }

    pub fn n_blocks(&self) -> usize {
        self.n
    }

    pub fn valid_set(&self) -> &[Vec<usize>] {
        &self.valid
    }

    /// Deterministic in `(key, seed, n)`.
    pub fn sample(
        &self,
        key: &str,
        frame_count: usize,
        seed: u64,
    ) -> Result<ScramblePlan, ScrambleError> {
        let block_bounds = partition_blocks(frame_count, self.n)?;
        let mut rng = seed::rng(seed::derive_seed(seed, &format!("scramble:{key}")));
        let idx = seed::uniform_index(&mut rng, self.valid.len());
        Ok(ScramblePlan {
            n_blocks: self.n,
            block_bounds,
            permutation: self.valid[idx].clone(),
            seed,
        })
    }
}

/// One-shot sampling; the valid set is shared across calls.
pub fn sample_scramble(
    key: &str,
    frame_count: usize,
    seed: u64,
    n: usize,
) -> Result<ScramblePlan, ScrambleError> {
    Scrambler::new(n)?.sample(key, frame_count, seed)
}

/// Output frame order for a plan. The plan's structure is checked but not the
/// scrambling constraints.
pub fn materialize(frame_count: usize, plan: &ScramblePlan) -> Result<Vec<usize>, ScrambleError> {
    if plan.frame_count() != frame_count {
        return Err(ScrambleError::Integrity {
            plan: plan.frame_count(),
            clip: frame_count,
        });
    }
    if plan.block_bounds.len() != plan.n_blocks || !is_bijection(&plan.permutation, plan.n_blocks) {
        return Err(ScrambleError::InvalidPlan(
            "permutation is not a bijection on the blocks".into(),
        ));
    }
    let mut prev_end = 0;
    for &(s, e) in &plan.block_bounds {
        if s != prev_end || e <= s {
            return Err(ScrambleError::InvalidPlan(
                "blocks must be contiguous and non-empty".into(),
            ));
        }
        prev_end = e;
    }
    Ok(plan
        .permutation
        .iter()
        .flat_map(|&b| {
            let (s, e) = plan.block_bounds[b - 1];
            s..e
        })
        .collect())
}

/// Inserts the scrambled variant of `source` into its tree.
pub fn add_scrambled_variant(
    tree: &mut ReductionTree,
    source: &NodeId,
    plan: &ScramblePlan,
) -> Result<NodeId, ScrambleError> {
    let src = tree.node(source)?.clone();
    if src.is_scrambled() {
        return Err(ScrambleError::InvalidPlan(format!(
            "{source} is already scrambled"
        )));
    }
    let id = NodeId::scrambled(source, plan.seed);
    tree.insert(QuadrantNode {
        node_id: id.clone(),
        clip_id: src.clip_id.clone(),
        parent: Some(src.node_id.clone()),
        level: src.level,
        corner_path: src.corner_path.clone(),
        rect: src.rect,
        temporal: Temporal::Scrambled {
            seed: plan.seed,
            permutation: plan.permutation.clone(),
        },
        status: NodeStatus::Untested,
        selection: Selection::Selected,
        human_accuracy: None,
        model_confidence: None,
        mirc_role: MircRole::None,
    })?;
    Ok(id)
}
