//! Candidate trees, their attention masks and flattening for a single
//! verification pass.
//!
//! Node 0 is always the root: the pending token that the previous round
//! emitted and that the target has not consumed yet. Every other node is a
//! drafted candidate whose parent precedes it in `nodes`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::ProbDist;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeKind {
    Root,
    /// Continues a drafting chain; may have children.
    VerticalTop1,
    /// Alternative at the same position as a vertical node; always a leaf.
    HorizontalAlt,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TreeNode {
    pub token: u32,
    pub parent: Option<usize>,
    pub depth: usize,
    /// Draft probability of `token` at the parent's context.
    pub draft_prob: f64,
    pub kind: NodeKind,
    /// Index into [`DraftTree::features`] of the draft feature that produced
    /// this node's distribution, when the drafter has features.
    #[serde(skip)]
    pub source: Option<usize>,
}

#[derive(Clone, Debug, Default)]
pub struct DraftTree {
    nodes: Vec<TreeNode>,
    /// Distribution each node's children were proposed from.
    proposals: Vec<Option<ProbDist>>,
    features: Vec<Vec<f64>>,
    /// Number of draft-model invocations spent building the tree.
    pub draft_calls: usize,
}

impl DraftTree {
    pub fn new(root_token: u32) -> Self {
        Self {
            nodes: vec![TreeNode {
                token: root_token,
                parent: None,
                depth: 0,
                draft_prob: 1.0,
                kind: NodeKind::Root,
                source: None,
            }],
            proposals: vec![None],
            features: Vec::new(),
            draft_calls: 0,
        }
    }

    /// Builds a tree from `(token, parent)` pairs for non-root nodes. Kinds
    /// default to vertical and draft probabilities to 1.
    pub fn from_parents(root_token: u32, nodes: &[(u32, usize)]) -> Result<Self> {
        let mut tree = Self::new(root_token);
        for &(token, parent) in nodes {
            tree.push(token, parent, 1.0, NodeKind::VerticalTop1, None)?;
        }
        Ok(tree)
    }

    pub fn push(
        &mut self,
        token: u32,
        parent: usize,
        draft_prob: f64,
        kind: NodeKind,
        source: Option<usize>,
    ) -> Result<usize> {
        let idx = self.nodes.len();
        let Some(p) = self.nodes.get(parent) else {
            return Err(Error::Structure(format!("node {idx} has parent {parent} after it")));
        };
        if p.kind == NodeKind::HorizontalAlt {
            return Err(Error::Structure(format!("horizontal node {parent} cannot have children")));
        }
        if !(draft_prob > 0.0 && draft_prob <= 1.0) {
            return Err(Error::Structure(format!("draft probability {draft_prob} outside (0, 1]")));
        }
        let depth = p.depth + 1;
        self.nodes.push(TreeNode { token, parent: Some(parent), depth, draft_prob, kind, source });
        self.proposals.push(None);
        Ok(idx)
    }

    pub fn add_feature(&mut self, f: Vec<f64>) -> usize {
        self.features.push(f);
        self.features.len() - 1
    }

    pub fn set_proposal(&mut self, node: usize, dist: ProbDist) {
        self.proposals[node] = Some(dist);
    }

    pub fn proposal(&self, node: usize) -> Option<&ProbDist> {
        self.proposals[node].as_ref()
    }

    pub fn nodes(&self) -> &[TreeNode] {
        &self.nodes
    }

    pub fn node(&self, i: usize) -> &TreeNode {
        &self.nodes[i]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn root_token(&self) -> u32 {
        self.nodes[0].token
    }

    pub fn features(&self) -> &[Vec<f64>] {
        &self.features
    }

    pub fn feature(&self, handle: usize) -> &[f64] {
        &self.features[handle]
    }

    /// Children of `node` in proposal order.
    pub fn children(&self, node: usize) -> impl Iterator<Item = usize> + '_ {
        self.nodes
            .iter()
            .enumerate()
            .skip(node + 1)
            .filter(move |(_, n)| n.parent == Some(node))
            .map(|(i, _)| i)
    }

    /// Deepest node depth.
    pub fn max_depth(&self) -> usize {
        self.nodes.iter().map(|n| n.depth).max().unwrap_or(0)
    }

    /// Node indices from the first level down to `node`, root excluded.
    pub fn path_to(&self, node: usize) -> Vec<usize> {
        let mut path = Vec::new();
        let mut cur = node;
        while let Some(p) = self.nodes[cur].parent {
            path.push(cur);
            cur = p;
        }
        path.reverse();
        path
    }

    /// Rough byte footprint of the tree and everything it carries.
    pub fn approx_bytes(&self) -> usize {
        let nodes = self.nodes.len() * std::mem::size_of::<TreeNode>();
        let dists: usize = self.proposals.iter().flatten().map(|d| d.len() * 8).sum();
        let feats: usize = self.features.iter().map(|f| f.len() * 8).sum();
        nodes + dists + feats
    }

    /// JSON view used by the `dump-tree` command.
    pub fn to_json(&self) -> serde_json::Value {
        let nodes: Vec<serde_json::Value> = self
            .nodes
            .iter()
            .enumerate()
            .map(|(i, n)| {
                serde_json::json!({
                    "index": i,
                    "token": n.token,
                    "parent": n.parent,
                    "depth": n.depth,
                    "prob": n.draft_prob,
                    "kind": n.kind,
                })
            })
            .collect();
        serde_json::json!({ "root": self.root_token(), "nodes": nodes })
    }

    fn check_order(&self) -> Result<()> {
        for (i, n) in self.nodes.iter().enumerate() {
            match n.parent {
                None if i == 0 => {}
                None => return Err(Error::Structure(format!("node {i} has no parent"))),
                Some(p) if p >= i => {
                    return Err(Error::Structure(format!("node {i} precedes its parent {p}")))
                }
                Some(p) if self.nodes[p].depth + 1 != n.depth => {
                    return Err(Error::Structure(format!("node {i} has inconsistent depth")))
                }
                Some(_) => {}
            }
        }
        Ok(())
    }
}

/// Square visibility matrix: `(i, j)` is true when node `j` is an ancestor of
/// node `i` or `i` itself.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TreeMask {
    n: usize,
    bits: Vec<bool>,
}

impl TreeMask {
    /// Ordinary causal mask over `n` positions.
    pub fn causal(n: usize) -> Self {
        let mut bits = vec![false; n * n];
        for i in 0..n {
            for j in 0..=i {
                bits[i * n + j] = true;
            }
        }
        Self { n, bits }
    }

    /// Each position sees only itself.
    pub fn diagonal(n: usize) -> Self {
        let mut bits = vec![false; n * n];
        for i in 0..n {
            bits[i * n + i] = true;
        }
        Self { n, bits }
    }

    pub fn from_fn(n: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let mut bits = vec![false; n * n];
        for i in 0..n {
            for j in 0..n {
                bits[i * n + j] = f(i, j);
            }
        }
        Self { n, bits }
    }

    pub fn size(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> bool {
        self.bits[i * self.n + j]
    }

    /// Visible columns of row `i`, ascending.
    pub fn visible(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.n).filter(move |&j| self.bits[i * self.n + j])
    }
}

pub fn build_mask(tree: &DraftTree) -> Result<TreeMask> {
    tree.check_order()?;
    let n = tree.len();
    let mut bits = vec![false; n * n];
    for (i, node) in tree.nodes.iter().enumerate() {
        if let Some(p) = node.parent {
            let (before, row) = bits.split_at_mut(i * n);
            row[..n].copy_from_slice(&before[p * n..p * n + n]);
        }
        bits[i * n + i] = true;
    }
    Ok(TreeMask { n, bits })
}

/// Tokens, position ids and mask for one tree-masked target pass.
#[derive(Clone, Debug)]
pub struct Flattened {
    pub tokens: Vec<u32>,
    pub positions: Vec<usize>,
    pub mask: TreeMask,
}

/// Flattens a tree for a target pass whose cache currently holds `base`
/// positions. The root lands at position `base` and a node at depth `d` at
/// `base + d`, so siblings share a position.
pub fn flatten(tree: &DraftTree, base: usize) -> Result<Flattened> {
    if tree.is_empty() {
        return Err(Error::Structure("empty tree".into()));
    }
    let mask = build_mask(tree)?;
    Ok(Flattened {
        tokens: tree.nodes.iter().map(|n| n.token).collect(),
        positions: tree.nodes.iter().map(|n| base + n.depth).collect(),
        mask,
    })
}

/// Longest path of accepted nodes hanging off the root. Ties prefer vertical
/// nodes, then the lower index. The root itself is never part of the path.
pub fn longest_accepted_path(tree: &DraftTree, accepted: &[bool]) -> Vec<usize> {
    // Best continuation below each node, computed bottom-up.
    let n = tree.len();
    let mut best_len = vec![0usize; n];
    let mut best_child: Vec<Option<usize>> = vec![None; n];
    for i in (0..n).rev() {
        if let Some(p) = tree.nodes[i].parent {
            if !accepted.get(i).copied().unwrap_or(false) {
                continue;
            }
            let cand = best_len[i] + 1;
            let better = match best_child[p] {
                None => true,
                Some(cur) => {
                    let cur_len = best_len[p];
                    let vertical = |k: usize| tree.nodes[k].kind != NodeKind::HorizontalAlt;
                    cand > cur_len
                        || (cand == cur_len && vertical(i) && !vertical(cur))
                        || (cand == cur_len && vertical(i) == vertical(cur) && i < cur)
                }
            };
            if better {
                best_len[p] = cand;
                best_child[p] = Some(i);
            }
        }
    }
    let mut path = Vec::new();
    let mut cur = 0;
    while let Some(c) = best_child[cur] {
        path.push(c);
        cur = c;
    }
    path
}
