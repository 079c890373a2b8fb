//! The t-norm computation tree: hierarchical agglomerative clustering over
//! the classifier dissimilarity matrix, flat-cluster extraction, computation
//! graph execution and incremental leaf insertion.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SpoccError};
use crate::estimation::DependenceMatrix;
use crate::possibility::{tnorm_combine, PossibilityDistribution, TNormParam};

/// A node reference: leaves carry the classifier index they are bound to,
/// internal nodes are indexed into [`Dendrogram::internals`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeId {
    Leaf(usize),
    Internal(usize),
}

/// A binary merge: two children and the dissimilarity at which they fused.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InternalNode {
    pub children: [NodeId; 2],
    pub height: f64,
}

/// Binary t-norm computation tree with `K` leaves and `K - 1` internal
/// nodes; merge heights are non-decreasing from leaves to root and every
/// classifier index appears in exactly one leaf.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dendrogram {
    leaf_count: usize,
    internals: Vec<InternalNode>,
    root: NodeId,
}

/// Flat clusters cut from a dendrogram. `exact` is false when tied merge
/// heights made the requested count unattainable, in which case the nearest
/// attainable partition below is returned.
#[derive(Debug, Clone, PartialEq)]
pub struct Clustering {
    pub groups: Vec<Cluster>,
    pub attained: usize,
    pub exact: bool,
}

/// One flat cluster: the subtree root and the classifier indices below it,
/// sorted ascending.
#[derive(Debug, Clone, PartialEq)]
pub struct Cluster {
    pub root: NodeId,
    pub leaves: Vec<usize>,
}

/// Where an appended leaf landed.
#[derive(Debug, Clone, PartialEq)]
pub enum Placement {
    /// The leaf joined an existing cluster through a fresh internal node
    /// above that cluster's root. `inherited_from` names the internal node
    /// whose t-norm parameter the new node inherits; `None` when the cluster
    /// was a single leaf and there is no parameter to inherit.
    Joined {
        new_internal: usize,
        inherited_from: Option<usize>,
    },
    /// The leaf was too dissimilar from every cluster and now forms its own
    /// cluster under a fresh root; exactly one new t-norm parameter must be
    /// tuned.
    NewCluster { new_internal: usize },
}

impl Dendrogram {
    pub fn leaf_count(&self) -> usize {
        self.leaf_count
    }

    pub fn internal_count(&self) -> usize {
        self.internals.len()
    }

    pub fn internals(&self) -> &[InternalNode] {
        &self.internals
    }

    pub fn root(&self) -> NodeId {
        self.root
    }

    /// Classifier indices below a node, ascending.
    pub fn leaves_below(&self, node: NodeId) -> Vec<usize> {
        let mut leaves = Vec::new();
        let mut stack = vec![node];
        while let Some(n) = stack.pop() {
            match n {
                NodeId::Leaf(k) => leaves.push(k),
                NodeId::Internal(a) => stack.extend(self.internals[a].children),
            }
        }
        leaves.sort_unstable();
        leaves
    }

    /// Internal node whose child (either slot) is `node`.
    pub fn parent_of(&self, node: NodeId) -> Option<usize> {
        self.internals
            .iter()
            .position(|n| n.children.contains(&node))
    }

    /// Internal indices among the strict descendants of internal node `a`.
    pub fn internal_descendants(&self, a: usize) -> Vec<usize> {
        let mut out = Vec::new();
        let mut stack: Vec<NodeId> = self.internals[a].children.to_vec();
        while let Some(n) = stack.pop() {
            if let NodeId::Internal(b) = n {
                out.push(b);
                stack.extend(self.internals[b].children);
            }
        }
        out
    }

    /// Internal indices in children-before-parents order.
    pub fn post_order(&self) -> Vec<usize> {
        let mut order = Vec::with_capacity(self.internals.len());
        let mut stack = vec![(self.root, false)];
        while let Some((node, expanded)) = stack.pop() {
            if let NodeId::Internal(a) = node {
                if expanded {
                    order.push(a);
                } else {
                    stack.push((node, true));
                    for child in self.internals[a].children {
                        stack.push((child, false));
                    }
                }
            }
        }
        order
    }

    /// Structural sanity: leaf/internal counts, unique leaves, monotone
    /// merge heights along every path.
    pub fn validate(&self) -> Result<()> {
        if self.internals.len() + 1 != self.leaf_count {
            return Err(SpoccError::InvalidParameter(format!(
                "dendrogram has {} internal nodes for {} leaves",
                self.internals.len(),
                self.leaf_count
            )));
        }
        let leaves = self.leaves_below(self.root);
        if leaves != (0..self.leaf_count).collect::<Vec<_>>() {
            return Err(SpoccError::InvalidParameter(
                "dendrogram leaves do not cover the classifiers exactly once".into(),
            ));
        }
        for node in &self.internals {
            for child in node.children {
                if let NodeId::Internal(b) = child {
                    if self.internals[b].height > node.height {
                        return Err(SpoccError::InvalidParameter(
                            "merge heights decrease from leaf to root".into(),
                        ));
                    }
                }
            }
        }
        Ok(())
    }

    /// Cut the tree at the smallest threshold yielding exactly `n_c`
    /// subtrees. Tied merge heights can make a count unattainable; the
    /// partition for the nearest attainable count below is then returned
    /// with `exact = false`.
    pub fn clusters_at(&self, n_c: usize) -> Result<Clustering> {
        let k = self.leaf_count;
        if n_c == 0 || n_c > k {
            return Err(SpoccError::InvalidClusterCount {
                requested: n_c,
                max: k,
            });
        }
        // Remove whole groups of equal-height merges from the top; heights
        // are monotone along paths so the removed set stays closed under
        // parents.
        let mut by_height: Vec<usize> = (0..self.internals.len()).collect();
        by_height.sort_by(|&a, &b| {
            self.internals[b]
                .height
                .partial_cmp(&self.internals[a].height)
                .unwrap()
        });
        let mut removed = vec![false; self.internals.len()];
        let mut count = 1usize;
        let mut idx = 0;
        while idx < by_height.len() {
            let mut group_end = idx + 1;
            while group_end < by_height.len()
                && self.internals[by_height[group_end]].height
                    == self.internals[by_height[idx]].height
            {
                group_end += 1;
            }
            let group = group_end - idx;
            if count + group > n_c {
                break;
            }
            for &a in &by_height[idx..group_end] {
                removed[a] = true;
            }
            count += group;
            idx = group_end;
        }

        let mut groups = Vec::with_capacity(count);
        let mut roots: Vec<NodeId> = Vec::new();
        if !matches!(self.root, NodeId::Internal(a) if removed[a]) {
            roots.push(self.root);
        }
        for (a, node) in self.internals.iter().enumerate() {
            if removed[a] {
                for child in node.children {
                    if !matches!(child, NodeId::Internal(b) if removed[b]) {
                        roots.push(child);
                    }
                }
            }
        }
        for root in roots {
            groups.push(Cluster {
                leaves: self.leaves_below(root),
                root,
            });
        }
        groups.sort_by_key(|c| c.leaves[0]);
        Ok(Clustering {
            attained: count,
            exact: count == n_c,
            groups,
        })
    }

    /// Append a new leaf bound to classifier index `leaf_count`.
    ///
    /// Working clusters are the subtrees below the `threshold` cut. If the
    /// smallest dissimilarity from the new classifier to some cluster's
    /// members falls below the threshold, the leaf joins that cluster through
    /// a new internal node above the cluster root; otherwise a new root makes
    /// it a singleton cluster. Existing internal node indices are preserved.
    pub fn append_leaf(
        &self,
        new_dissims: &[f64],
        threshold: f64,
    ) -> Result<(Dendrogram, Placement)> {
        if !(0.0..=1.0).contains(&threshold) {
            return Err(SpoccError::InvalidThreshold(threshold));
        }
        if new_dissims.len() != self.leaf_count {
            return Err(SpoccError::LengthMismatch(
                self.leaf_count,
                new_dissims.len(),
            ));
        }
        let clusters = self.threshold_clusters(threshold);
        let (best, best_d) = clusters
            .iter()
            .map(|c| {
                c.leaves
                    .iter()
                    .map(|&k| new_dissims[k])
                    .fold(f64::INFINITY, f64::min)
            })
            .enumerate()
            .min_by(|(ia, da), (ib, db)| da.partial_cmp(db).unwrap().then(ia.cmp(ib)))
            .expect("at least one cluster");

        let new_leaf = NodeId::Leaf(self.leaf_count);
        let new_idx = self.internals.len();
        let mut internals = self.internals.clone();
        let mut root = self.root;

        let placement = if best_d < threshold {
            let cluster_root = clusters[best].root;
            let parent = self.parent_of(cluster_root);
            // Height keeps cophenetic monotonicity: an internal cluster root
            // passes its own height up, a bare leaf uses the join
            // dissimilarity capped by the old parent's height.
            let height = match cluster_root {
                NodeId::Internal(a) => self.internals[a].height,
                NodeId::Leaf(_) => match parent {
                    Some(p) => best_d.min(self.internals[p].height),
                    None => best_d,
                },
            };
            internals.push(InternalNode {
                children: [cluster_root, new_leaf],
                height,
            });
            match parent {
                Some(p) => {
                    let slot = internals[p]
                        .children
                        .iter()
                        .position(|&c| c == cluster_root)
                        .expect("parent holds the child");
                    internals[p].children[slot] = NodeId::Internal(new_idx);
                }
                None => root = NodeId::Internal(new_idx),
            }
            Placement::Joined {
                new_internal: new_idx,
                inherited_from: match cluster_root {
                    NodeId::Internal(a) => Some(a),
                    NodeId::Leaf(_) => None,
                },
            }
        } else {
            let old_root_height = match self.root {
                NodeId::Internal(a) => self.internals[a].height,
                NodeId::Leaf(_) => 0.0,
            };
            internals.push(InternalNode {
                children: [self.root, new_leaf],
                height: old_root_height.max(best_d.min(1.0)),
            });
            root = NodeId::Internal(new_idx);
            Placement::NewCluster {
                new_internal: new_idx,
            }
        };

        let appended = Dendrogram {
            leaf_count: self.leaf_count + 1,
            internals,
            root,
        };
        Ok((appended, placement))
    }

    /// Maximal subtrees whose internal merge heights all sit strictly below
    /// the threshold.
    fn threshold_clusters(&self, threshold: f64) -> Vec<Cluster> {
        let removed: Vec<bool> = self
            .internals
            .iter()
            .map(|n| n.height >= threshold)
            .collect();
        let mut roots = Vec::new();
        if !matches!(self.root, NodeId::Internal(a) if removed[a]) {
            roots.push(self.root);
        }
        for (a, node) in self.internals.iter().enumerate() {
            if removed[a] {
                for child in node.children {
                    if !matches!(child, NodeId::Internal(b) if removed[b]) {
                        roots.push(child);
                    }
                }
            }
        }
        let mut clusters: Vec<Cluster> = roots
            .into_iter()
            .map(|root| Cluster {
                leaves: self.leaves_below(root),
                root,
            })
            .collect();
        clusters.sort_by_key(|c| c.leaves[0]);
        clusters
    }
}

/// Average-linkage agglomerative clustering of the dissimilarity matrix.
/// Ties merge the lexicographically smallest pair of cluster ids (leaves
/// first, then merge order), so the tree is a pure function of the matrix.
pub fn hac(d: &DependenceMatrix) -> Result<Dendrogram> {
    let k = d.size();
    if k < 2 {
        return Err(SpoccError::TooFewClassifiers { needed: 2, got: k });
    }
    let total = 2 * k - 1;
    let mut dist = vec![0.0f64; total * total];
    for a in 0..k {
        for b in 0..k {
            dist[a * total + b] = d.get(a, b);
        }
    }
    let mut active: Vec<bool> = vec![true; total];
    active[k..].iter_mut().for_each(|a| *a = false);
    let mut sizes = vec![1usize; total];
    let mut nodes: Vec<NodeId> = (0..k).map(NodeId::Leaf).collect();
    nodes.resize(total, NodeId::Leaf(0));
    let mut internals: Vec<InternalNode> = Vec::with_capacity(k - 1);

    for step in 0..k - 1 {
        let mut best: Option<(usize, usize, f64)> = None;
        for a in 0..k + step {
            if !active[a] {
                continue;
            }
            for b in a + 1..k + step {
                if !active[b] {
                    continue;
                }
                let v = dist[a * total + b];
                if best.is_none_or(|(_, _, bv)| v < bv) {
                    best = Some((a, b, v));
                }
            }
        }
        let (a, b, height) = best.expect("at least two active clusters");
        let new_id = k + step;
        // Average linkage is monotone, but the Lance-Williams update can
        // land a hair below an earlier merge through rounding; pin the
        // recorded height so cophenetic monotonicity is exact.
        let children = [nodes[a], nodes[b]];
        let floor = children
            .iter()
            .filter_map(|c| match c {
                NodeId::Internal(idx) => Some(internals[*idx].height),
                NodeId::Leaf(_) => None,
            })
            .fold(f64::NEG_INFINITY, f64::max);
        internals.push(InternalNode {
            children,
            height: height.max(floor),
        });
        nodes[new_id] = NodeId::Internal(step);
        active[a] = false;
        active[b] = false;
        active[new_id] = true;
        sizes[new_id] = sizes[a] + sizes[b];
        for c in 0..new_id {
            if !active[c] {
                continue;
            }
            let merged = (sizes[a] as f64 * dist[a * total + c]
                + sizes[b] as f64 * dist[b * total + c])
                / sizes[new_id] as f64;
            dist[new_id * total + c] = merged;
            dist[c * total + new_id] = merged;
        }
    }

    let tree = Dendrogram {
        leaf_count: k,
        internals,
        root: NodeId::Internal(k - 2),
    };
    tree.validate()?;
    Ok(tree)
}

/// Execute the computation graph: every internal node combines its two
/// children elementwise with its own t-norm parameter, in post order; the
/// root value is the aggregated distribution.
pub fn execute(
    g: &Dendrogram,
    lambdas: &[TNormParam],
    leaf_dists: &[PossibilityDistribution],
) -> Result<PossibilityDistribution> {
    if lambdas.len() != g.internal_count() {
        return Err(SpoccError::LengthMismatch(
            g.internal_count(),
            lambdas.len(),
        ));
    }
    if leaf_dists.len() != g.leaf_count() {
        return Err(SpoccError::LengthMismatch(g.leaf_count(), leaf_dists.len()));
    }
    let mut values: Vec<Option<PossibilityDistribution>> = vec![None; g.internal_count()];
    for a in g.post_order() {
        let operands: Vec<PossibilityDistribution> = g.internals()[a]
            .children
            .iter()
            .map(|child| match child {
                NodeId::Leaf(k) => leaf_dists[*k].clone(),
                NodeId::Internal(b) => values[*b].clone().expect("post order"),
            })
            .collect();
        values[a] = Some(tnorm_combine(lambdas[a], &operands)?);
    }
    match g.root() {
        NodeId::Internal(a) => Ok(values[a].take().expect("root evaluated")),
        NodeId::Leaf(k) => Ok(leaf_dists[k].clone()),
    }
}
