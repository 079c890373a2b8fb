//! Synthetic 2-D benchmark: the four-Gaussian quadrant generator, subset
//! splitting protocols, small base learners and the perturbation models
//! used by the robustness experiments.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal as GaussCdf};

use crate::error::{Result, SpoccError};
use crate::optim;
use crate::possibility::LabelSpace;

/// Four isotropic Gaussians at the corners of a centered square of
/// half-side `half_side`. Corners on the main diagonal generate class 0,
/// the anti-diagonal corners class 1; `beta` is the total probability of
/// class 0 (0.5 balanced).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianQuadrantConfig {
    pub half_side: f64,
    pub sigma: f64,
    pub n: usize,
    pub beta: f64,
}

impl GaussianQuadrantConfig {
    pub fn balanced(half_side: f64, n: usize) -> Self {
        GaussianQuadrantConfig {
            half_side,
            sigma: 1.0,
            n,
            beta: 0.5,
        }
    }
}

/// A labeled 2-D dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub points: Vec<[f64; 2]>,
    pub labels: Vec<usize>,
    pub label_space: LabelSpace,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

pub fn binary_label_space() -> LabelSpace {
    LabelSpace::new(vec!["w1", "w2"]).unwrap()
}

/// Quadrant index of a point: 0 = (+,+), 1 = (-,+), 2 = (-,-), 3 = (+,-).
pub fn quadrant(x: [f64; 2]) -> usize {
    match (x[0] >= 0.0, x[1] >= 0.0) {
        (true, true) => 0,
        (false, true) => 1,
        (false, false) => 2,
        (true, false) => 3,
    }
}

const CORNER_SIGNS: [[f64; 2]; 4] = [[1.0, 1.0], [-1.0, 1.0], [-1.0, -1.0], [1.0, -1.0]];

/// Class of the generating corner: quadrants 0 and 2 are class 0.
fn corner_class(corner: usize) -> usize {
    corner & 1
}

/// Sample one point: pick a corner (class-0 corners carry `beta` total
/// mass), then draw the isotropic Gaussian around it.
pub fn sample_point<R: Rng + ?Sized>(
    config: &GaussianQuadrantConfig,
    rng: &mut R,
) -> ([f64; 2], usize) {
    let u: f64 = rng.random();
    let corner = if u < config.beta {
        if u < config.beta / 2.0 {
            0
        } else {
            2
        }
    } else {
        let v = u - config.beta;
        if v < (1.0 - config.beta) / 2.0 {
            1
        } else {
            3
        }
    };
    let normal = Normal::new(0.0, config.sigma).expect("sigma > 0");
    let x = [
        CORNER_SIGNS[corner][0] * config.half_side + normal.sample(rng),
        CORNER_SIGNS[corner][1] * config.half_side + normal.sample(rng),
    ];
    (x, corner_class(corner))
}

/// Generate a full dataset from the config.
pub fn generate<R: Rng + ?Sized>(config: &GaussianQuadrantConfig, rng: &mut R) -> Dataset {
    let mut points = Vec::with_capacity(config.n);
    let mut labels = Vec::with_capacity(config.n);
    for _ in 0..config.n {
        let (x, y) = sample_point(config, rng);
        points.push(x);
        labels.push(y);
    }
    Dataset {
        points,
        labels,
        label_space: binary_label_space(),
    }
}

/// The generator's optimal decision rule: class 0 iff the coordinates share
/// a sign.
pub fn optimal_rule(x: [f64; 2]) -> usize {
    usize::from(x[0] * x[1] < 0.0)
}

/// Exact accuracy of the optimal rule for a given half-side in the balanced
/// case: `Phi(c)^2 + (1 - Phi(c))^2`.
pub fn optimal_accuracy(half_side: f64) -> f64 {
    let phi = GaussCdf::standard().cdf(half_side);
    phi * phi + (1.0 - phi) * (1.0 - phi)
}

/// Solve `optimal_accuracy(c) = target` for the square half-side by
/// bisection; a target of 0.8752 lands near c = 1.50.
pub fn calibrate_half_side(target_optimal_accuracy: f64) -> Result<f64> {
    if !(target_optimal_accuracy > 0.5 && target_optimal_accuracy < 1.0) {
        return Err(SpoccError::InvalidParameter(format!(
            "target optimal accuracy must be in (0.5, 1), got {target_optimal_accuracy}"
        )));
    }
    let mut lo = 0.0f64;
    let mut hi = 10.0f64;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if optimal_accuracy(mid) < target_optimal_accuracy {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// The four overlapping training subsets: subset `k` holds every point that
/// does not lie in the quadrant diagonally opposite quadrant `k`, so each
/// subset covers three quadrants and adjacent subsets overlap.
pub fn split_overlapping(dataset: &Dataset) -> [Vec<usize>; 4] {
    let mut subsets: [Vec<usize>; 4] = Default::default();
    for (i, &x) in dataset.points.iter().enumerate() {
        let q = quadrant(x);
        for (k, subset) in subsets.iter_mut().enumerate() {
            if q != (k + 2) % 4 {
                subset.push(i);
            }
        }
    }
    subsets
}

/// Per-class PCA split into `m` contiguous blocks along the top principal
/// direction; subset `s` is the union over classes of block `s`. Integer
/// remainders go to the final block, so subsets partition the data exactly.
pub fn pca_split(dataset: &Dataset, m: usize) -> Result<Vec<Vec<usize>>> {
    if m < 2 {
        return Err(SpoccError::InvalidParameter(
            "pca split needs at least 2 subsets".into(),
        ));
    }
    let labels = dataset.label_space.count();
    let mut subsets: Vec<Vec<usize>> = vec![Vec::new(); m];
    for class in 0..labels {
        let members: Vec<usize> = (0..dataset.len())
            .filter(|&i| dataset.labels[i] == class)
            .collect();
        if members.is_empty() {
            continue;
        }
        if members.len() < m {
            return Err(SpoccError::InvalidParameter(format!(
                "class {class} has {} points, fewer than {m} subsets",
                members.len()
            )));
        }
        let axis = principal_axis(&members, &dataset.points);
        let mut projected: Vec<(f64, usize)> = members
            .iter()
            .map(|&i| {
                let p = dataset.points[i];
                (p[0] * axis[0] + p[1] * axis[1], i)
            })
            .collect();
        projected.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let block = members.len() / m;
        for (rank, &(_, i)) in projected.iter().enumerate() {
            let s = (rank / block).min(m - 1);
            subsets[s].push(i);
        }
    }
    Ok(subsets)
}

/// Top eigenvector of the 2x2 covariance matrix of the selected points.
fn principal_axis(members: &[usize], points: &[[f64; 2]]) -> [f64; 2] {
    let n = members.len() as f64;
    let mean = members.iter().fold([0.0, 0.0], |acc, &i| {
        [acc[0] + points[i][0] / n, acc[1] + points[i][1] / n]
    });
    let (mut a, mut b, mut c) = (0.0, 0.0, 0.0);
    for &i in members {
        let dx = points[i][0] - mean[0];
        let dy = points[i][1] - mean[1];
        a += dx * dx;
        b += dx * dy;
        c += dy * dy;
    }
    if b.abs() < 1e-12 {
        return if a >= c { [1.0, 0.0] } else { [0.0, 1.0] };
    }
    let lambda = 0.5 * ((a + c) + ((a - c) * (a - c) + 4.0 * b * b).sqrt());
    let v = [lambda - c, b];
    let norm = (v[0] * v[0] + v[1] * v[1]).sqrt();
    [v[0] / norm, v[1] / norm]
}

// ---------------------------------------------------------------------------
// Base learners
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub enum TreeNode {
    Leaf(usize),
    Split {
        feature: usize,
        threshold: f64,
        left: Box<TreeNode>,
        right: Box<TreeNode>,
    },
}

/// A trained base classifier over 2-D inputs.
#[derive(Debug, Clone, PartialEq)]
pub enum BaseClassifier {
    /// Axis-aligned decision tree of depth at most two, grown by greedy
    /// Gini splits with midpoint thresholds.
    DepthTwoTree { root: TreeNode },
    /// Softmax regression on the raw coordinates.
    Logistic { weights: Vec<f64>, classes: usize },
    /// Majority vote of the nearest stored points (Euclidean, distance ties
    /// by index).
    Knn {
        points: Vec<[f64; 2]>,
        labels: Vec<usize>,
        neighbors: usize,
        classes: usize,
    },
}

impl BaseClassifier {
    pub fn predict(&self, x: [f64; 2]) -> usize {
        match self {
            BaseClassifier::DepthTwoTree { root } => {
                let mut node = root;
                loop {
                    match node {
                        TreeNode::Leaf(label) => return *label,
                        TreeNode::Split {
                            feature,
                            threshold,
                            left,
                            right,
                        } => {
                            node = if x[*feature] <= *threshold {
                                left
                            } else {
                                right
                            };
                        }
                    }
                }
            }
            BaseClassifier::Logistic { weights, classes } => {
                let scores = optim::softmax_scores(weights, 2, *classes, &x);
                let mut best = 0;
                for c in 1..*classes {
                    if scores[c] > scores[best] {
                        best = c;
                    }
                }
                best
            }
            BaseClassifier::Knn {
                points,
                labels,
                neighbors,
                classes,
            } => {
                let mut order: Vec<usize> = (0..points.len()).collect();
                order.sort_by(|&i, &j| {
                    let di = sq_dist(points[i], x);
                    let dj = sq_dist(points[j], x);
                    di.partial_cmp(&dj).unwrap().then(i.cmp(&j))
                });
                let mut votes = vec![0usize; *classes];
                for &i in order.iter().take(*neighbors) {
                    votes[labels[i]] += 1;
                }
                let mut best = 0;
                for c in 1..*classes {
                    if votes[c] > votes[best] {
                        best = c;
                    }
                }
                best
            }
        }
    }
}

fn sq_dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    dx * dx + dy * dy
}

fn majority_label(labels: &[usize], members: &[usize], classes: usize) -> usize {
    let mut counts = vec![0usize; classes];
    for &i in members {
        counts[labels[i]] += 1;
    }
    let mut best = 0;
    for c in 1..classes {
        if counts[c] > counts[best] {
            best = c;
        }
    }
    best
}

fn gini(counts: &[usize], total: usize) -> f64 {
    if total == 0 {
        return 0.0;
    }
    let mut sum = 0.0;
    for &c in counts {
        let p = c as f64 / total as f64;
        sum += p * p;
    }
    1.0 - sum
}

fn best_split(
    points: &[[f64; 2]],
    labels: &[usize],
    members: &[usize],
    classes: usize,
) -> Option<(usize, f64)> {
    let total = members.len();
    let parent_gini = {
        let mut counts = vec![0usize; classes];
        for &i in members {
            counts[labels[i]] += 1;
        }
        gini(&counts, total)
    };
    let mut best: Option<(usize, f64, f64)> = None;
    for feature in 0..2 {
        let mut sorted: Vec<usize> = members.to_vec();
        sorted.sort_by(|&i, &j| {
            points[i][feature]
                .partial_cmp(&points[j][feature])
                .unwrap()
                .then(i.cmp(&j))
        });
        let mut left_counts = vec![0usize; classes];
        let mut right_counts = vec![0usize; classes];
        for &i in &sorted {
            right_counts[labels[i]] += 1;
        }
        let mut leftn = 0usize;
        for w in 0..sorted.len() - 1 {
            let i = sorted[w];
            left_counts[labels[i]] += 1;
            right_counts[labels[i]] -= 1;
            leftn += 1;
            let a = points[i][feature];
            let b = points[sorted[w + 1]][feature];
            if a == b {
                continue;
            }
            let threshold = 0.5 * (a + b);
            let weighted = (leftn as f64 * gini(&left_counts, leftn)
                + (total - leftn) as f64 * gini(&right_counts, total - leftn))
                / total as f64;
            if weighted + 1e-12 < parent_gini && best.is_none_or(|(_, _, bw)| weighted < bw) {
                best = Some((feature, threshold, weighted));
            }
        }
    }
    best.map(|(f, t, _)| (f, t))
}

fn grow_tree(
    points: &[[f64; 2]],
    labels: &[usize],
    members: &[usize],
    classes: usize,
    depth: usize,
) -> TreeNode {
    let first = members.first().map(|&i| labels[i]);
    let pure = members.iter().all(|&i| Some(labels[i]) == first);
    if depth == 2 || pure || members.len() < 2 {
        return TreeNode::Leaf(majority_label(labels, members, classes));
    }
    match best_split(points, labels, members, classes) {
        None => TreeNode::Leaf(majority_label(labels, members, classes)),
        Some((feature, threshold)) => {
            let (left, right): (Vec<usize>, Vec<usize>) = members
                .iter()
                .partition(|&&i| points[i][feature] <= threshold);
            TreeNode::Split {
                feature,
                threshold,
                left: Box::new(grow_tree(points, labels, &left, classes, depth + 1)),
                right: Box::new(grow_tree(points, labels, &right, classes, depth + 1)),
            }
        }
    }
}

/// Greedy Gini decision tree of maximal depth two. A single-class or empty
/// subset yields a constant classifier.
pub fn train_depth2_tree(points: &[[f64; 2]], labels: &[usize], classes: usize) -> BaseClassifier {
    let members: Vec<usize> = (0..labels.len()).collect();
    if members.is_empty() {
        return BaseClassifier::DepthTwoTree {
            root: TreeNode::Leaf(0),
        };
    }
    BaseClassifier::DepthTwoTree {
        root: grow_tree(points, labels, &members, classes, 0),
    }
}

/// Softmax regression base learner on the raw 2-D features.
pub fn train_logistic(
    points: &[[f64; 2]],
    labels: &[usize],
    classes: usize,
    l2: f64,
) -> BaseClassifier {
    let xs: Vec<f64> = points.iter().flat_map(|p| p.to_vec()).collect();
    let fit = optim::fit(&xs, labels, 2, classes, l2, None);
    BaseClassifier::Logistic {
        weights: fit.weights,
        classes,
    }
}

/// Nearest-neighbour base learner storing its training set.
pub fn train_knn(
    points: &[[f64; 2]],
    labels: &[usize],
    classes: usize,
    neighbors: usize,
) -> BaseClassifier {
    BaseClassifier::Knn {
        points: points.to_vec(),
        labels: labels.to_vec(),
        neighbors,
        classes,
    }
}

// ---------------------------------------------------------------------------
// Perturbation models
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PerturbKind {
    /// With probability theta, replace the prediction by a uniformly random
    /// different label.
    Adversarial,
    /// With probability theta, replace the prediction by a uniformly random
    /// label (which may coincide).
    Fault,
    /// Exact copy; theta is ignored.
    Clone,
}

/// How to derive extra ensemble members from a source classifier.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerturbationSpec {
    pub kind: PerturbKind,
    pub theta: f64,
    pub source: usize,
    pub copies: usize,
}

/// Perturb one prediction.
pub fn perturb_label<R: Rng + ?Sized>(
    label: usize,
    kind: PerturbKind,
    theta: f64,
    labels: usize,
    rng: &mut R,
) -> usize {
    match kind {
        PerturbKind::Clone => label,
        PerturbKind::Adversarial => {
            if rng.random::<f64>() < theta {
                (label + 1 + rng.random_range(0..labels - 1)) % labels
            } else {
                label
            }
        }
        PerturbKind::Fault => {
            if rng.random::<f64>() < theta {
                rng.random_range(0..labels)
            } else {
                label
            }
        }
    }
}

/// Perturb a whole prediction column.
pub fn perturb_column<R: Rng + ?Sized>(
    column: &[usize],
    kind: PerturbKind,
    theta: f64,
    labels: usize,
    rng: &mut R,
) -> Vec<usize> {
    column
        .iter()
        .map(|&label| perturb_label(label, kind, theta, labels, rng))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn generator_class_frequencies() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let config = GaussianQuadrantConfig::balanced(1.5, 1_000_000);
        let data = generate(&config, &mut rng);
        let class0 = data.labels.iter().filter(|&&y| y == 0).count() as f64;
        assert!((class0 / 1e6 - 0.5).abs() < 0.002);
    }

    #[test]
    fn generator_beta_controls_imbalance() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let config = GaussianQuadrantConfig {
            half_side: 1.5,
            sigma: 1.0,
            n: 200_000,
            beta: 0.1,
        };
        let data = generate(&config, &mut rng);
        let class0 = data.labels.iter().filter(|&&y| y == 0).count() as f64;
        assert!((class0 / 2e5 - 0.1).abs() < 0.005);
    }

    #[test]
    fn degenerate_sigma_separates_perfectly() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let config = GaussianQuadrantConfig {
            half_side: 1.5,
            sigma: 1e-6,
            n: 5000,
            beta: 0.5,
        };
        let data = generate(&config, &mut rng);
        let correct = data
            .points
            .iter()
            .zip(&data.labels)
            .filter(|(&x, &y)| optimal_rule(x) == y)
            .count();
        assert_eq!(correct, 5000);
    }

    #[test]
    fn calibration_matches_analytic_accuracy() {
        let c = calibrate_half_side(0.8752).unwrap();
        assert!((c - 1.50).abs() < 0.01, "calibrated half-side {c}");
        assert!((optimal_accuracy(c) - 0.8752).abs() < 1e-9);
        assert!(calibrate_half_side(0.4).is_err());
        assert!(calibrate_half_side(1.0).is_err());
        // Degenerate targets push the half-side toward the extremes.
        assert!(calibrate_half_side(0.500001).unwrap() < 0.01);
        assert!(calibrate_half_side(0.999999).unwrap() > 3.0);
    }

    #[test]
    fn calibration_cross_checked_by_monte_carlo() {
        let c = calibrate_half_side(0.8752).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let config = GaussianQuadrantConfig::balanced(c, 2_000_000);
        let data = generate(&config, &mut rng);
        let correct = data
            .points
            .iter()
            .zip(&data.labels)
            .filter(|(&x, &y)| optimal_rule(x) == y)
            .count() as f64;
        assert!((correct / 2e6 - 0.8752).abs() < 0.001);
    }

    #[test]
    fn overlapping_subsets_cover_and_overlap() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let config = GaussianQuadrantConfig::balanced(1.5, 2000);
        let data = generate(&config, &mut rng);
        let subsets = split_overlapping(&data);
        // A point in quadrant 0 (I) belongs to every subset except the one
        // excluding quadrant I, which is subset 2.
        for (i, &x) in data.points.iter().enumerate() {
            let q = quadrant(x);
            for (k, subset) in subsets.iter().enumerate() {
                let contains = subset.contains(&i);
                assert_eq!(contains, q != (k + 2) % 4);
            }
        }
        // Union covers everything; each point sits in exactly 3 subsets.
        let total: usize = subsets.iter().map(|s| s.len()).sum();
        assert_eq!(total, 3 * data.len());
    }

    #[test]
    fn subset_trees_recover_quadrant_predictors() {
        // With well-separated clusters, the depth-2 tree trained on three
        // quadrants isolates the lone class-0 quadrant it can see.
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let config = GaussianQuadrantConfig {
            half_side: 1.5,
            sigma: 0.1,
            n: 4000,
            beta: 0.5,
        };
        let data = generate(&config, &mut rng);
        let subsets = split_overlapping(&data);
        // Subset 0 excludes quadrant III, so its tree should predict class 0
        // exactly on quadrant I.
        let points: Vec<[f64; 2]> = subsets[0].iter().map(|&i| data.points[i]).collect();
        let labels: Vec<usize> = subsets[0].iter().map(|&i| data.labels[i]).collect();
        let tree = train_depth2_tree(&points, &labels, 2);
        let cases = [
            ([1.5, 1.5], 0),
            ([-1.5, 1.5], 1),
            ([1.5, -1.5], 1),
            ([-1.5, -1.5], 1), // unseen quadrant extrapolates to class 1
        ];
        for (x, expected) in cases {
            assert_eq!(tree.predict(x), expected, "at {x:?}");
        }
    }

    #[test]
    fn pca_split_partitions_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let config = GaussianQuadrantConfig::balanced(1.5, 1501);
        let data = generate(&config, &mut rng);
        for m in [2, 3, 6] {
            let subsets = pca_split(&data, m).unwrap();
            let mut seen: Vec<usize> = subsets.iter().flatten().copied().collect();
            seen.sort_unstable();
            assert_eq!(seen, (0..data.len()).collect::<Vec<_>>());
        }
        assert!(pca_split(&data, 1).is_err());
    }

    #[test]
    fn pca_split_blocks_follow_principal_axis() {
        // A class stretched along x1: the first block is the left half.
        let points: Vec<[f64; 2]> = (0..100)
            .map(|i| [i as f64, (i % 7) as f64 * 0.01])
            .collect();
        let labels = vec![0usize; 50]
            .into_iter()
            .chain(vec![1; 50])
            .collect::<Vec<_>>();
        let data = Dataset {
            points,
            labels,
            label_space: binary_label_space(),
        };
        let subsets = pca_split(&data, 2).unwrap();
        for &i in &subsets[0] {
            let class = data.labels[i];
            let class_points: Vec<f64> = (0..100)
                .filter(|&j| data.labels[j] == class)
                .map(|j| data.points[j][0])
                .collect();
            let median = class_points[class_points.len() / 2];
            assert!(data.points[i][0] <= median + 1e-9);
        }
    }

    #[test]
    fn pca_split_produces_non_iid_subsets() {
        // Location shift between the first and last block along the
        // principal axis: a two-sample z-test on projections rejects
        // decisively.
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let config = GaussianQuadrantConfig::balanced(1.5, 3000);
        let data = generate(&config, &mut rng);
        let m = 3;
        let subsets = pca_split(&data, m).unwrap();
        let proj =
            |idx: &Vec<usize>| -> Vec<f64> { idx.iter().map(|&i| data.points[i][0]).collect() };
        let a = proj(&subsets[0]);
        let b = proj(&subsets[m - 1]);
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        let var = |v: &[f64], mu: f64| {
            v.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / (v.len() - 1) as f64
        };
        let (ma, mb) = (mean(&a), mean(&b));
        let z =
            (ma - mb).abs() / (var(&a, ma) / a.len() as f64 + var(&b, mb) / b.len() as f64).sqrt();
        // z beyond 2.576 rejects equality of locations at p < 0.01.
        assert!(z > 2.576, "projection locations indistinguishable, z = {z}");
    }

    #[test]
    fn logistic_underfits_xor_quadrants() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let config = GaussianQuadrantConfig::balanced(1.5, 2000);
        let data = generate(&config, &mut rng);
        let model = train_logistic(&data.points, &data.labels, 2, 1.0);
        let correct = data
            .points
            .iter()
            .zip(&data.labels)
            .filter(|(&x, &y)| model.predict(x) == y)
            .count() as f64;
        let acc = correct / data.len() as f64;
        assert!(
            acc < 0.62,
            "a linear model should underfit the quadrant data, got {acc}"
        );
    }

    #[test]
    fn knn_single_neighbor_memorizes() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let config = GaussianQuadrantConfig::balanced(1.5, 300);
        let data = generate(&config, &mut rng);
        let model = train_knn(&data.points, &data.labels, 2, 1);
        for (x, &y) in data.points.iter().zip(&data.labels) {
            assert_eq!(model.predict(*x), y);
        }
    }

    #[test]
    fn perturbations_match_their_definitions() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let column: Vec<usize> = (0..5000).map(|i| i % 2).collect();
        // Binary adversarial with theta = 1 flips every prediction.
        let flipped = perturb_column(&column, PerturbKind::Adversarial, 1.0, 2, &mut rng);
        assert!(column.iter().zip(&flipped).all(|(&a, &b)| b == 1 - a));
        // Fault with theta = 1 is a uniform random column: error rate near
        // (labels - 1) / labels against any fixed target.
        let noise = perturb_column(&column, PerturbKind::Fault, 1.0, 4, &mut rng);
        let err = column.iter().zip(&noise).filter(|(&a, &b)| a != b).count() as f64 / 5000.0;
        assert!((err - 0.75).abs() < 0.03, "fault error {err}");
        // Clone is bitwise equal.
        let copy = perturb_column(&column, PerturbKind::Clone, 0.7, 2, &mut rng);
        assert_eq!(copy, column);
    }

    #[test]
    fn adversarial_theta_increases_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let c = calibrate_half_side(0.8752).unwrap();
        for seed in 0..10u64 {
            let mut seed_rng = ChaCha8Rng::seed_from_u64(seed);
            let config = GaussianQuadrantConfig::balanced(c, 4000);
            let data = generate(&config, &mut seed_rng);
            let tree = train_depth2_tree(&data.points, &data.labels, 2);
            let preds: Vec<usize> = data.points.iter().map(|&x| tree.predict(x)).collect();
            let base_err = preds
                .iter()
                .zip(&data.labels)
                .filter(|(&p, &y)| p != y)
                .count() as f64
                / data.len() as f64;
            let perturbed = perturb_column(&preds, PerturbKind::Adversarial, 0.5, 2, &mut rng);
            let adv_err = perturbed
                .iter()
                .zip(&data.labels)
                .filter(|(&p, &y)| p != y)
                .count() as f64
                / data.len() as f64;
            assert!(
                adv_err > base_err,
                "seed {seed}: adversarial error {adv_err} not above {base_err}"
            );
        }
    }

    #[test]
    fn label_parity_consistency() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let config = GaussianQuadrantConfig::balanced(2.0, 1000);
        for _ in 0..1000 {
            let (_, y) = sample_point(&config, &mut rng);
            assert!(y < 2);
        }
        // Deterministic under seed.
        let mut a = ChaCha8Rng::seed_from_u64(99);
        let mut b = ChaCha8Rng::seed_from_u64(99);
        assert_eq!(generate(&config, &mut a), generate(&config, &mut b));
    }
}
