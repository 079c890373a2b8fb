//! Possibility distributions, the Dubois-Prade transform, Aczel-Alsina
//! t-norms, discounting and argmax decisions.
//!
//! All operations here are pure functions over immutable values; the only
//! mutable state is the caller-owned random stream used to break decision
//! ties.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SpoccError};

/// Possibility values below this floor are treated as exact zeros before
/// taking logarithms, avoiding subnormal-float pathologies in `ln`.
pub const POSSIBILITY_FLOOR: f64 = 1e-300;

/// Tolerance under which a distribution counts as normalized (max entry 1).
pub const NORMALIZATION_TOL: f64 = 1e-9;

/// The finite set of class labels; index `0..count` is the canonical
/// identifier everywhere in this crate.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LabelSpace {
    names: Vec<String>,
}

impl<'de> Deserialize<'de> for LabelSpace {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Repr {
            names: Vec<String>,
        }
        let repr = Repr::deserialize(d)?;
        LabelSpace::new(repr.names).map_err(serde::de::Error::custom)
    }
}

impl LabelSpace {
    /// Build a label space from at least two distinct names.
    pub fn new<S: Into<String>>(names: Vec<S>) -> Result<Self> {
        let names: Vec<String> = names.into_iter().map(Into::into).collect();
        if names.len() < 2 {
            return Err(SpoccError::LabelSpaceTooSmall(names.len()));
        }
        for (i, name) in names.iter().enumerate() {
            if names[..i].contains(name) {
                return Err(SpoccError::DuplicateLabel(name.clone()));
            }
        }
        Ok(LabelSpace { names })
    }

    /// Number of labels.
    pub fn count(&self) -> usize {
        self.names.len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn name(&self, index: usize) -> &str {
        &self.names[index]
    }

    /// Resolve a label name to its canonical index.
    pub fn index_of(&self, name: &str) -> Result<usize> {
        self.names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| SpoccError::UnknownLabel {
                name: name.to_string(),
                known: self.names.join(", "),
            })
    }
}

/// A probability distribution over the label space: non-negative masses
/// summing to 1 within `1e-9`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityDistribution {
    mass: Vec<f64>,
}

impl ProbabilityDistribution {
    pub fn new(mass: Vec<f64>) -> Result<Self> {
        for (index, &value) in mass.iter().enumerate() {
            if value < 0.0 || !value.is_finite() {
                return Err(SpoccError::NegativeMass { index, value });
            }
        }
        let sum: f64 = mass.iter().sum();
        if (sum - 1.0).abs() > NORMALIZATION_TOL {
            return Err(SpoccError::NotNormalized(sum));
        }
        Ok(ProbabilityDistribution { mass })
    }

    pub fn mass(&self) -> &[f64] {
        &self.mass
    }

    pub fn len(&self) -> usize {
        self.mass.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mass.is_empty()
    }
}

/// A possibility distribution over the label space: entries in `[0, 1]`.
///
/// Outputs of [`dpt`] and [`discount`] are normalized (max entry 1);
/// aggregated distributions may be subnormal or identically zero.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct PossibilityDistribution {
    values: Vec<f64>,
}

impl<'de> Deserialize<'de> for PossibilityDistribution {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let values = Vec::<f64>::deserialize(d)?;
        PossibilityDistribution::new(values).map_err(serde::de::Error::custom)
    }
}

impl PossibilityDistribution {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        for (index, &value) in values.iter().enumerate() {
            if !(0.0..=1.0).contains(&value) || !value.is_finite() {
                return Err(SpoccError::OutOfUnitRange { index, value });
            }
        }
        Ok(PossibilityDistribution { values })
    }

    /// The vacuous distribution: every label fully possible.
    pub fn vacuous(len: usize) -> Self {
        PossibilityDistribution {
            values: vec![1.0; len],
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// True when the max entry is 1 within [`NORMALIZATION_TOL`].
    pub fn is_normalized(&self) -> bool {
        self.values.iter().fold(0.0_f64, |m, &v| m.max(v)) >= 1.0 - NORMALIZATION_TOL
    }
}

/// Parameter of the Aczel-Alsina t-norm family: a real `lambda >= 1`, with
/// infinity (elementwise minimum) as a distinguished symbolic value that is
/// never pushed through the exponential formula.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TNormParam {
    Finite(f64),
    Infinite,
}

impl TNormParam {
    pub fn finite(lambda: f64) -> Result<Self> {
        if !(lambda >= 1.0) || !lambda.is_finite() {
            return Err(SpoccError::InvalidLambda(lambda));
        }
        Ok(TNormParam::Finite(lambda))
    }

    pub fn is_infinite(&self) -> bool {
        matches!(self, TNormParam::Infinite)
    }
}

impl PartialOrd for TNormParam {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        use std::cmp::Ordering;
        match (self, other) {
            (TNormParam::Finite(a), TNormParam::Finite(b)) => a.partial_cmp(b),
            (TNormParam::Finite(_), TNormParam::Infinite) => Some(Ordering::Less),
            (TNormParam::Infinite, TNormParam::Finite(_)) => Some(Ordering::Greater),
            (TNormParam::Infinite, TNormParam::Infinite) => Some(Ordering::Equal),
        }
    }
}

impl Serialize for TNormParam {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            TNormParam::Finite(x) => s.serialize_f64(*x),
            TNormParam::Infinite => s.serialize_str("inf"),
        }
    }
}

impl<'de> Deserialize<'de> for TNormParam {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Num(f64),
            Word(String),
        }
        match Repr::deserialize(d)? {
            Repr::Num(x) => TNormParam::finite(x).map_err(serde::de::Error::custom),
            Repr::Word(w) if w == "inf" => Ok(TNormParam::Infinite),
            Repr::Word(w) => Err(serde::de::Error::custom(format!(
                "expected a number or \"inf\", got \"{w}\""
            ))),
        }
    }
}

/// Dubois-Prade transform of a probability distribution.
///
/// Masses are ranked in descending order (stable, ties broken by ascending
/// label index); the top-ranked label gets possibility 1, equal masses share
/// the possibility of their predecessor, and any other rank `i` receives the
/// tail sum of masses from rank `i` on. The result is normalized, consistent
/// (the induced possibility measure dominates the probability of every
/// subset) and preference-preserving, and it is the most specific such
/// distribution.
pub fn dpt(p: &ProbabilityDistribution) -> PossibilityDistribution {
    let n = p.len();
    let mut order: Vec<usize> = (0..n).collect();
    // Descending by mass; the stable sort keeps ascending label index on ties.
    order.sort_by(|&a, &b| p.mass[b].partial_cmp(&p.mass[a]).unwrap());

    // Tail sums accumulated from the smallest mass up, so that equal-exponent
    // additions stay exact on the worked examples.
    let mut tail = vec![0.0; n];
    let mut acc = 0.0;
    for i in (0..n).rev() {
        acc += p.mass[order[i]];
        tail[i] = acc;
    }

    let mut values = vec![0.0; n];
    for i in 0..n {
        let label = order[i];
        values[label] = if i == 0 {
            1.0
        } else if p.mass[label] == p.mass[order[i - 1]] {
            values[order[i - 1]]
        } else {
            tail[i].min(1.0)
        };
    }
    PossibilityDistribution { values }
}

/// `|ln v|` with the sub-floor clamp; zero maps to positive infinity so the
/// absorbing element falls out of the norm computation naturally.
#[inline]
fn abs_log(v: f64) -> f64 {
    if v < POSSIBILITY_FLOOR {
        f64::INFINITY
    } else if v >= 1.0 {
        0.0
    } else {
        -v.ln()
    }
}

/// Lambda-norm of the non-zero `|ln|` magnitudes, scaled by the maximum so
/// intermediate powers cannot overflow.
#[inline]
pub(crate) fn lambda_norm(ts: &[f64], lambda: f64) -> f64 {
    let m = ts.iter().fold(0.0_f64, |m, &t| m.max(t));
    if m == 0.0 || m.is_infinite() {
        return m;
    }
    if lambda == 1.0 {
        return ts.iter().sum();
    }
    let sum: f64 = ts.iter().map(|&t| (t / m).powf(lambda)).sum();
    m * sum.powf(1.0 / lambda)
}

fn tnorm_values(lambda: TNormParam, operands: &[f64]) -> f64 {
    match lambda {
        TNormParam::Infinite => operands.iter().fold(1.0_f64, |m, &v| m.min(v)),
        TNormParam::Finite(l) => {
            if l == 1.0 {
                return operands.iter().product();
            }
            if operands.iter().any(|&v| v < POSSIBILITY_FLOOR) {
                return 0.0;
            }
            // Neutral operands (value 1) contribute nothing; with a single
            // effective operand the result is that operand, exactly.
            let ts: Vec<f64> = operands
                .iter()
                .map(|&v| abs_log(v))
                .filter(|&t| t > 0.0)
                .collect();
            match ts.len() {
                0 => 1.0,
                1 => *operands.iter().find(|&&v| v < 1.0).unwrap(),
                _ => (-lambda_norm(&ts, l)).exp(),
            }
        }
    }
}

/// Binary Aczel-Alsina t-norm `exp(-(|ln a|^lambda + |ln b|^lambda)^(1/lambda))`.
///
/// Commutative, monotone in both arguments, bounded by `min(a, b)`, with
/// neutral element 1 and absorbing element 0. `lambda = 1` is the product,
/// the symbolic infinity is the minimum.
pub fn tnorm_scalar(lambda: TNormParam, a: f64, b: f64) -> f64 {
    debug_assert!((0.0..=1.0).contains(&a) && (0.0..=1.0).contains(&b));
    tnorm_values(lambda, &[a, b])
}

/// Elementwise k-ary Aczel-Alsina combination of possibility distributions.
///
/// The family is associative, so the k-ary result does not depend on any
/// pairwise fold order; it is computed directly from the lambda-norm of all
/// operands. A single-element list is returned unchanged.
pub fn tnorm_combine(
    lambda: TNormParam,
    dists: &[PossibilityDistribution],
) -> Result<PossibilityDistribution> {
    let first = dists.first().ok_or(SpoccError::EmptySubset)?;
    let len = first.len();
    for d in dists {
        if d.len() != len {
            return Err(SpoccError::LengthMismatch(len, d.len()));
        }
    }
    if dists.len() == 1 {
        return Ok(first.clone());
    }
    let mut values = Vec::with_capacity(len);
    let mut operands = vec![0.0; dists.len()];
    for y in 0..len {
        for (k, d) in dists.iter().enumerate() {
            operands[k] = d.values[y];
        }
        values.push(tnorm_values(lambda, &operands));
    }
    Ok(PossibilityDistribution { values })
}

/// Discounting: fade a source toward the vacuous distribution,
/// `pi <- (1 - alpha) * pi + alpha`.
///
/// `alpha = 0` leaves the distribution unchanged; `alpha = 1` yields the
/// all-ones distribution, the neutral element of every t-norm, which removes
/// the source from any conjunctive aggregation. Normalization is preserved.
pub fn discount(pi: &PossibilityDistribution, alpha: f64) -> Result<PossibilityDistribution> {
    if !(0.0..=1.0).contains(&alpha) || !alpha.is_finite() {
        return Err(SpoccError::InvalidDiscount(alpha));
    }
    let values = pi
        .values
        .iter()
        .map(|&v| ((1.0 - alpha) * v + alpha).min(1.0))
        .collect();
    Ok(PossibilityDistribution { values })
}

/// Indices attaining the maximum value (exact float equality).
pub fn argmax_set(values: &[f64]) -> Vec<usize> {
    let mut best = f64::NEG_INFINITY;
    for &v in values {
        if v > best {
            best = v;
        }
    }
    values
        .iter()
        .enumerate()
        .filter(|(_, &v)| v == best)
        .map(|(i, _)| i)
        .collect()
}

/// Argmax decision over a possibility distribution; ties are broken
/// uniformly at random from the supplied stream. The all-zero distribution
/// is legal and yields a uniform draw over all labels.
pub fn decide<R: Rng + ?Sized>(pi: &PossibilityDistribution, rng: &mut R) -> usize {
    let ties = argmax_set(&pi.values);
    if ties.len() == 1 {
        ties[0]
    } else {
        ties[rng.random_range(0..ties.len())]
    }
}

/// Possibility measure of a subset: the maximum possibility degree over its
/// members. Maxitive: `P(A u B) = max(P(A), P(B))`.
pub fn possibility_measure(pi: &PossibilityDistribution, subset: &[usize]) -> Result<f64> {
    if subset.is_empty() {
        return Err(SpoccError::EmptySubset);
    }
    let mut max = 0.0_f64;
    for &i in subset {
        if i >= pi.len() {
            return Err(SpoccError::LabelOutOfRange {
                index: i,
                count: pi.len(),
            });
        }
        max = max.max(pi.values[i]);
    }
    Ok(max)
}

/// Necessity measure, dual of the possibility measure:
/// `N(A) = 1 - P(complement of A)`; the full set has necessity 1.
pub fn necessity_measure(pi: &PossibilityDistribution, subset: &[usize]) -> Result<f64> {
    if subset.is_empty() {
        return Err(SpoccError::EmptySubset);
    }
    for &i in subset {
        if i >= pi.len() {
            return Err(SpoccError::LabelOutOfRange {
                index: i,
                count: pi.len(),
            });
        }
    }
    let complement: Vec<usize> = (0..pi.len()).filter(|i| !subset.contains(i)).collect();
    if complement.is_empty() {
        return Ok(1.0);
    }
    Ok(1.0 - possibility_measure(pi, &complement)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn prob(mass: &[f64]) -> ProbabilityDistribution {
        ProbabilityDistribution::new(mass.to_vec()).unwrap()
    }

    fn poss(values: &[f64]) -> PossibilityDistribution {
        PossibilityDistribution::new(values.to_vec()).unwrap()
    }

    #[test]
    fn dpt_worked_examples_exact() {
        assert_eq!(dpt(&prob(&[0.10, 0.15, 0.75])).values(), &[0.10, 0.25, 1.0]);
        assert_eq!(dpt(&prob(&[0.20, 0.60, 0.20])).values(), &[0.40, 1.0, 0.40]);
    }

    #[test]
    fn dpt_uniform_is_vacuous() {
        for l in 2..6 {
            let p = prob(&vec![1.0 / l as f64; l]);
            assert_eq!(dpt(&p).values(), vec![1.0; l].as_slice());
        }
    }

    #[test]
    fn dpt_rejects_unnormalized() {
        assert!(ProbabilityDistribution::new(vec![0.5, 0.6]).is_err());
        assert!(ProbabilityDistribution::new(vec![1.2, -0.2]).is_err());
    }

    #[test]
    fn dpt_preference_preservation_fuzz() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..1000 {
            let l = rng.random_range(2..7);
            let mut mass: Vec<f64> = (0..l).map(|_| rng.random::<f64>()).collect();
            let s: f64 = mass.iter().sum();
            mass.iter_mut().for_each(|m| *m /= s);
            let p = ProbabilityDistribution::new(mass.clone()).unwrap();
            let pi = dpt(&p);
            for i in 0..l {
                for j in 0..l {
                    assert_eq!(
                        mass[i] > mass[j],
                        pi.values()[i] > pi.values()[j],
                        "preference broken for {mass:?}"
                    );
                }
            }
        }
    }

    #[test]
    fn dpt_consistency_fuzz() {
        // The induced possibility measure dominates the probability of every
        // subset.
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..1000 {
            let l = rng.random_range(2..7usize);
            let mut mass: Vec<f64> = (0..l).map(|_| rng.random::<f64>()).collect();
            let s: f64 = mass.iter().sum();
            mass.iter_mut().for_each(|m| *m /= s);
            let p = ProbabilityDistribution::new(mass.clone()).unwrap();
            let pi = dpt(&p);
            for bits in 1..(1u32 << l) {
                let subset: Vec<usize> = (0..l).filter(|i| bits & (1 << i) != 0).collect();
                let p_a: f64 = subset.iter().map(|&i| mass[i]).sum();
                let pi_a = possibility_measure(&pi, &subset).unwrap();
                assert!(pi_a >= p_a - 1e-9, "consistency broken for {mass:?}");
            }
        }
    }

    #[test]
    fn dpt_maximal_specificity_small_grid() {
        // Brute-force grid search: no consistent, preference-preserving
        // candidate has any coordinate strictly below the transform's beyond
        // the grid step.
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let mut cases: Vec<Vec<f64>> = vec![
            vec![0.10, 0.15, 0.75],
            vec![0.20, 0.60, 0.20],
            vec![0.7, 0.3],
            vec![0.4, 0.3, 0.2, 0.1],
        ];
        for _ in 0..8 {
            let l = rng.random_range(2..5usize);
            let mut mass: Vec<f64> = (0..l).map(|_| rng.random::<f64>()).collect();
            let s: f64 = mass.iter().sum();
            mass.iter_mut().for_each(|m| *m /= s);
            cases.push(mass);
        }
        let step = 0.01;
        for mass in cases {
            let l = mass.len();
            let p = ProbabilityDistribution::new(mass.clone()).unwrap();
            let reference = dpt(&p);
            // Enumerate candidates on the grid in rank order: the top-ranked
            // label is pinned at 1 (consistency over the full set), each
            // following rank is bounded above by its predecessor.
            let mut order: Vec<usize> = (0..l).collect();
            order.sort_by(|&a, &b| mass[b].partial_cmp(&mass[a]).unwrap());
            let mut candidate = vec![0.0; l];
            candidate[order[0]] = 1.0;
            check_candidates(&mass, &order, 1, &mut candidate, &reference, step);
        }

        fn preserves_preferences(mass: &[f64], candidate: &[f64]) -> bool {
            for i in 0..mass.len() {
                for j in 0..mass.len() {
                    if (mass[i] > mass[j]) != (candidate[i] > candidate[j]) {
                        return false;
                    }
                }
            }
            true
        }

        fn consistent(mass: &[f64], candidate: &[f64]) -> bool {
            let l = mass.len();
            for bits in 1..(1u32 << l) {
                let mut p_a = 0.0;
                let mut pi_a = 0.0_f64;
                for i in 0..l {
                    if bits & (1 << i) != 0 {
                        p_a += mass[i];
                        pi_a = pi_a.max(candidate[i]);
                    }
                }
                if pi_a < p_a - 1e-9 {
                    return false;
                }
            }
            true
        }

        fn check_candidates(
            mass: &[f64],
            order: &[usize],
            rank: usize,
            candidate: &mut Vec<f64>,
            reference: &PossibilityDistribution,
            step: f64,
        ) {
            if rank == mass.len() {
                if consistent(mass, candidate) && preserves_preferences(mass, candidate) {
                    for i in 0..mass.len() {
                        assert!(
                            candidate[i] >= reference.values()[i] - step - 1e-9,
                            "candidate {candidate:?} undercuts dpt {:?} for {mass:?}",
                            reference.values()
                        );
                    }
                }
                return;
            }
            let cap = candidate[order[rank - 1]];
            let mut v = 0.0;
            while v <= cap + 1e-12 {
                candidate[order[rank]] = v.min(1.0);
                check_candidates(mass, order, rank + 1, candidate, reference, step);
                v += step;
            }
        }
    }

    #[test]
    fn tnorm_scalar_known_values() {
        let t1 = TNormParam::finite(1.0).unwrap();
        assert_eq!(tnorm_scalar(t1, 0.5, 0.5), 0.25);
        // Neutral element holds exactly for any parameter.
        for lam in [
            TNormParam::finite(1.0).unwrap(),
            TNormParam::finite(2.0).unwrap(),
            TNormParam::finite(17.3).unwrap(),
            TNormParam::Infinite,
        ] {
            assert_eq!(tnorm_scalar(lam, 1.0, 0.7), 0.7);
            assert_eq!(tnorm_scalar(lam, 0.0, 0.7), 0.0);
        }
        // Independent evaluation of the defining formula at lambda = 2:
        // exp(-sqrt(2) * ln 2) = 2^(-sqrt(2)).
        let expected = 2.0_f64.powf(-std::f64::consts::SQRT_2);
        let got = tnorm_scalar(TNormParam::finite(2.0).unwrap(), 0.5, 0.5);
        assert!((got - expected).abs() < 1e-12, "{got} vs {expected}");
        assert!((expected - 0.375_214).abs() < 1e-6);
    }

    #[test]
    fn tnorm_infinite_is_min() {
        let pi = poss(&[0.3, 1.0, 0.0]);
        let combined = tnorm_combine(TNormParam::Infinite, &[pi.clone(), pi.clone()]).unwrap();
        assert_eq!(combined, pi);
    }

    #[test]
    fn tnorm_combine_product_case() {
        let a = poss(&[1.0, 0.4]);
        let b = poss(&[0.4, 1.0]);
        let got = tnorm_combine(TNormParam::finite(1.0).unwrap(), &[a, b]).unwrap();
        assert_eq!(got.values(), &[0.4, 0.4]);
    }

    #[test]
    fn tnorm_combine_rejects_mismatched_lengths() {
        let a = poss(&[1.0, 0.4]);
        let b = poss(&[0.4, 1.0, 0.2]);
        assert!(tnorm_combine(TNormParam::Infinite, &[a, b]).is_err());
    }

    #[test]
    fn tnorm_lambda_sweep_moves_argmax() {
        // Combining one strongly-supported label with a pair of moderately
        // supported votes: the product end favours the majority label, the
        // minimum end favours the strongly supported one.
        let single = poss(&[0.1, 0.25, 1.0]);
        let majority = poss(&[0.4, 1.0, 0.4]);
        let dists = [single, majority.clone(), majority];
        let at = |lam: TNormParam| {
            let ens = tnorm_combine(lam, &dists).unwrap();
            argmax_set(ens.values())
        };
        assert_eq!(at(TNormParam::finite(1.0).unwrap()), vec![1]);
        assert_eq!(at(TNormParam::Infinite), vec![2]);
        // Scalar-oracle check along the sweep: the elementwise combination
        // matches direct evaluation of the binary formula folded pairwise.
        let mut crossed = false;
        for lam in [1.0, 1.5, 2.0, 3.0, 5.0, 10.0, 20.0, 50.0] {
            let param = TNormParam::finite(lam).unwrap();
            let ens = tnorm_combine(param, &dists).unwrap();
            for y in 0..3 {
                let oracle = tnorm_scalar(
                    param,
                    tnorm_scalar(param, dists[0].values()[y], dists[1].values()[y]),
                    dists[2].values()[y],
                );
                assert!((ens.values()[y] - oracle).abs() < 1e-9);
            }
            if argmax_set(ens.values()) == vec![2] {
                crossed = true;
            }
        }
        assert!(
            crossed,
            "argmax never crossed to the strongly supported label"
        );
    }

    #[test]
    fn discount_examples() {
        let pi = poss(&[1.0, 0.2]);
        assert_eq!(discount(&pi, 0.0).unwrap(), pi);
        assert_eq!(discount(&pi, 1.0).unwrap().values(), &[1.0, 1.0]);
        assert_eq!(discount(&pi, 0.5).unwrap().values(), &[1.0, 0.6]);
        assert!(discount(&pi, 1.5).is_err());
        assert!(discount(&pi, -0.1).is_err());
    }

    #[test]
    fn discount_monotone_in_alpha() {
        let pi = poss(&[1.0, 0.3, 0.0]);
        let mut prev = discount(&pi, 0.0).unwrap();
        for step in 1..=10 {
            let cur = discount(&pi, step as f64 / 10.0).unwrap();
            for y in 0..3 {
                assert!(cur.values()[y] >= prev.values()[y] - 1e-12);
                assert!((0.0..=1.0).contains(&cur.values()[y]));
            }
            assert!(cur.is_normalized());
            prev = cur;
        }
    }

    #[test]
    fn decide_unique_max() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(decide(&poss(&[0.2, 1.0, 0.4]), &mut rng), 1);
    }

    #[test]
    fn decide_tie_frequencies() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let pi = poss(&[1.0, 1.0, 0.0]);
        let mut counts = [0u32; 3];
        for _ in 0..10_000 {
            counts[decide(&pi, &mut rng)] += 1;
        }
        assert_eq!(counts[2], 0);
        for &c in &counts[..2] {
            assert!((c as f64 / 10_000.0 - 0.5).abs() < 0.02, "{counts:?}");
        }

        let zero = poss(&[0.0, 0.0, 0.0]);
        let mut counts = [0u32; 3];
        for _ in 0..12_000 {
            counts[decide(&zero, &mut rng)] += 1;
        }
        for &c in &counts {
            assert!((c as f64 / 12_000.0 - 1.0 / 3.0).abs() < 0.03, "{counts:?}");
        }
    }

    #[test]
    fn decide_invariant_under_positive_rescaling() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let values: Vec<f64> = (0..4).map(|_| rng.random::<f64>()).collect();
            let scale = rng.random::<f64>().max(1e-3);
            let scaled: Vec<f64> = values.iter().map(|v| v * scale).collect();
            assert_eq!(argmax_set(&values), argmax_set(&scaled));
        }
    }

    #[test]
    fn measures_worked_example() {
        // A 4-nearest-neighbour tie between the first two labels encodes as
        // the indicator possibility distribution of that pair.
        let pi = poss(&[1.0, 1.0, 0.0]);
        assert_eq!(possibility_measure(&pi, &[0, 1]).unwrap(), 1.0);
        assert_eq!(possibility_measure(&pi, &[2]).unwrap(), 0.0);
        assert_eq!(necessity_measure(&pi, &[0, 1]).unwrap(), 1.0);
        assert_eq!(necessity_measure(&pi, &[0]).unwrap(), 0.0);
        assert_eq!(necessity_measure(&pi, &[0, 1, 2]).unwrap(), 1.0);
        assert_eq!(
            possibility_measure(&poss(&[0.3, 0.7, 0.5]), &[0, 2]).unwrap(),
            0.5
        );
        assert!(possibility_measure(&pi, &[]).is_err());
    }

    #[test]
    fn maxitivity_fuzz() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..200 {
            let l = 5;
            let values: Vec<f64> = (0..l).map(|_| rng.random::<f64>()).collect();
            let pi = PossibilityDistribution::new(values).unwrap();
            let a: Vec<usize> = (0..l).filter(|_| rng.random::<bool>()).collect();
            let b: Vec<usize> = (0..l).filter(|_| rng.random::<bool>()).collect();
            if a.is_empty() || b.is_empty() {
                continue;
            }
            let mut union = a.clone();
            union.extend(b.iter().copied().filter(|i| !a.contains(i)));
            let lhs = possibility_measure(&pi, &union).unwrap();
            let rhs = possibility_measure(&pi, &a)
                .unwrap()
                .max(possibility_measure(&pi, &b).unwrap());
            assert_eq!(lhs, rhs);
        }
    }

    #[test]
    fn label_space_validation() {
        assert!(LabelSpace::new(vec!["a"]).is_err());
        assert!(LabelSpace::new(vec!["a", "a"]).is_err());
        let space = LabelSpace::new(vec!["a", "b", "c"]).unwrap();
        assert_eq!(space.count(), 3);
        assert_eq!(space.index_of("b").unwrap(), 1);
        assert!(space.index_of("z").is_err());
    }

    #[test]
    fn tnorm_param_serde_round_trip() {
        for lam in [
            TNormParam::finite(1.0).unwrap(),
            TNormParam::finite(7.389_056).unwrap(),
            TNormParam::Infinite,
        ] {
            let json = serde_json::to_string(&lam).unwrap();
            let back: TNormParam = serde_json::from_str(&json).unwrap();
            assert_eq!(lam, back);
        }
        assert!(serde_json::from_str::<TNormParam>("0.5").is_err());
        assert!(serde_json::from_str::<TNormParam>("\"nope\"").is_err());
    }

    #[test]
    fn deserialization_enforces_invariants() {
        assert!(serde_json::from_str::<PossibilityDistribution>("[0.5,1.0]").is_ok());
        assert!(serde_json::from_str::<PossibilityDistribution>("[1.5,0.0]").is_err());
        assert!(serde_json::from_str::<PossibilityDistribution>("[-0.1]").is_err());
        assert!(serde_json::from_str::<LabelSpace>(r#"{"names":["a","b"]}"#).is_ok());
        assert!(serde_json::from_str::<LabelSpace>(r#"{"names":["a","a"]}"#).is_err());
        assert!(serde_json::from_str::<LabelSpace>(r#"{"names":["a"]}"#).is_err());
    }
}
