//! Multinomial logistic regression fitted by full-batch gradient descent
//! with a fixed step halved whenever the objective would increase.
//!
//! Shared by the stacking aggregator and the 2-D logistic base learner. The
//! objective is mean cross-entropy plus `l2 * ||W||^2` with the bias row
//! excluded from the penalty, so the objective trace is non-increasing by
//! construction.

pub const GRAD_TOL: f64 = 1e-6;
pub const MAX_ITERS: usize = 10_000;

/// Weights are `(features + 1) x classes`, row-major, bias row last.
#[derive(Debug, Clone)]
pub struct SoftmaxFit {
    pub weights: Vec<f64>,
    pub features: usize,
    pub classes: usize,
    pub converged: bool,
    pub iterations: usize,
}

/// Linear scores for one sample (bias included).
pub fn softmax_scores(weights: &[f64], features: usize, classes: usize, x: &[f64]) -> Vec<f64> {
    debug_assert_eq!(x.len(), features);
    let mut scores = vec![0.0; classes];
    for (f, &xv) in x.iter().enumerate() {
        if xv == 0.0 {
            continue;
        }
        let row = &weights[f * classes..(f + 1) * classes];
        for c in 0..classes {
            scores[c] += row[c] * xv;
        }
    }
    let bias = &weights[features * classes..(features + 1) * classes];
    for c in 0..classes {
        scores[c] += bias[c];
    }
    scores
}

fn softmax_inplace(scores: &mut [f64]) {
    let max = scores.iter().fold(f64::NEG_INFINITY, |m, &s| m.max(s));
    let mut sum = 0.0;
    for s in scores.iter_mut() {
        *s = (*s - max).exp();
        sum += *s;
    }
    for s in scores.iter_mut() {
        *s /= sum;
    }
}

/// Mean cross-entropy plus the l2 penalty (bias excluded).
pub fn objective(
    weights: &[f64],
    xs: &[f64],
    ys: &[usize],
    features: usize,
    classes: usize,
    l2: f64,
) -> f64 {
    let n = ys.len();
    let mut loss = 0.0;
    for (i, &y) in ys.iter().enumerate() {
        let scores = softmax_scores(
            weights,
            features,
            classes,
            &xs[i * features..(i + 1) * features],
        );
        let max = scores.iter().fold(f64::NEG_INFINITY, |m, &s| m.max(s));
        let log_sum: f64 = scores.iter().map(|&s| (s - max).exp()).sum::<f64>().ln() + max;
        loss += log_sum - scores[y];
    }
    let penalty: f64 = weights[..features * classes].iter().map(|w| w * w).sum();
    loss / n as f64 + l2 * penalty
}

/// Analytic gradient of [`objective`]; same layout as the weights.
pub fn gradient(
    weights: &[f64],
    xs: &[f64],
    ys: &[usize],
    features: usize,
    classes: usize,
    l2: f64,
) -> Vec<f64> {
    let n = ys.len();
    let mut grad = vec![0.0; (features + 1) * classes];
    for (i, &y) in ys.iter().enumerate() {
        let x = &xs[i * features..(i + 1) * features];
        let mut probs = softmax_scores(weights, features, classes, x);
        softmax_inplace(&mut probs);
        probs[y] -= 1.0;
        for (f, &xv) in x.iter().enumerate() {
            if xv == 0.0 {
                continue;
            }
            for c in 0..classes {
                grad[f * classes + c] += probs[c] * xv;
            }
        }
        for c in 0..classes {
            grad[features * classes + c] += probs[c];
        }
    }
    let inv_n = 1.0 / n as f64;
    for g in grad.iter_mut() {
        *g *= inv_n;
    }
    for f in 0..features {
        for c in 0..classes {
            grad[f * classes + c] += 2.0 * l2 * weights[f * classes + c];
        }
    }
    grad
}

/// One fused pass: objective value and gradient written into `grad`.
fn eval_both(
    weights: &[f64],
    xs: &[f64],
    ys: &[usize],
    features: usize,
    classes: usize,
    l2: f64,
    grad: &mut [f64],
    probs: &mut [f64],
) -> f64 {
    let n = ys.len();
    grad.iter_mut().for_each(|g| *g = 0.0);
    let mut loss = 0.0;
    for (i, &y) in ys.iter().enumerate() {
        let x = &xs[i * features..(i + 1) * features];
        probs.iter_mut().for_each(|p| *p = 0.0);
        for (f, &xv) in x.iter().enumerate() {
            if xv == 0.0 {
                continue;
            }
            let row = &weights[f * classes..(f + 1) * classes];
            for c in 0..classes {
                probs[c] += row[c] * xv;
            }
        }
        let bias = &weights[features * classes..(features + 1) * classes];
        for c in 0..classes {
            probs[c] += bias[c];
        }
        let max = probs.iter().fold(f64::NEG_INFINITY, |m, &s| m.max(s));
        let mut sum = 0.0;
        let true_score = probs[y];
        for p in probs.iter_mut() {
            *p = (*p - max).exp();
            sum += *p;
        }
        loss += sum.ln() + max - true_score;
        for p in probs.iter_mut() {
            *p /= sum;
        }
        probs[y] -= 1.0;
        for (f, &xv) in x.iter().enumerate() {
            if xv == 0.0 {
                continue;
            }
            let row = &mut grad[f * classes..(f + 1) * classes];
            for c in 0..classes {
                row[c] += probs[c] * xv;
            }
        }
        let bias_grad = &mut grad[features * classes..(features + 1) * classes];
        for c in 0..classes {
            bias_grad[c] += probs[c];
        }
    }
    let inv_n = 1.0 / n as f64;
    grad.iter_mut().for_each(|g| *g *= inv_n);
    let mut penalty = 0.0;
    for f in 0..features {
        for c in 0..classes {
            let w = weights[f * classes + c];
            penalty += w * w;
            grad[f * classes + c] += 2.0 * l2 * w;
        }
    }
    loss * inv_n + l2 * penalty
}

/// Fit by gradient descent from `init` (zeros when absent). Stops when the
/// gradient norm falls under `grad_tol` or after `max_iter` steps; the
/// returned iterate is the best one either way, with `converged` flagging
/// which exit was taken.
pub fn fit_with(
    xs: &[f64],
    ys: &[usize],
    features: usize,
    classes: usize,
    l2: f64,
    init: Option<&[f64]>,
    grad_tol: f64,
    max_iter: usize,
) -> SoftmaxFit {
    let size = (features + 1) * classes;
    let mut weights = match init {
        Some(w) => {
            debug_assert_eq!(w.len(), size);
            w.to_vec()
        }
        None => vec![0.0; size],
    };
    let mut grad = vec![0.0; size];
    let mut probs = vec![0.0; classes];
    let mut candidate = vec![0.0; size];
    let mut obj = objective(&weights, xs, ys, features, classes, l2);
    let mut step = 1.0;
    let mut converged = false;
    let mut iterations = 0;
    for iter in 0..max_iter {
        iterations = iter;
        let cur = eval_both(
            &weights, xs, ys, features, classes, l2, &mut grad, &mut probs,
        );
        obj = obj.min(cur);
        let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        if norm <= grad_tol {
            converged = true;
            break;
        }
        // Halve the step until the objective stops increasing.
        let mut accepted = false;
        while step > 1e-18 {
            for ((c, &w), &g) in candidate.iter_mut().zip(&weights).zip(grad.iter()) {
                *c = w - step * g;
            }
            let cand_obj = objective(&candidate, xs, ys, features, classes, l2);
            if cand_obj <= obj {
                std::mem::swap(&mut weights, &mut candidate);
                obj = cand_obj;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            // The step underflowed; the current iterate is a stationary
            // point for practical purposes.
            break;
        }
    }
    SoftmaxFit {
        weights,
        features,
        classes,
        converged,
        iterations,
    }
}

/// [`fit_with`] at the model contract's tolerance and iteration cap.
pub fn fit(
    xs: &[f64],
    ys: &[usize],
    features: usize,
    classes: usize,
    l2: f64,
    init: Option<&[f64]>,
) -> SoftmaxFit {
    fit_with(xs, ys, features, classes, l2, init, GRAD_TOL, MAX_ITERS)
}
