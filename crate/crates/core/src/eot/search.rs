use super::{eot_attack, AttackConfig, AttackResult, BatchPolicy};
use crate::classifier::Model;
use crate::diffmath::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::transform::TransformSampler;

/// Held-out adversariality a result must exceed to be accepted.
pub const ADVERSARIAL_THRESHOLD: f64 = 0.90;

/// Four log-spaced penalty weights.
pub const DEFAULT_LAMBDAS: [f64; 4] = [0.001, 0.01, 0.1, 1.0];

#[derive(Clone, Debug)]
pub struct LambdaSearch<S> {
    pub lambda: f64,
    pub result: AttackResult<S>,
    /// No candidate exceeded [`ADVERSARIAL_THRESHOLD`]; `result` is the most
    /// adversarial one.
    pub below_threshold: bool,
    /// `(lambda, adversariality)` for every candidate that was run.
    pub tried: Vec<(f64, f64)>,
}

/// Index of the smallest λ whose adversariality exceeds the threshold, or
/// else of the most adversarial (smaller λ on ties) with the flag set.
/// `outcomes` holds `(lambda, adversariality)` pairs in any order.
pub fn select_lambda(outcomes: &[(f64, f64)]) -> Option<(usize, bool)> {
    let qualifying = outcomes
        .iter()
        .enumerate()
        .filter(|(_, o)| o.1 > ADVERSARIAL_THRESHOLD)
        .min_by(|a, b| a.1 .0.total_cmp(&b.1 .0));
    if let Some((i, _)) = qualifying {
        return Some((i, false));
    }
    outcomes
        .iter()
        .enumerate()
        .max_by(|a, b| a.1 .1.total_cmp(&b.1 .1).then(b.1 .0.total_cmp(&a.1 .0)))
        .map(|(i, _)| (i, true))
}

/// Runs `attack` for candidates in increasing order of λ and stops at the
/// first that exceeds the threshold; that is the smallest qualifying λ.
pub fn lambda_search_with<S>(
    candidates: &[f64],
    mut attack: impl FnMut(f64) -> Result<AttackResult<S>>,
) -> Result<LambdaSearch<S>> {
    if candidates.is_empty() {
        return Err(Error::Empty("lambda candidate list"));
    }
    let mut order = candidates.to_vec();
    order.sort_by(f64::total_cmp);
    let mut results = Vec::with_capacity(order.len());
    for &lambda in &order {
        let r = attack(lambda)?;
        let done = r.adversariality > ADVERSARIAL_THRESHOLD;
        results.push((lambda, r));
        if done {
            break;
        }
    }
    let tried: Vec<(f64, f64)> = results
        .iter()
        .map(|(l, r)| (*l, r.adversariality))
        .collect();
    let (i, below_threshold) = select_lambda(&tried).expect("at least one candidate ran");
    let (lambda, result) = results.swap_remove(i);
    Ok(LambdaSearch {
        lambda,
        result,
        below_threshold,
        tried,
    })
}

/// [`lambda_search_with`] over [`eot_attack`] with `cfg` and each λ.
pub fn lambda_search<S: Real, D: TransformSampler<S>>(
    x: &Tensor<S>,
    target: usize,
    dist: &D,
    model: &Model<S>,
    cfg: &AttackConfig,
    candidates: &[f64],
    policy: BatchPolicy,
) -> Result<LambdaSearch<S>> {
    lambda_search_with(candidates, |lambda| {
        let cfg = AttackConfig {
            lambda,
            ..cfg.clone()
        };
        eot_attack(x, target, dist, model, &cfg, policy)
    })
}
