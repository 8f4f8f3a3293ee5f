//! Reward signal for scoring a predicted representative set against the
//! ground-truth set. Exposed as a pure function for fixtures and external
//! trainers; no training objective lives here.

use alloc::collections::BTreeSet;

/// Reward of predicting `predicted` when the true representatives are `truth`.
///
/// Cases are checked top-down, so two empty sets score 6.
pub fn reward<T: Ord>(predicted: &BTreeSet<T>, truth: &BTreeSet<T>) -> f64 {
    if predicted == truth {
        return 6.0;
    }
    if truth.is_empty() {
        // predicted is non-empty here, otherwise the sets would be equal
        return -2.0 * predicted.len() as f64;
    }
    let hits = predicted.intersection(truth).count();
    if hits == 0 {
        return -6.0;
    }
    let false_positives = predicted.len() - hits;
    6.0 / truth.len() as f64 * (hits as f64 - false_positives as f64)
}
