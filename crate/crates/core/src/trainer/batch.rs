//! Token-budget batching: group examples of similar length so batches
//! land near the budget, in an order reshuffled every epoch.
//!
//! The examples are shuffled, stably sorted by descending cost, and
//! packed greedily; packing in descending order guarantees every batch
//! but the leftover exceeds half the budget. Closed batches are then
//! shuffled again so step order does not correlate with length, with
//! the possibly-small leftover kept last.

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;

use super::{TrainError, TrainResult};

/// Splits `0..costs.len()` into index batches whose summed cost stays
/// within `budget`.
pub fn token_batches(
    costs: &[usize],
    budget: usize,
    rng: &mut ChaCha8Rng,
) -> TrainResult<Vec<Vec<usize>>> {
    if costs.is_empty() {
        return Err(TrainError::Empty("nothing to batch".into()));
    }
    if budget == 0 {
        return Err(TrainError::BadConfig("token budget must be positive".into()));
    }
    for (index, &cost) in costs.iter().enumerate() {
        if cost > budget {
            return Err(TrainError::Oversized {
                index,
                cost,
                budget,
            });
        }
    }

    let mut order: Vec<usize> = (0..costs.len()).collect();
    order.shuffle(rng);
    order.sort_by_key(|&i| std::cmp::Reverse(costs[i]));

    let mut batches: Vec<Vec<usize>> = Vec::new();
    let mut current: Vec<usize> = Vec::new();
    let mut current_cost = 0usize;
    for i in order {
        if current_cost + costs[i] > budget {
            batches.push(std::mem::take(&mut current));
            current_cost = 0;
        }
        current.push(i);
        current_cost += costs[i];
    }

    batches.shuffle(rng);
    if !current.is_empty() {
        batches.push(current);
    }
    Ok(batches)
}
