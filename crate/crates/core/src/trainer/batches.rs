use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::rng::Rng;

/// Positions (into the training view and the unlabeled pool) of one batch.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BatchPlan {
    pub rows: Vec<usize>,
    pub unlabeled: Vec<usize>,
}

/// Shuffle the training rows into a partition where every batch holds both
/// treatments.
///
/// The batch count is `ceil(n / batch_size)`, capped by the size of the
/// smaller arm so the stratification can always be met; batch sizes differ by
/// at most one. Batches lacking an arm receive a row of it from the batch
/// holding the most such rows, in exchange for one of their own. When
/// `unlabeled` is nonzero the unlabeled positions are shuffled with
/// `unlabeled_rng` and dealt out in equal shares.
pub fn make_batches(
    t: &[u8],
    batch_size: usize,
    unlabeled: usize,
    rng: &mut Rng,
    unlabeled_rng: &mut Rng,
) -> Result<Vec<BatchPlan>> {
    if batch_size < 2 {
        return Err(Error::Config(format!("batch_size {batch_size} is below 2")));
    }
    let n = t.len();
    let treated = t.iter().filter(|&&v| v == 1).count();
    let minority = treated.min(n - treated);
    if minority < 2 {
        return Err(Error::Dataset(format!(
            "training split needs at least 2 rows per treatment, has {} control and {treated} treated",
            n - treated
        )));
    }
    let count = n.div_ceil(batch_size).min(minority).min(n / 2).max(1);

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut batches: Vec<Vec<usize>> = chunks(&order, count);

    loop {
        let arms: Vec<[usize; 2]> = batches
            .iter()
            .map(|b| {
                let k = b.iter().filter(|&&i| t[i] == 1).count();
                [b.len() - k, k]
            })
            .collect();
        let Some((needy, arm)) = (0..count)
            .flat_map(|b| (0..2).map(move |a| (b, a)))
            .find(|&(b, a)| arms[b][a] == 0)
        else {
            break;
        };
        let donor = (0..count)
            .filter(|&b| arms[b][arm] >= 2)
            .max_by_key(|&b| (arms[b][arm], std::cmp::Reverse(b)))
            .expect("batch count never exceeds the smaller arm");
        let give = batches[donor].iter().position(|&i| t[i] as usize == arm).unwrap();
        let take = batches[needy].iter().position(|&i| t[i] as usize != arm).unwrap();
        let a = batches[donor][give];
        let b = batches[needy][take];
        batches[donor][give] = b;
        batches[needy][take] = a;
    }

    let mut pool: Vec<usize> = (0..unlabeled).collect();
    pool.shuffle(unlabeled_rng);
    let shares = chunks(&pool, count);
    Ok(batches
        .into_iter()
        .zip(shares)
        .map(|(rows, unlabeled)| BatchPlan { rows, unlabeled })
        .collect())
}

/// Split `items` into `count` contiguous runs whose lengths differ by at most 1.
fn chunks(items: &[usize], count: usize) -> Vec<Vec<usize>> {
    let base = items.len() / count;
    let extra = items.len() % count;
    let mut out = Vec::with_capacity(count);
    let mut start = 0;
    for b in 0..count {
        let len = base + usize::from(b < extra);
        out.push(items[start..start + len].to_vec());
        start += len;
    }
    out
}
