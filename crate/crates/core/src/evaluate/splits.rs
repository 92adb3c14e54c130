use std::collections::{BTreeMap, BTreeSet};

use itertools::Itertools;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Training percentages of the forecasting scenarios.
pub const PAPER_RATIOS: [u32; 5] = [90, 80, 70, 60, 50];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    pub label: String,
}

/// Time-ordered splits: the first `round(p% * T)` distinct time points train,
/// the rest test. `times` holds each observation's time point.
pub fn forecast_splits(times: &[u32], train_pcts: &[u32]) -> Result<Vec<Split>> {
    let sessions: Vec<u32> = times.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
    let t = sessions.len() as u64;
    train_pcts
        .iter()
        .map(|&p| {
            let label = format!("{p}:{}", 100u32.saturating_sub(p));
            if p > 100 {
                return Err(Error::DegenerateSplit(label));
            }
            // round half up of p * T / 100
            let n_train = ((p as u64 * t + 50) / 100) as usize;
            if n_train == 0 || n_train as u64 >= t {
                return Err(Error::DegenerateSplit(label));
            }
            let cutoff = sessions[n_train - 1];
            let (train, test) = (0..times.len()).partition(|&i| times[i] <= cutoff);
            Ok(Split { train, test, label })
        })
        .collect()
}

/// One split per k-subset of cows, in lexicographic order of sorted ids.
pub fn leave_k_cows_out(cow_ids: &[String], k: usize) -> Result<Vec<Split>> {
    let mut rows: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, c) in cow_ids.iter().enumerate() {
        rows.entry(c.as_str()).or_default().push(i);
    }
    let n = rows.len();
    if k == 0 || k >= n {
        return Err(Error::InvalidK { k, n });
    }
    let cows: Vec<&str> = rows.keys().copied().collect();
    let combos: Vec<Vec<usize>> = (0..n).combinations(k).collect();
    let total = combos.len();
    Ok(combos
        .into_iter()
        .enumerate()
        .map(|(f, held)| {
            let held: BTreeSet<&str> = held.iter().map(|&c| cows[c]).collect();
            let (test, train) = (0..cow_ids.len()).partition(|&i| held.contains(cow_ids[i].as_str()));
            Split {
                train,
                test,
                label: format!("fold {}/{total}", f + 1),
            }
        })
        .collect())
}
