use crate::datagen::Quality;
use crate::error::{Error, Result};
use crate::federation::RankPolicy;
use crate::numerics::Rng;

/// Stratified participant sample: high-rank and low-rank clients enter in
/// the same proportion as in the population (rounded). Returns sorted ids.
pub fn select_clients(ranks: &[usize], r_high: usize, fraction: f64, rng: &mut Rng) -> Vec<usize> {
    let n = ranks.len();
    let n_sel = ((fraction * n as f64).round() as usize).clamp(1, n);
    let (high, low): (Vec<usize>, Vec<usize>) = (0..n).partition(|&i| ranks[i] == r_high);
    let want_high = (n_sel as f64 * high.len() as f64 / n as f64).round() as usize;
    let n_high = want_high
        .min(high.len())
        .max(n_sel.saturating_sub(low.len()));
    let n_low = n_sel - n_high;
    let mut picked: Vec<usize> = rng
        .sample_indices(high.len(), n_high)
        .into_iter()
        .map(|i| high[i])
        .collect();
    picked.extend(
        rng.sample_indices(low.len(), n_low)
            .into_iter()
            .map(|i| low[i]),
    );
    picked.sort_unstable();
    picked
}

/// Rank per client under `policy`.
///
/// `val_acc` feeds [`RankPolicy::TopKValidation`]: the `k_high` clients
/// with the best validation accuracy get `r_high`, ties going to the lower
/// id; clients without a score rank last.
pub fn assign_ranks(
    qualities: &[Quality],
    val_acc: &[Option<f64>],
    policy: RankPolicy,
    k_high: usize,
    r_low: usize,
    r_high: usize,
) -> Result<Vec<usize>> {
    let n = qualities.len();
    if k_high > n {
        return Err(Error::InvalidArgument(format!(
            "cannot promote {k_high} of {n} clients"
        )));
    }
    Ok(match policy {
        RankPolicy::AllLow => vec![r_low; n],
        RankPolicy::AllHigh => vec![r_high; n],
        RankPolicy::Oracle => qualities
            .iter()
            .map(|q| if *q == Quality::High { r_high } else { r_low })
            .collect(),
        RankPolicy::TopKValidation => {
            if val_acc.len() != n {
                return Err(Error::InvalidArgument(
                    "one validation score per client required".into(),
                ));
            }
            let mut order: Vec<usize> = (0..n).collect();
            let score = |i: usize| val_acc[i].unwrap_or(f64::NEG_INFINITY);
            order.sort_by(|&a, &b| score(b).total_cmp(&score(a)).then(a.cmp(&b)));
            let mut ranks = vec![r_low; n];
            for &i in order.iter().take(k_high) {
                ranks[i] = r_high;
            }
            ranks
        }
    })
}
