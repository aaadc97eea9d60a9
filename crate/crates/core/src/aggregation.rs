//! Server-side merging of client LoRA factors.
//!
//! All strategies average `B` and `A` factor-wise (never the products).
//! Rank-heterogeneous inputs are first brought to a common rank:
//!
//! * zero padding appends zero columns to `B` and zero rows to `A`; under
//!   plain averaging over `k` clients every component that only the
//!   high-rank clients own ends up scaled by `h/k`;
//! * Frobenius zero padding does the same but weights client `i` by
//!   `‖B_i A_i‖_F / Σ_j ‖B_j A_j‖_F`;
//! * replication first averages the high-rank clients into a donor
//!   `(B_H, A_H)`, fills each low-rank client's missing trailing
//!   components with the donor's, and then averages everything with the
//!   donor counted once per high-rank client. The trailing components of
//!   the result equal the donor's exactly.
//!
//! Updates are summed in ascending client-id order, so every aggregate is
//! a deterministic function of the update *set*.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lora::LoraAdapter;
use crate::numerics::Matrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AggregationStrategy {
    Homogeneous,
    ZeroPad,
    FrobeniusZeroPad,
    Replication,
}

impl AggregationStrategy {
    pub const ALL: [AggregationStrategy; 4] = [
        AggregationStrategy::Homogeneous,
        AggregationStrategy::ZeroPad,
        AggregationStrategy::FrobeniusZeroPad,
        AggregationStrategy::Replication,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AggregationStrategy::Homogeneous => "homogeneous",
            AggregationStrategy::ZeroPad => "zero-pad",
            AggregationStrategy::FrobeniusZeroPad => "frobenius-zero-pad",
            AggregationStrategy::Replication => "replication",
        }
    }
}

impl fmt::Display for AggregationStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AggregationStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        AggregationStrategy::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown aggregation strategy `{s}`")))
    }
}

/// How client contributions are weighted inside the plain means.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Weighting {
    /// Every client counts once.
    #[default]
    Uniform,
    /// Clients count by their `weight` (e.g. local sample count).
    Samples,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClientUpdate {
    pub client_id: usize,
    pub adapter: LoraAdapter,
    /// Used only under [`Weighting::Samples`].
    pub weight: f64,
}

impl ClientUpdate {
    pub fn new(client_id: usize, adapter: LoraAdapter) -> Self {
        ClientUpdate {
            client_id,
            adapter,
            weight: 1.0,
        }
    }

    pub fn with_weight(mut self, weight: f64) -> Self {
        self.weight = weight;
        self
    }

    pub fn rank(&self) -> usize {
        self.adapter.rank()
    }
}

fn sorted(updates: &[ClientUpdate]) -> Vec<&ClientUpdate> {
    let mut v: Vec<&ClientUpdate> = updates.iter().collect();
    v.sort_by_key(|u| u.client_id);
    v
}

fn weight_of(u: &ClientUpdate, weighting: Weighting) -> f64 {
    match weighting {
        Weighting::Uniform => 1.0,
        Weighting::Samples => u.weight,
    }
}

/// `Σ w_i X_i / Σ w_i`, summed in the given order.
fn weighted_mean<'a>(terms: impl IntoIterator<Item = (&'a Matrix, f64)>) -> Matrix {
    let mut terms = terms.into_iter();
    let (first, w0) = terms.next().expect("at least one term");
    let mut acc = first.scale(w0);
    let mut total = w0;
    for (m, w) in terms {
        acc.add_scaled(m, w).expect("shapes checked by caller");
        total += w;
    }
    acc.scale(1.0 / total)
}

fn mean_adapter(adapters: &[(&LoraAdapter, f64)]) -> Result<LoraAdapter> {
    let b = weighted_mean(adapters.iter().map(|(a, w)| (a.b(), *w)));
    let a = weighted_mean(adapters.iter().map(|(a, w)| (a.a(), *w)));
    LoraAdapter::new(b, a)
}

fn check_common_shape(updates: &[&ClientUpdate]) -> Result<()> {
    let first = &updates[0].adapter;
    for u in updates {
        if (u.adapter.m(), u.adapter.n()) != (first.m(), first.n()) {
            return Err(Error::ShapeMismatch {
                op: "aggregate",
                left: (first.m(), first.n()),
                right: (u.adapter.m(), u.adapter.n()),
            });
        }
    }
    Ok(())
}

/// Factor-wise mean of equal-rank updates.
pub fn aggregate_homogeneous(
    updates: &[ClientUpdate],
    weighting: Weighting,
) -> Result<LoraAdapter> {
    if updates.is_empty() {
        return Err(Error::EmptyUpdates("aggregate_homogeneous"));
    }
    let ordered = sorted(updates);
    check_common_shape(&ordered)?;
    let ranks: Vec<usize> = ordered.iter().map(|u| u.rank()).collect();
    if ranks.iter().any(|&r| r != ranks[0]) {
        return Err(Error::MixedRanks { ranks });
    }
    let terms: Vec<(&LoraAdapter, f64)> = ordered
        .iter()
        .map(|u| (&u.adapter, weight_of(u, weighting)))
        .collect();
    mean_adapter(&terms)
}

pub fn pad_zero(adapter: &LoraAdapter, r_target: usize) -> Result<LoraAdapter> {
    adapter.pad_zero(r_target)
}

fn max_rank(updates: &[&ClientUpdate]) -> usize {
    updates.iter().map(|u| u.rank()).max().unwrap_or(0)
}

fn check_target(op: &'static str, updates: &[&ClientUpdate], r_target: usize) -> Result<()> {
    let top = max_rank(updates);
    if r_target != top {
        return Err(Error::InvalidRank {
            op,
            got: r_target,
            limit: top,
        });
    }
    Ok(())
}

/// Zero-pads every update to `r_target` and takes the factor-wise mean.
pub fn aggregate_zero_pad(
    updates: &[ClientUpdate],
    r_target: usize,
    weighting: Weighting,
) -> Result<LoraAdapter> {
    if updates.is_empty() {
        return Err(Error::EmptyUpdates("aggregate_zero_pad"));
    }
    let ordered = sorted(updates);
    check_common_shape(&ordered)?;
    check_target("aggregate_zero_pad", &ordered, r_target)?;
    let padded: Vec<LoraAdapter> = ordered
        .iter()
        .map(|u| u.adapter.pad_zero(r_target))
        .collect::<Result<_>>()?;
    let terms: Vec<(&LoraAdapter, f64)> = padded
        .iter()
        .zip(&ordered)
        .map(|(p, u)| (p, weight_of(u, weighting)))
        .collect();
    mean_adapter(&terms)
}

/// Normalized `‖B_i A_i‖_F` weights, or `None` when every update is zero.
pub fn frobenius_weights(updates: &[ClientUpdate]) -> Option<Vec<f64>> {
    let norms: Vec<f64> = updates
        .iter()
        .map(|u| u.adapter.delta().frobenius_norm())
        .collect();
    let total: f64 = norms.iter().sum();
    (total > 0.0).then(|| norms.iter().map(|n| n / total).collect())
}

/// Zero padding with weights proportional to each client's `‖ΔW_i‖_F`.
/// Falls back to the unweighted mean when every update is zero.
pub fn aggregate_frobenius_zero_pad(
    updates: &[ClientUpdate],
    r_target: usize,
) -> Result<LoraAdapter> {
    if updates.is_empty() {
        return Err(Error::EmptyUpdates("aggregate_frobenius_zero_pad"));
    }
    let ordered: Vec<ClientUpdate> = sorted(updates).into_iter().cloned().collect();
    let refs: Vec<&ClientUpdate> = ordered.iter().collect();
    check_common_shape(&refs)?;
    check_target("aggregate_frobenius_zero_pad", &refs, r_target)?;
    let Some(weights) = frobenius_weights(&ordered) else {
        log::warn!("all client deltas are zero; Frobenius weighting falls back to the plain mean");
        return aggregate_zero_pad(updates, r_target, Weighting::Uniform);
    };
    log::debug!(
        "frobenius weights {:?}",
        ordered
            .iter()
            .zip(&weights)
            .map(|(u, w)| (u.client_id, u.rank(), *w))
            .collect::<Vec<_>>()
    );
    let padded: Vec<LoraAdapter> = ordered
        .iter()
        .map(|u| u.adapter.pad_zero(r_target))
        .collect::<Result<_>>()?;
    // Weights already sum to one: a plain weighted sum.
    let sum = |pick: fn(&LoraAdapter) -> &Matrix| {
        let mut acc = Matrix::zeros(pick(&padded[0]).rows(), pick(&padded[0]).cols());
        for (p, &w) in padded.iter().zip(&weights) {
            acc.add_scaled(pick(p), w)
                .expect("padded to a common shape");
        }
        acc
    };
    LoraAdapter::new(sum(LoraAdapter::b), sum(LoraAdapter::a))
}

/// Fills the missing trailing components of `low` with the donor's:
/// `B̃ = [B_low | b_donor^(r_low+1) … b_donor^(r_donor)]`, and likewise for
/// the rows of `A`.
pub fn pad_replicate(low: &LoraAdapter, donor: &LoraAdapter) -> Result<LoraAdapter> {
    if low.rank() >= donor.rank() {
        return Err(Error::InvalidRank {
            op: "pad_replicate",
            got: low.rank(),
            limit: donor.rank(),
        });
    }
    if (low.m(), low.n()) != (donor.m(), donor.n()) {
        return Err(Error::ShapeMismatch {
            op: "pad_replicate",
            left: (low.m(), low.n()),
            right: (donor.m(), donor.n()),
        });
    }
    let tail = low.rank()..donor.rank();
    LoraAdapter::new(
        low.b().hcat(&donor.b().columns(tail.clone())?)?,
        low.a().vcat(&donor.a().row_block(tail)?)?,
    )
}

/// Replication-based aggregation over one high and one low rank tier:
///
/// 1. `(B_H, A_H)` = mean of the updates at rank `r_target`;
/// 2. every low-rank update is padded from that donor;
/// 3. the result is the mean of the padded low-rank updates together with
///    the donor, which carries the combined weight of the high-rank tier.
pub fn aggregate_replication(
    updates: &[ClientUpdate],
    r_target: usize,
    weighting: Weighting,
) -> Result<LoraAdapter> {
    if updates.is_empty() {
        return Err(Error::EmptyUpdates("aggregate_replication"));
    }
    let ordered = sorted(updates);
    check_common_shape(&ordered)?;
    let (high, low): (Vec<&ClientUpdate>, Vec<&ClientUpdate>) =
        ordered.iter().partition(|u| u.rank() == r_target);
    if high.is_empty() {
        return Err(Error::NoHighRankDonor { r_target });
    }
    if let Some(u) = low.iter().find(|u| u.rank() > r_target) {
        return Err(Error::InvalidRank {
            op: "aggregate_replication",
            got: r_target,
            limit: u.rank(),
        });
    }
    let mut low_ranks: Vec<usize> = low.iter().map(|u| u.rank()).collect();
    low_ranks.dedup();
    if low_ranks.len() > 1 {
        return Err(Error::TooManyRankTiers { ranks: low_ranks });
    }

    let high_terms: Vec<(&LoraAdapter, f64)> = high
        .iter()
        .map(|u| (&u.adapter, weight_of(u, weighting)))
        .collect();
    let donor = mean_adapter(&high_terms)?;
    if low.is_empty() {
        return Ok(donor);
    }
    let high_weight: f64 = high_terms.iter().map(|(_, w)| w).sum();

    let padded: Vec<LoraAdapter> = low
        .iter()
        .map(|u| pad_replicate(&u.adapter, &donor))
        .collect::<Result<_>>()?;
    let mut terms: Vec<(&LoraAdapter, f64)> = vec![(&donor, high_weight)];
    terms.extend(
        padded
            .iter()
            .zip(&low)
            .map(|(p, u)| (p, weight_of(u, weighting))),
    );
    mean_adapter(&terms)
}

/// Dispatches on `strategy`; `r_target` is the global (maximum) rank.
pub fn aggregate(
    strategy: AggregationStrategy,
    updates: &[ClientUpdate],
    r_target: usize,
    weighting: Weighting,
) -> Result<LoraAdapter> {
    match strategy {
        AggregationStrategy::Homogeneous => aggregate_homogeneous(updates, weighting),
        AggregationStrategy::ZeroPad => aggregate_zero_pad(updates, r_target, weighting),
        AggregationStrategy::FrobeniusZeroPad => aggregate_frobenius_zero_pad(updates, r_target),
        AggregationStrategy::Replication => aggregate_replication(updates, r_target, weighting),
    }
}

/// What a client at `client_rank` receives from the global adapter.
pub fn downlink(global: &LoraAdapter, client_rank: usize) -> Result<LoraAdapter> {
    global.truncate(client_rank)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Rng;
    use proptest::prelude::*;

    fn random_adapter(m: usize, n: usize, r: usize, rng: &mut Rng) -> LoraAdapter {
        LoraAdapter::new(
            Matrix::from_fn(m, r, |_, _| rng.normal(0.0, 1.0)),
            Matrix::from_fn(r, n, |_, _| rng.normal(0.0, 1.0)),
        )
        .unwrap()
    }

    fn updates(ranks: &[usize], seed: u64) -> Vec<ClientUpdate> {
        let mut rng = Rng::seed_from(seed);
        ranks
            .iter()
            .enumerate()
            .map(|(i, &r)| ClientUpdate::new(i, random_adapter(4, 3, r, &mut rng)))
            .collect()
    }

    #[test]
    fn single_update_is_returned() {
        let u = updates(&[3], 1);
        assert_eq!(
            aggregate_homogeneous(&u, Weighting::Uniform).unwrap(),
            u[0].adapter
        );
    }

    #[test]
    fn opposite_b_cancels() {
        let mut rng = Rng::seed_from(2);
        let first = random_adapter(4, 3, 2, &mut rng);
        let second = LoraAdapter::new(first.b().scale(-1.0), first.a().clone()).unwrap();
        let agg = aggregate_homogeneous(
            &[ClientUpdate::new(0, first), ClientUpdate::new(1, second)],
            Weighting::Uniform,
        )
        .unwrap();
        assert_eq!(agg.b().frobenius_norm(), 0.0);
    }

    #[test]
    fn homogeneous_matches_elementwise_oracle() {
        let u = updates(&[2, 2, 2], 3);
        let agg = aggregate_homogeneous(&u, Weighting::Uniform).unwrap();
        for r in 0..4 {
            for c in 0..2 {
                let oracle = (0..3).map(|i| u[i].adapter.b().get(r, c)).sum::<f64>() / 3.0;
                assert!((agg.b().get(r, c) - oracle).abs() < 1e-12);
            }
        }
        for r in 0..2 {
            for c in 0..3 {
                let oracle = (0..3).map(|i| u[i].adapter.a().get(r, c)).sum::<f64>() / 3.0;
                assert!((agg.a().get(r, c) - oracle).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn homogeneous_rejects_mixed_ranks() {
        let err = aggregate_homogeneous(&updates(&[2, 3], 4), Weighting::Uniform).unwrap_err();
        assert!(matches!(err, Error::MixedRanks { .. }));
        assert!(aggregate_homogeneous(&[], Weighting::Uniform).is_err());
    }

    #[test]
    fn sample_weighting() {
        let u = updates(&[2, 2], 5);
        let w: Vec<ClientUpdate> =
            vec![u[0].clone().with_weight(3.0), u[1].clone().with_weight(1.0)];
        let agg = aggregate_homogeneous(&w, Weighting::Samples).unwrap();
        let oracle = u[0]
            .adapter
            .b()
            .scale(0.75)
            .add(&u[1].adapter.b().scale(0.25))
            .unwrap();
        assert!(agg.b().max_abs_diff(&oracle).unwrap() < 1e-12);
    }

    #[test]
    fn zero_pad_dilutes_trailing_columns() {
        for k in [2usize, 4, 15] {
            let mut ranks = vec![20];
            ranks.extend(std::iter::repeat_n(5, k - 1));
            let u = updates(&ranks, k as u64);
            let agg = aggregate_zero_pad(&u, 20, Weighting::Uniform).unwrap();
            let donor = &u[0].adapter;
            for c in 5..20 {
                for r in 0..4 {
                    let want = donor.b().get(r, c) / k as f64;
                    assert!((agg.b().get(r, c) - want).abs() < 1e-12);
                }
            }
            let tail_ratio = agg.b().columns(5..20).unwrap().frobenius_norm()
                / donor.b().columns(5..20).unwrap().frobenius_norm();
            assert!((tail_ratio - 1.0 / k as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_pad_requires_max_rank_target() {
        let u = updates(&[4, 2], 6);
        assert!(aggregate_zero_pad(&u, 5, Weighting::Uniform).is_err());
        assert!(aggregate_zero_pad(&[], 4, Weighting::Uniform).is_err());
    }

    #[test]
    fn frobenius_with_equal_norms_is_plain_mean() {
        let mut rng = Rng::seed_from(7);
        let base = random_adapter(4, 3, 3, &mut rng);
        // Negating B keeps ‖BA‖ but changes the factors.
        let flipped = LoraAdapter::new(base.b().scale(-1.0), base.a().clone()).unwrap();
        let low = LoraAdapter::new(base.b().columns(0..3).unwrap(), base.a().clone()).unwrap();
        let u = vec![
            ClientUpdate::new(0, base),
            ClientUpdate::new(1, flipped),
            ClientUpdate::new(2, low),
        ];
        let f = aggregate_frobenius_zero_pad(&u, 3).unwrap();
        let z = aggregate_zero_pad(&u, 3, Weighting::Uniform).unwrap();
        assert!(f.b().max_abs_diff(z.b()).unwrap() < 1e-12);
        assert!(f.a().max_abs_diff(z.a()).unwrap() < 1e-12);
    }

    #[test]
    fn frobenius_ignores_zero_delta_client() {
        let mut u = updates(&[4, 2, 2], 8);
        let zero_b = LoraAdapter::new(Matrix::zeros(4, 2), u[2].adapter.a().clone()).unwrap();
        u[2] = ClientUpdate::new(2, zero_b);
        let with = aggregate_frobenius_zero_pad(&u, 4).unwrap();
        let mut other = u.clone();
        let junk =
            LoraAdapter::new(Matrix::zeros(4, 2), Matrix::from_fn(2, 3, |_, _| 9.0)).unwrap();
        other[2] = ClientUpdate::new(2, junk);
        let without = aggregate_frobenius_zero_pad(&other, 4).unwrap();
        assert_eq!(with, without);
    }

    #[test]
    fn frobenius_matches_weighted_sum_oracle() {
        let u = updates(&[5, 2, 3], 9);
        let agg = aggregate_frobenius_zero_pad(&u, 5).unwrap();
        let norms: Vec<f64> = u
            .iter()
            .map(|x| {
                x.adapter
                    .b()
                    .matmul(x.adapter.a())
                    .unwrap()
                    .frobenius_norm()
            })
            .collect();
        let total: f64 = norms.iter().sum();
        for r in 0..4 {
            for c in 0..5 {
                let oracle: f64 = u
                    .iter()
                    .zip(&norms)
                    .map(|(x, n)| {
                        let v = if c < x.rank() {
                            x.adapter.b().get(r, c)
                        } else {
                            0.0
                        };
                        v * n / total
                    })
                    .sum();
                assert!((agg.b().get(r, c) - oracle).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn frobenius_all_zero_falls_back() {
        let u: Vec<ClientUpdate> = (0..3)
            .map(|i| {
                ClientUpdate::new(
                    i,
                    LoraAdapter::new(
                        Matrix::zeros(4, 2),
                        Matrix::from_fn(2, 3, |r, c| (i + r + c) as f64),
                    )
                    .unwrap(),
                )
            })
            .collect();
        let f = aggregate_frobenius_zero_pad(&u, 2).unwrap();
        assert_eq!(f, aggregate_zero_pad(&u, 2, Weighting::Uniform).unwrap());
    }

    #[test]
    fn replicate_hand_example() {
        let low = LoraAdapter::new(
            Matrix::from_rows(&[[10.0], [20.0]]),
            Matrix::from_rows(&[[1.0, 1.0]]),
        )
        .unwrap();
        let donor = LoraAdapter::new(
            Matrix::from_rows(&[[2.0, 4.0], [6.0, 8.0]]),
            Matrix::from_rows(&[[0.0, 1.0], [3.0, 5.0]]),
        )
        .unwrap();
        let p = pad_replicate(&low, &donor).unwrap();
        assert_eq!(p.b(), &Matrix::from_rows(&[[10.0, 4.0], [20.0, 8.0]]));
        assert_eq!(p.a(), &Matrix::from_rows(&[[1.0, 1.0], [3.0, 5.0]]));
        assert!(pad_replicate(&donor, &low).is_err());
    }

    #[test]
    fn replicate_zero_donor_tail_is_zero_pad() {
        let mut rng = Rng::seed_from(10);
        let low = random_adapter(4, 3, 2, &mut rng);
        let donor = random_adapter(4, 3, 2, &mut rng).pad_zero(5).unwrap();
        assert_eq!(
            pad_replicate(&low, &donor).unwrap(),
            low.pad_zero(5).unwrap()
        );
    }

    #[test]
    fn replication_three_step_oracle() {
        // h = 1 high client (rank 2), L = 2 low clients (rank 1), 2x2 weights.
        let high = LoraAdapter::new(
            Matrix::from_rows(&[[1.0, 2.0], [3.0, 4.0]]),
            Matrix::from_rows(&[[0.5, -1.0], [2.0, 0.25]]),
        )
        .unwrap();
        let l1 = LoraAdapter::new(
            Matrix::from_rows(&[[5.0], [-1.0]]),
            Matrix::from_rows(&[[1.0, 1.0]]),
        )
        .unwrap();
        let l2 = LoraAdapter::new(
            Matrix::from_rows(&[[0.0], [2.0]]),
            Matrix::from_rows(&[[-3.0, 4.0]]),
        )
        .unwrap();
        let u = vec![
            ClientUpdate::new(0, high),
            ClientUpdate::new(1, l1),
            ClientUpdate::new(2, l2),
        ];
        let agg = aggregate_replication(&u, 2, Weighting::Uniform).unwrap();
        // B columns: col0 = mean(1,5,0; 3,-1,2); col1 = donor col (2; 4).
        let b = Matrix::from_rows(&[[2.0, 2.0], [4.0 / 3.0, 4.0]]);
        let a = Matrix::from_rows(&[
            [(0.5 + 1.0 - 3.0) / 3.0, (-1.0 + 1.0 + 4.0) / 3.0],
            [2.0, 0.25],
        ]);
        assert!(agg.b().max_abs_diff(&b).unwrap() < 1e-12);
        assert!(agg.a().max_abs_diff(&a).unwrap() < 1e-12);
    }

    #[test]
    fn replication_errors() {
        let u = updates(&[2, 2], 11);
        assert!(matches!(
            aggregate_replication(&u, 3, Weighting::Uniform).unwrap_err(),
            Error::NoHighRankDonor { .. }
        ));
        let u = updates(&[5, 2, 3], 12);
        assert!(matches!(
            aggregate_replication(&u, 5, Weighting::Uniform).unwrap_err(),
            Error::TooManyRankTiers { .. }
        ));
    }

    #[test]
    fn downlink_cases() {
        let mut rng = Rng::seed_from(13);
        let g = random_adapter(6, 4, 20, &mut rng);
        assert_eq!(downlink(&g, 20).unwrap(), g);
        let d = downlink(&g, 5).unwrap();
        assert_eq!(d.rank(), 5);
        assert_eq!(d.b(), &g.b().columns(0..5).unwrap());
        assert!(downlink(&g, 21).is_err());
        let u = updates(&[3, 3], 14);
        let agg = aggregate_homogeneous(&u, Weighting::Uniform).unwrap();
        assert_eq!(downlink(&agg, 3).unwrap(), agg);
    }

    #[test]
    fn strategy_names_round_trip() {
        for s in AggregationStrategy::ALL {
            assert_eq!(s.name().parse::<AggregationStrategy>().unwrap(), s);
        }
        assert!("fedavg".parse::<AggregationStrategy>().is_err());
    }

    proptest! {
        #[test]
        fn aggregation_is_order_invariant(seed in any::<u64>(), perm_seed in any::<u64>()) {
            let u = updates(&[6, 3, 3, 6, 3], seed);
            let mut shuffled = u.clone();
            Rng::seed_from(perm_seed).shuffle(&mut shuffled);
            for s in [AggregationStrategy::ZeroPad, AggregationStrategy::FrobeniusZeroPad, AggregationStrategy::Replication] {
                prop_assert_eq!(
                    aggregate(s, &u, 6, Weighting::Uniform).unwrap(),
                    aggregate(s, &shuffled, 6, Weighting::Uniform).unwrap()
                );
            }
        }

        #[test]
        fn homogeneous_inputs_degenerate(seed in any::<u64>(), k in 1usize..6) {
            let u = updates(&vec![4; k], seed);
            let h = aggregate_homogeneous(&u, Weighting::Uniform).unwrap();
            prop_assert_eq!(&aggregate_zero_pad(&u, 4, Weighting::Uniform).unwrap(), &h);
            prop_assert_eq!(&aggregate_replication(&u, 4, Weighting::Uniform).unwrap(), &h);
        }

        #[test]
        fn replication_preserves_donor_tail(seed in any::<u64>(), lows in 1usize..8) {
            let mut ranks = vec![7];
            ranks.extend(std::iter::repeat_n(2, lows));
            let u = updates(&ranks, seed);
            let agg = aggregate_replication(&u, 7, Weighting::Uniform).unwrap();
            let tail_b = u[0].adapter.b().columns(2..7).unwrap();
            let tail_a = u[0].adapter.a().row_block(2..7).unwrap();
            prop_assert!(agg.b().columns(2..7).unwrap().max_abs_diff(&tail_b).unwrap() < 1e-12);
            prop_assert!(agg.a().row_block(2..7).unwrap().max_abs_diff(&tail_a).unwrap() < 1e-12);
        }
    }
}
