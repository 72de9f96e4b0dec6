use std::cmp::Ordering;
use std::collections::BTreeMap;

use super::{DataError, EpochDataset, Group, Label, TrialEpoch};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BalanceOptions {
    /// Half-width of the success funnel in degrees.
    pub funnel_halfwidth_deg: f64,
    /// Failures closer than `funnel_halfwidth_deg + margin_deg` to the centre are excluded.
    pub margin_deg: f64,
    /// Equalize classes per participant instead of pooled per group.
    pub per_participant: bool,
}

impl Default for BalanceOptions {
    fn default() -> Self {
        Self {
            funnel_halfwidth_deg: 3.0,
            margin_deg: 2.0,
            per_participant: false,
        }
    }
}

/// Applies the exclusion band, drops block-first trials (`trial_index == 0`)
/// and equalizes class counts within each group.
///
/// Excess failures are pruned nearest-to-funnel first; excess successes
/// farthest-from-centre first. Ties drop the larger `trial_index` first.
pub fn balance_dataset(ds: &EpochDataset, opts: BalanceOptions) -> Result<EpochDataset, DataError> {
    let band = opts.funnel_halfwidth_deg + opts.margin_deg;
    let kept: Vec<usize> = ds
        .epochs()
        .iter()
        .enumerate()
        .filter(|(_, e)| !(e.label == Label::Failure && e.angular_error_deg.abs() < band))
        .filter(|(_, e)| e.trial_index != 0)
        .map(|(i, _)| i)
        .collect();

    let mut cells: BTreeMap<(Group, Option<u16>), Vec<usize>> = BTreeMap::new();
    for &i in &kept {
        let e = &ds.epochs()[i];
        let key = (e.group, opts.per_participant.then_some(e.participant));
        cells.entry(key).or_default().push(i);
    }

    let mut dropped = vec![false; ds.len()];
    for ((group, participant), members) in cells {
        let (succ, fail): (Vec<usize>, Vec<usize>) = members
            .iter()
            .partition(|&&i| ds.epochs()[i].label == Label::Success);
        if succ.is_empty() || fail.is_empty() {
            let scope = match participant {
                Some(p) => format!("group {group}, participant {p}"),
                None => format!("group {group}"),
            };
            return Err(DataError::EmptyClass {
                scope,
                successes: succ.len(),
                failures: fail.len(),
            });
        }
        let (mut excess, n_drop, worst_first): (
            Vec<usize>,
            usize,
            fn(&TrialEpoch, &TrialEpoch) -> Ordering,
        ) = match succ.len().cmp(&fail.len()) {
            Ordering::Equal => continue,
            Ordering::Greater => (succ.clone(), succ.len() - fail.len(), |a, b| {
                b.angular_error_deg
                    .abs()
                    .total_cmp(&a.angular_error_deg.abs())
            }),
            Ordering::Less => (fail.clone(), fail.len() - succ.len(), |a, b| {
                a.angular_error_deg
                    .abs()
                    .total_cmp(&b.angular_error_deg.abs())
            }),
        };
        excess.sort_by(|&a, &b| {
            let (ea, eb) = (&ds.epochs()[a], &ds.epochs()[b]);
            worst_first(ea, eb)
                .then(eb.trial_index.cmp(&ea.trial_index))
                .then(eb.block_index.cmp(&ea.block_index))
                .then(eb.participant.cmp(&ea.participant))
                .then(b.cmp(&a))
        });
        for &i in &excess[..n_drop] {
            dropped[i] = true;
        }
    }

    let epochs = kept
        .into_iter()
        .filter(|&i| !dropped[i])
        .map(|i| ds.epochs()[i].clone())
        .collect();
    EpochDataset::new(epochs, ds.fs(), ds.layout().clone())
}
