use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{EpochStore, TrainError};

/// A partition of epoch indices into `k` folds (each sorted ascending).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldPlan {
    pub folds: Vec<Vec<usize>>,
}

impl FoldPlan {
    pub fn k(&self) -> usize {
        self.folds.len()
    }

    /// Every index outside fold `f`, ascending.
    pub fn train_indices(&self, f: usize) -> Vec<usize> {
        let mut out: Vec<usize> = self
            .folds
            .iter()
            .enumerate()
            .filter(|(g, _)| *g != f)
            .flat_map(|(_, v)| v.iter().copied())
            .collect();
        out.sort_unstable();
        out
    }
}

/// Stratified fold assignment.
///
/// Epochs are laid out label by label, each label's (participant, label) cells in
/// seeded order, and dealt round-robin, which fixes fold sizes and per-fold class
/// counts. Same-label swaps between folds then even out per-participant counts.
pub fn make_folds<S: EpochStore + ?Sized>(
    store: &S,
    k: usize,
    seed: u64,
) -> Result<FoldPlan, TrainError> {
    let n = store.len();
    if k < 2 {
        return Err(TrainError::TooFewFolds(k));
    }
    if k > n {
        return Err(TrainError::TooFewEpochs { k, n });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut cells: BTreeMap<(usize, u16), Vec<usize>> = BTreeMap::new();
    for i in 0..n {
        cells
            .entry((store.label(i).class(), store.participant(i)))
            .or_default()
            .push(i);
    }
    let mut participants: Vec<u16> = (0..n).map(|i| store.participant(i)).collect();
    participants.sort_unstable();
    participants.dedup();
    participants.shuffle(&mut rng);

    let mut sequence = Vec::with_capacity(n);
    for label in 0..2 {
        for p in &participants {
            if let Some(cell) = cells.get_mut(&(label, *p)) {
                cell.shuffle(&mut rng);
                sequence.extend_from_slice(cell);
            }
        }
    }
    let mut fold_ids: Vec<usize> = (0..k).collect();
    fold_ids.shuffle(&mut rng);
    let mut assign = vec![0usize; n];
    for (pos, &i) in sequence.iter().enumerate() {
        assign[i] = fold_ids[pos % k];
    }

    repair_participants(store, &mut assign, k, &participants);

    let mut folds = vec![Vec::new(); k];
    for (i, &f) in assign.iter().enumerate() {
        folds[f].push(i);
    }
    Ok(FoldPlan { folds })
}

/// Hill-climbs on `Σ_p Σ_f count[p][f]²` with swaps of same-label epochs between
/// folds, which keep fold sizes and class counts fixed.
fn repair_participants<S: EpochStore + ?Sized>(
    store: &S,
    assign: &mut [usize],
    k: usize,
    participants: &[u16],
) {
    let pidx: BTreeMap<u16, usize> = participants
        .iter()
        .enumerate()
        .map(|(i, &p)| (p, i))
        .collect();
    let np = participants.len();
    // members[label][p][f] = epoch indices
    let mut members = vec![vec![vec![Vec::new(); k]; np]; 2];
    for (i, &f) in assign.iter().enumerate() {
        members[store.label(i).class()][pidx[&store.participant(i)]][f].push(i);
    }
    let count =
        |m: &Vec<Vec<Vec<Vec<usize>>>>, p: usize, f: usize| m[0][p][f].len() + m[1][p][f].len();
    loop {
        let mut improved = false;
        for l in 0..2 {
            for p in 0..np {
                for q in 0..np {
                    if p == q {
                        continue;
                    }
                    for a in 0..k {
                        if members[l][p][a].is_empty() {
                            continue;
                        }
                        for b in 0..k {
                            if a == b || members[l][q][b].is_empty() {
                                continue;
                            }
                            let (pa, pb) =
                                (count(&members, p, a) as i64, count(&members, p, b) as i64);
                            let (qa, qb) =
                                (count(&members, q, a) as i64, count(&members, q, b) as i64);
                            let delta = 2 * (pb - pa + 1) + 2 * (qa - qb + 1);
                            if delta < 0 {
                                let ep = members[l][p][a].pop().expect("nonempty");
                                let eq = members[l][q][b].pop().expect("nonempty");
                                members[l][p][b].push(ep);
                                members[l][q][a].push(eq);
                                assign[ep] = b;
                                assign[eq] = a;
                                improved = true;
                            }
                        }
                    }
                }
            }
        }
        if !improved {
            break;
        }
    }
}

/// Checks the plan invariants; returns a description of the first violation.
///
/// - folds partition `0..n`
/// - fold sizes differ by at most one
/// - each fold's count of each class is within one of `fold size × global class share`
/// - each participant's per-fold counts differ by at most `max_participant_spread`
pub fn check_fold_plan<S: EpochStore + ?Sized>(
    store: &S,
    plan: &FoldPlan,
    max_participant_spread: usize,
) -> Result<(), String> {
    let n = store.len();
    let mut seen = vec![false; n];
    for (f, fold) in plan.folds.iter().enumerate() {
        for &i in fold {
            if i >= n || seen[i] {
                return Err(format!("index {i} repeated or out of range (fold {f})"));
            }
            seen[i] = true;
        }
    }
    if let Some(i) = seen.iter().position(|s| !s) {
        return Err(format!("index {i} not assigned"));
    }
    let sizes: Vec<usize> = plan.folds.iter().map(Vec::len).collect();
    let (lo, hi) = (
        sizes.iter().min().copied().unwrap_or(0),
        sizes.iter().max().copied().unwrap_or(0),
    );
    if hi - lo > 1 {
        return Err(format!("fold sizes {sizes:?} differ by more than one"));
    }
    let n_success = (0..n).filter(|&i| store.label(i).class() == 1).count();
    let share = n_success as f64 / n as f64;
    for (f, fold) in plan.folds.iter().enumerate() {
        let s = fold
            .iter()
            .filter(|&&i| store.label(i).class() == 1)
            .count() as f64;
        let expected = fold.len() as f64 * share;
        if (s - expected).abs() > 1.0 + 1e-9 {
            return Err(format!(
                "fold {f}: {s} successes, expected {expected:.2} ± 1"
            ));
        }
    }
    let mut per: BTreeMap<u16, Vec<usize>> = BTreeMap::new();
    for (f, fold) in plan.folds.iter().enumerate() {
        for &i in fold {
            per.entry(store.participant(i))
                .or_insert_with(|| vec![0; plan.k()])[f] += 1;
        }
    }
    for (p, counts) in per {
        let spread = counts.iter().max().unwrap() - counts.iter().min().unwrap();
        if spread > max_participant_spread {
            return Err(format!("participant {p}: per-fold counts {counts:?}"));
        }
    }
    Ok(())
}
