//! Multi-label stratified k-fold assignment by iterative stratification.
//!
//! Examples of the label with the fewest unassigned examples are placed
//! first, each into the fold that most wants that label. A fold is only
//! eligible while the placement keeps every label of the example within
//! `[floor(f/k), ceil(f/k)]`. If the greedy pass still leaves a label out
//! of bounds, a randomized local search moves examples between folds, and
//! the whole pass is retried with a fresh shuffle when that fails too.

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::MultilabelError;

/// Randomized greedy restarts tried before settling for the least-violating
/// assignment.
const MAX_ATTEMPTS: u64 = 32;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldAssignment {
    k: usize,
    folds: Vec<usize>,
}

impl FoldAssignment {
    pub fn k(&self) -> usize {
        self.k
    }

    /// Fold index of every example.
    pub fn folds(&self) -> &[usize] {
        &self.folds
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![0; self.k];
        for &f in &self.folds {
            s[f] += 1;
        }
        s
    }

    /// `(train, test)` example indices for fold `f`.
    pub fn split(&self, f: usize) -> (Vec<usize>, Vec<usize>) {
        let mut train = Vec::new();
        let mut test = Vec::new();
        for (i, &g) in self.folds.iter().enumerate() {
            if g == f {
                test.push(i);
            } else {
                train.push(i);
            }
        }
        (train, test)
    }
}

struct State {
    k: usize,
    n: usize,
    freq: Vec<usize>,
    counts: Vec<Vec<usize>>,
    size: Vec<usize>,
}

impl State {
    fn bounded(&self, l: usize) -> bool {
        self.freq[l] >= self.k
    }

    /// Number of folds currently holding `ceil(f/k)` examples of `l` when
    /// `f` is not divisible by `k`.
    fn at_top(&self, l: usize) -> usize {
        let q = self.freq[l] / self.k;
        self.counts.iter().filter(|c| c[l] > q).count()
    }

    fn can_take(&self, fold: usize, labels: &[usize]) -> bool {
        labels.iter().all(|&l| {
            if !self.bounded(l) {
                return true;
            }
            let (q, r) = (self.freq[l] / self.k, self.freq[l] % self.k);
            let c = self.counts[fold][l];
            c < q || (c == q && self.at_top(l) < r)
        })
    }

    fn add(&mut self, fold: usize, labels: &[usize]) {
        for &l in labels {
            self.counts[fold][l] += 1;
        }
        self.size[fold] += 1;
    }

    fn remove(&mut self, fold: usize, labels: &[usize]) {
        for &l in labels {
            self.counts[fold][l] -= 1;
        }
        self.size[fold] -= 1;
    }

    /// Total distance of all bounded labels from their per-fold bounds.
    fn violation(&self) -> usize {
        (0..self.freq.len())
            .filter(|&l| self.bounded(l))
            .map(|l| {
                let lo = self.freq[l] / self.k;
                let hi = self.freq[l].div_ceil(self.k);
                self.counts
                    .iter()
                    .map(|c| c[l].saturating_sub(hi) + lo.saturating_sub(c[l]))
                    .sum::<usize>()
            })
            .sum()
    }

    fn label_desire(&self, fold: usize, l: usize) -> i64 {
        self.freq[l] as i64 - (self.k * self.counts[fold][l]) as i64
    }

    fn size_desire(&self, fold: usize) -> i64 {
        self.n as i64 - (self.k * self.size[fold]) as i64
    }
}

fn pick<T: PartialOrd + Copy>(
    candidates: &[usize],
    key: impl Fn(usize) -> T,
    rng: &mut ChaCha8Rng,
) -> usize {
    let best = candidates
        .iter()
        .map(|&j| key(j))
        .fold(None, |acc: Option<T>, v| match acc {
            Some(a) if a >= v => Some(a),
            _ => Some(v),
        })
        .expect("at least one candidate");
    let tied: Vec<usize> = candidates
        .iter()
        .copied()
        .filter(|&j| key(j) == best)
        .collect();
    tied[rng.gen_range(0..tied.len())]
}

/// Assigns each example to one of `k` folds, stratifying every label.
pub fn stratified_kfold(
    labelsets: &[BTreeSet<String>],
    k: usize,
    seed: u64,
) -> Result<FoldAssignment, MultilabelError> {
    let n = labelsets.len();
    if k < 2 || k > n {
        return Err(MultilabelError::InvalidK { k, n });
    }
    let names: Vec<&String> = labelsets
        .iter()
        .flatten()
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let ex: Vec<Vec<usize>> = labelsets
        .iter()
        .map(|s| {
            s.iter()
                .map(|l| names.binary_search(&l).expect("collected above"))
                .collect()
        })
        .collect();
    let mut freq = vec![0; names.len()];
    for labels in &ex {
        for &l in labels {
            freq[l] += 1;
        }
    }

    let mut best: Option<(usize, Vec<usize>)> = None;
    for attempt in 0..MAX_ATTEMPTS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(attempt);
        let (folds, v) = greedy_pass(&ex, &freq, k, &mut rng);
        if best.as_ref().map_or(true, |(bv, _)| v < *bv) {
            best = Some((v, folds));
        }
        if v == 0 {
            break;
        }
    }
    let (v, folds) = best.expect("at least one attempt");
    if v > 0 {
        log::warn!("stratification left {v} label-fold counts outside their bounds");
    }
    Ok(FoldAssignment { k, folds })
}

/// One randomized greedy placement followed by local repair. Returns the
/// assignment and its remaining bound violation.
fn greedy_pass(
    ex: &[Vec<usize>],
    freq: &[usize],
    k: usize,
    rng: &mut ChaCha8Rng,
) -> (Vec<usize>, usize) {
    let n = ex.len();
    let mut order: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        order.swap(i, rng.gen_range(0..=i));
    }

    let mut st = State {
        k,
        n,
        freq: freq.to_vec(),
        counts: vec![vec![0; freq.len()]; k],
        size: vec![0; k],
    };
    let mut fold_of: Vec<Option<usize>> = vec![None; n];
    let mut remaining = freq.to_vec();
    let all_folds: Vec<usize> = (0..k).collect();

    while let Some(l) = (0..remaining.len())
        .filter(|&l| remaining[l] > 0)
        .min_by_key(|&l| (remaining[l], l))
    {
        for &e in &order {
            if fold_of[e].is_some() || !ex[e].contains(&l) {
                continue;
            }
            let feasible: Vec<usize> = all_folds
                .iter()
                .copied()
                .filter(|&j| st.can_take(j, &ex[e]))
                .collect();
            let candidates = if feasible.is_empty() {
                &all_folds
            } else {
                &feasible
            };
            let j = pick(
                candidates,
                |j| (st.label_desire(j, l), st.size_desire(j)),
                rng,
            );
            st.add(j, &ex[e]);
            fold_of[e] = Some(j);
            for &m in &ex[e] {
                remaining[m] -= 1;
            }
        }
    }
    for &e in &order {
        if fold_of[e].is_none() {
            let j = pick(&all_folds, |j| st.size_desire(j), rng);
            st.add(j, &ex[e]);
            fold_of[e] = Some(j);
        }
    }
    let mut folds: Vec<usize> = fold_of
        .into_iter()
        .map(|f| f.expect("every example placed"))
        .collect();
    let v = repair(&mut st, &mut folds, ex, rng);
    (folds, v)
}

/// Noisy local search over single-example moves. The objective ranks bound
/// violation first and fold-size imbalance second. Each step targets one
/// out-of-bounds (label, fold) pair, or the largest fold once every label
/// fits, and usually takes the best move for it; occasionally a random one
/// to escape plateaus. Sizes spread by `k` or more also accept sideways
/// moves. Bounds are not always jointly satisfiable, so the search stops
/// after a stretch without progress. The best assignment seen is restored at the end.
fn repair(st: &mut State, folds: &mut [usize], ex: &[Vec<usize>], rng: &mut ChaCha8Rng) -> usize {
    let n = folds.len();
    let k = st.k;
    let size_dev = |st: &State| st.size.iter().map(|&s| (k * s).abs_diff(n)).sum::<usize>();
    let objective = |st: &State| st.violation() * (k * n + 1) + size_dev(st);
    let mut cur = objective(st);
    let mut best = (cur, folds.to_vec());
    let budget = 200 * n + 2000;
    let patience = 10 * n + 200;
    let mut since_best = 0;

    for _ in 0..budget {
        if since_best > patience {
            break;
        }
        since_best += 1;
        let v = st.violation();
        let spread = st.size.iter().max().unwrap() - st.size.iter().min().unwrap();
        if v == 0 && spread <= 1 {
            break;
        }
        // (example, destination) candidates for this step
        let mut moves: Vec<(usize, usize)> = Vec::new();
        if v > 0 {
            let mut bad = Vec::new();
            for l in (0..st.freq.len()).filter(|&l| st.bounded(l)) {
                let lo = st.freq[l] / k;
                let hi = st.freq[l].div_ceil(k);
                for j in 0..k {
                    if st.counts[j][l] > hi || st.counts[j][l] < lo {
                        bad.push((l, j, st.counts[j][l] > hi));
                    }
                }
            }
            let (l, j, over) = bad[rng.gen_range(0..bad.len())];
            for e in (0..n).filter(|&e| ex[e].contains(&l)) {
                if over && folds[e] == j {
                    moves.extend((0..k).filter(|&t| t != j).map(|t| (e, t)));
                } else if !over && folds[e] != j {
                    moves.push((e, j));
                }
            }
        } else {
            let big = (0..k)
                .max_by_key(|&j| (st.size[j], std::cmp::Reverse(j)))
                .unwrap();
            for e in (0..n).filter(|&e| folds[e] == big) {
                moves.extend((0..k).filter(|&t| t != big).map(|t| (e, t)));
            }
        }
        if moves.is_empty() {
            break;
        }

        let score = |st: &mut State, (e, t): (usize, usize), from: usize| {
            st.remove(from, &ex[e]);
            st.add(t, &ex[e]);
            let o = objective(st);
            st.remove(t, &ex[e]);
            st.add(from, &ex[e]);
            o
        };
        let chosen = if v > 0 && rng.gen_bool(0.15) {
            moves[rng.gen_range(0..moves.len())]
        } else {
            let scored: Vec<usize> = moves.iter().map(|&m| score(st, m, folds[m.0])).collect();
            let min = *scored.iter().min().unwrap();
            if v == 0 && min >= cur && spread < k {
                break;
            }
            let tied: Vec<usize> = (0..moves.len()).filter(|&i| scored[i] == min).collect();
            moves[tied[rng.gen_range(0..tied.len())]]
        };
        let (e, t) = chosen;
        st.remove(folds[e], &ex[e]);
        st.add(t, &ex[e]);
        folds[e] = t;
        cur = objective(st);
        if cur < best.0 {
            best = (cur, folds.to_vec());
            since_best = 0;
        }
    }

    if best.1 != folds {
        for e in 0..n {
            if folds[e] != best.1[e] {
                st.remove(folds[e], &ex[e]);
                st.add(best.1[e], &ex[e]);
                folds[e] = best.1[e];
            }
        }
    }
    st.violation()
}
