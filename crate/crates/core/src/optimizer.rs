//! Bin classification, batch ordering and route planning.
//!
//! Bins are split by their batch profile and each class gets its own
//! ordering strategy:
//!
//! - many batches: exact minimum-switching-cost order by dynamic
//!   programming over subsets (Held-Karp for the open path), or a
//!   nearest-neighbour heuristic past the exact cutoff;
//! - few batches of mixed category: ABC rule sort;
//! - everything else: storage-location order.
//!
//! The exact order minimizes the sequence-dependent switching cost
//! `sum switch_cost(b_j, b_{j+1})` over all permutations of a bin's batches.
//!
//! Bins are then prioritized by ascending `score(b) = a*hu_count +
//! b*batch_count` and dealt to operators longest-processing-time first.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::reference::{BatchCode, BinCode, Category, ReferenceInventory};

const SECS_PER_DAY: f64 = 86_400.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OptimizerError {
    #[error("{n} batches exceed the exact cutoff of {cutoff}; use the greedy order")]
    TooManyBatches { n: usize, cutoff: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchEntry {
    pub code: BatchCode,
    pub category: Category,
    pub shelved_at: i64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BinProfile {
    pub bin_code: BinCode,
    /// Batches in storage-location order.
    pub batches: Vec<BatchEntry>,
    pub hu_count: u64,
}

impl BinProfile {
    pub fn batch_count(&self) -> usize {
        self.batches.len()
    }

    pub fn distinct_categories(&self) -> usize {
        self.batches.iter().map(|b| b.category).collect::<BTreeSet<_>>().len()
    }
}

/// Profiles for every bin of the reference. Storage order is batch-code
/// order, which is how the reference keeps them.
pub fn profiles_from_reference(reference: &ReferenceInventory) -> Vec<BinProfile> {
    reference
        .bins()
        .iter()
        .map(|(bin, batches)| BinProfile {
            bin_code: bin.clone(),
            batches: batches
                .keys()
                .map(|code| {
                    let meta = reference.batch_meta(code).expect("every batch has metadata");
                    BatchEntry {
                        code: code.clone(),
                        category: meta.category,
                        shelved_at: meta.shelved_at,
                    }
                })
                .collect(),
            hu_count: batches.values().map(|u| u.len() as u64).sum(),
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum BinClass {
    SingleBatchLarge,
    MultiBatch,
    FewBatch,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Thresholds {
    pub few_batch_max: usize,
    pub large_hu_min: u64,
    pub exact_cutoff: usize,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds {
            few_batch_max: 3,
            large_hu_min: 100,
            exact_cutoff: 15,
        }
    }
}

pub fn classify_bin(profile: &BinProfile, thresholds: &Thresholds) -> BinClass {
    let n = profile.batch_count();
    if n == 1 && profile.hu_count >= thresholds.large_hu_min {
        BinClass::SingleBatchLarge
    } else if n <= thresholds.few_batch_max {
        BinClass::FewBatch
    } else {
        BinClass::MultiBatch
    }
}

pub trait SwitchCost {
    /// Seconds lost moving from checking `from` to checking `to`.
    fn switch_cost(&self, from: &BatchEntry, to: &BatchEntry) -> f64;
}

impl<F: Fn(&BatchEntry, &BatchEntry) -> f64> SwitchCost for F {
    fn switch_cost(&self, from: &BatchEntry, to: &BatchEntry) -> f64 {
        self(from, to)
    }
}

/// Category distance times `category_step` seconds, plus `gap_cost`
/// seconds per `gap_period_days` of shelving-time difference. Zero for a
/// batch against itself.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DefaultSwitchCost {
    pub category_step: f64,
    pub gap_cost: f64,
    pub gap_period_days: f64,
}

impl Default for DefaultSwitchCost {
    fn default() -> Self {
        DefaultSwitchCost {
            category_step: 5.0,
            gap_cost: 2.0,
            gap_period_days: 30.0,
        }
    }
}

impl SwitchCost for DefaultSwitchCost {
    fn switch_cost(&self, from: &BatchEntry, to: &BatchEntry) -> f64 {
        if from.code == to.code {
            return 0.0;
        }
        let steps = (from.category.rank() as f64 - to.category.rank() as f64).abs();
        let gap_days = (from.shelved_at - to.shelved_at).unsigned_abs() as f64 / SECS_PER_DAY;
        self.category_step * steps + self.gap_cost * gap_days / self.gap_period_days
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostModel {
    pub switch: DefaultSwitchCost,
    pub per_unit_scan_cost: f64,
    /// Score coefficient on handling units; defaults to `per_unit_scan_cost`.
    pub score_hu_coef: Option<f64>,
    /// Score coefficient on batches; defaults to the mean switch cost.
    pub score_batch_coef: Option<f64>,
}

impl Default for CostModel {
    fn default() -> Self {
        CostModel {
            switch: DefaultSwitchCost::default(),
            per_unit_scan_cost: 2.0,
            score_hu_coef: None,
            score_batch_coef: None,
        }
    }
}

impl SwitchCost for CostModel {
    fn switch_cost(&self, from: &BatchEntry, to: &BatchEntry) -> f64 {
        self.switch.switch_cost(from, to)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreWeights {
    pub hu: f64,
    pub batch: f64,
}

impl ScoreWeights {
    pub fn score(&self, profile: &BinProfile) -> f64 {
        self.hu * profile.hu_count as f64 + self.batch * profile.batch_count() as f64
    }
}

impl CostModel {
    /// Resolves the score coefficients, filling defaults from `profiles`.
    pub fn score_weights(&self, profiles: &[BinProfile]) -> ScoreWeights {
        ScoreWeights {
            hu: self.score_hu_coef.unwrap_or(self.per_unit_scan_cost),
            batch: self
                .score_batch_coef
                .unwrap_or_else(|| mean_switch_cost(profiles, self)),
        }
    }
}

/// Mean switch cost over ordered pairs of distinct batches sharing a bin.
pub fn mean_switch_cost(profiles: &[BinProfile], cost: &impl SwitchCost) -> f64 {
    let mut total = 0.0;
    let mut pairs = 0u64;
    for p in profiles {
        for a in &p.batches {
            for b in &p.batches {
                if a.code != b.code {
                    total += cost.switch_cost(a, b);
                    pairs += 1;
                }
            }
        }
    }
    if pairs == 0 {
        0.0
    } else {
        total / pairs as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchOrder {
    pub batches: Vec<BatchCode>,
    pub cost: f64,
}

pub fn sequence_cost(batches: &[BatchEntry], cost: &impl SwitchCost) -> f64 {
    batches
        .windows(2)
        .map(|w| cost.switch_cost(&w[0], &w[1]))
        .sum()
}

fn order_of(batches: &[BatchEntry], idx: &[usize], cost: f64) -> BatchOrder {
    BatchOrder {
        batches: idx.iter().map(|&i| batches[i].code.clone()).collect(),
        cost,
    }
}

/// Exact minimum total switching cost over all orders of `batches`.
pub fn order_batches_optimal(
    batches: &[BatchEntry],
    cost: &impl SwitchCost,
    exact_cutoff: usize,
) -> Result<BatchOrder, OptimizerError> {
    let n = batches.len();
    if n > exact_cutoff || n > 20 {
        return Err(OptimizerError::TooManyBatches {
            n,
            cutoff: exact_cutoff.min(20),
        });
    }
    if n <= 1 {
        return Ok(order_of(batches, &(0..n).collect::<Vec<_>>(), 0.0));
    }

    let matrix: Vec<Vec<f64>> = batches
        .iter()
        .map(|a| batches.iter().map(|b| cost.switch_cost(a, b)).collect())
        .collect();

    let states = 1usize << n;
    // best[mask * n + last]: cheapest path visiting `mask` and ending at `last`.
    let mut best = vec![f64::INFINITY; states * n];
    let mut parent = vec![u8::MAX; states * n];
    for i in 0..n {
        best[(1 << i) * n + i] = 0.0;
    }
    for mask in 1..states {
        for last in 0..n {
            let here = best[mask * n + last];
            if mask & (1 << last) == 0 || here.is_infinite() {
                continue;
            }
            for next in 0..n {
                if mask & (1 << next) != 0 {
                    continue;
                }
                let m2 = mask | (1 << next);
                let candidate = here + matrix[last][next];
                if candidate < best[m2 * n + next] {
                    best[m2 * n + next] = candidate;
                    parent[m2 * n + next] = last as u8;
                }
            }
        }
    }

    let full = states - 1;
    let (mut last, total) = (0..n)
        .map(|l| (l, best[full * n + l]))
        .fold((0, f64::INFINITY), |acc, x| if x.1 < acc.1 { x } else { acc });

    let mut path = Vec::with_capacity(n);
    let mut mask = full;
    loop {
        path.push(last);
        let p = parent[mask * n + last];
        mask &= !(1 << last);
        if p == u8::MAX {
            break;
        }
        last = p as usize;
    }
    path.reverse();
    Ok(order_of(batches, &path, total))
}

/// Nearest-neighbour order starting from the earliest-shelved batch. Falls
/// back to the input order whenever that is no more expensive.
pub fn order_batches_greedy(batches: &[BatchEntry], cost: &impl SwitchCost) -> BatchOrder {
    let n = batches.len();
    let input: Vec<usize> = (0..n).collect();
    let input_cost = sequence_cost(batches, cost);
    if n <= 2 {
        return order_of(batches, &input, input_cost);
    }

    let start = (0..n).min_by_key(|&i| batches[i].shelved_at).unwrap();
    let mut visited = vec![false; n];
    visited[start] = true;
    let mut path = vec![start];
    let mut total = 0.0;
    let mut current = start;
    for _ in 1..n {
        let mut pick = None::<(usize, f64)>;
        for j in (0..n).filter(|&j| !visited[j]) {
            let c = cost.switch_cost(&batches[current], &batches[j]);
            if pick.is_none_or(|(_, best)| c < best) {
                pick = Some((j, c));
            }
        }
        let (j, c) = pick.unwrap();
        visited[j] = true;
        path.push(j);
        total += c;
        current = j;
    }

    if total < input_cost {
        order_of(batches, &path, total)
    } else {
        order_of(batches, &input, input_cost)
    }
}

/// Stable sort by category (A, B, C), then shelving time, then batch code.
pub fn sort_batches_abc(batches: &[BatchEntry]) -> Vec<BatchEntry> {
    let mut sorted = batches.to_vec();
    sorted.sort_by(|a, b| {
        (a.category, a.shelved_at, &a.code).cmp(&(b.category, b.shelved_at, &b.code))
    });
    sorted
}

pub fn category_transitions(batches: &[BatchEntry]) -> usize {
    batches
        .windows(2)
        .filter(|w| w[0].category != w[1].category)
        .count()
}

/// Repeatedly takes the remaining bin with the lowest score, breaking ties
/// by bin code.
pub fn greedy_prioritize(profiles: &[BinProfile], weights: &ScoreWeights) -> Vec<BinCode> {
    let mut remaining: Vec<(f64, &BinProfile)> =
        profiles.iter().map(|p| (weights.score(p), p)).collect();
    let mut selected = Vec::with_capacity(remaining.len());
    while !remaining.is_empty() {
        let mut best = 0;
        for i in 1..remaining.len() {
            let (s, p) = remaining[i];
            let (bs, bp) = remaining[best];
            if s < bs || (s == bs && p.bin_code < bp.bin_code) {
                best = i;
            }
        }
        selected.push(remaining.swap_remove(best).1.bin_code.clone());
    }
    selected
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum OrderStrategy {
    StorageOrder,
    ExactDp,
    Greedy,
    AbcSort,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinRoute {
    pub bin_code: BinCode,
    pub class: BinClass,
    pub strategy: OrderStrategy,
    pub batch_order: Vec<BatchCode>,
    pub score: f64,
    /// Scan time plus switching cost of the chosen order, in seconds.
    pub estimated_cost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatorRoute {
    /// 1-based operator slot.
    pub operator: usize,
    pub bins: Vec<BinRoute>,
    /// Sum of bin scores assigned to this operator.
    pub load: f64,
    pub estimated_cost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoutePlan {
    pub operators: Vec<OperatorRoute>,
    pub total_estimated_cost: f64,
    /// Bins with no batches, left out of the routes.
    pub empty_bins: Vec<BinCode>,
}

/// Chooses the batch order for one bin according to its class.
pub fn plan_bin(
    profile: &BinProfile,
    cost: &CostModel,
    thresholds: &Thresholds,
) -> (BinClass, OrderStrategy, BatchOrder) {
    let class = classify_bin(profile, thresholds);
    let storage = || {
        BatchOrder {
            batches: profile.batches.iter().map(|b| b.code.clone()).collect(),
            cost: sequence_cost(&profile.batches, cost),
        }
    };
    match class {
        BinClass::MultiBatch => match order_batches_optimal(&profile.batches, cost, thresholds.exact_cutoff) {
            Ok(order) => (class, OrderStrategy::ExactDp, order),
            Err(OptimizerError::TooManyBatches { .. }) => {
                (class, OrderStrategy::Greedy, order_batches_greedy(&profile.batches, cost))
            }
        },
        BinClass::FewBatch if profile.distinct_categories() > 1 => {
            let sorted = sort_batches_abc(&profile.batches);
            let order = BatchOrder {
                cost: sequence_cost(&sorted, cost),
                batches: sorted.into_iter().map(|b| b.code).collect(),
            };
            (class, OrderStrategy::AbcSort, order)
        }
        _ => (class, OrderStrategy::StorageOrder, storage()),
    }
}

/// Longest-processing-time assignment: jobs in descending weight go to the
/// currently least-loaded slot (lowest index on ties). Returns the slot of
/// each job.
pub fn lpt_assign(weights: &[f64], slots: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| weights[b].total_cmp(&weights[a]).then(a.cmp(&b)));
    let mut loads = vec![0.0f64; slots.max(1)];
    let mut assigned = vec![0; weights.len()];
    for job in order {
        let slot = (0..loads.len())
            .min_by(|&a, &b| loads[a].total_cmp(&loads[b]).then(a.cmp(&b)))
            .unwrap();
        loads[slot] += weights[job];
        assigned[job] = slot;
    }
    assigned
}

pub fn build_route_plan(
    profiles: &[BinProfile],
    k_operators: usize,
    cost: &CostModel,
    thresholds: &Thresholds,
) -> RoutePlan {
    let k = k_operators.max(1);
    let (in_scope, empty): (Vec<&BinProfile>, Vec<&BinProfile>) =
        profiles.iter().partition(|p| p.batch_count() > 0);
    let in_scope: Vec<BinProfile> = in_scope.into_iter().cloned().collect();
    let weights = cost.score_weights(&in_scope);

    let priority = greedy_prioritize(&in_scope, &weights);
    let by_code: std::collections::HashMap<&str, &BinProfile> =
        in_scope.iter().map(|p| (p.bin_code.as_str(), p)).collect();
    let ordered: Vec<&BinProfile> = priority.iter().map(|c| by_code[c.as_str()]).collect();
    // Ties in score are broken by priority position, i.e. bin code.
    let scores: Vec<f64> = ordered.iter().map(|p| weights.score(p)).collect();
    let slots = lpt_assign(&scores, k);

    let mut operators: Vec<OperatorRoute> = (0..k)
        .map(|i| OperatorRoute {
            operator: i + 1,
            bins: Vec::new(),
            load: 0.0,
            estimated_cost: 0.0,
        })
        .collect();
    for (i, profile) in ordered.iter().enumerate() {
        let (class, strategy, order) = plan_bin(profile, cost, thresholds);
        let estimated = cost.per_unit_scan_cost * profile.hu_count as f64 + order.cost;
        let route = &mut operators[slots[i]];
        route.load += scores[i];
        route.estimated_cost += estimated;
        route.bins.push(BinRoute {
            bin_code: profile.bin_code.clone(),
            class,
            strategy,
            batch_order: order.batches,
            score: scores[i],
            estimated_cost: estimated,
        });
    }
    let total_estimated_cost = operators.iter().map(|o| o.estimated_cost).sum();

    RoutePlan {
        operators,
        total_estimated_cost,
        empty_bins: empty.into_iter().map(|p| p.bin_code.clone()).collect(),
    }
}

/// `operator,position,bin_code,batch_order` with batches joined by `;`.
pub fn route_plan_csv(plan: &RoutePlan) -> String {
    let mut out = String::from("operator,position,bin_code,batch_order\n");
    for op in &plan.operators {
        for (pos, bin) in op.bins.iter().enumerate() {
            out.push_str(&format!(
                "{},{},{},{}\n",
                op.operator,
                pos + 1,
                bin.bin_code,
                bin.batch_order.join(";")
            ));
        }
    }
    out
}
