//! Typed budget ledgers and the budget-driven greedy selection: chains
//! are classified by rounded densities, a reference solution's spend is
//! summarized per (cell, type, prefix length), and a phased fractional
//! greedy rebuilds a covering of comparable cost from those budgets
//! alone.

use crate::dptree::{check_consistent, singleton_families, CandidateFamily, CellTree, ConsistencyReport, ConsistentSolution};
use crate::geom::{intersects, ChainId, Geometry, Selection};
use crate::grid::CellId;
use crate::rat::{floor_log, rat, ratio};
use crate::{Error, Result};
use num::{BigRational, One, Zero};
use std::collections::BTreeMap;

/// A rounded density: the exponent k of the power (1+eps)^k just below
/// cost/capacity, or infinity for missing rectangles.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Density {
    Finite(i64),
    Infinite,
}

impl Density {
    pub fn value(&self, eps_inv: i64) -> Option<BigRational> {
        match self {
            Density::Finite(k) => Some(crate::rat::pow_int(&one_plus_eps(eps_inv), *k)),
            Density::Infinite => None,
        }
    }
}

pub fn one_plus_eps(eps_inv: i64) -> BigRational {
    ratio(eps_inv + 1, eps_inv)
}

/// Density of one rectangle: exact integer exponent via rational
/// comparison.
pub fn density_of(cost: i64, cap: i64, eps_inv: i64) -> Density {
    debug_assert!(cap >= 1 && cost >= 1);
    Density::Finite(floor_log(&one_plus_eps(eps_inv), &ratio(cost, cap)))
}

/// Chain type: densities of the two leftmost rectangles plus the length.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct RectType {
    pub rho: Density,
    pub rho2: Density,
    pub s: usize,
}

pub fn type_of(geom: &Geometry, chain: ChainId, eps_inv: i64) -> RectType {
    let rects = &geom.chains[chain].rects;
    let rho = match rects.first() {
        Some(&r) => density_of(geom.rects[r].cost, geom.rects[r].cap, eps_inv),
        None => Density::Infinite,
    };
    let rho2 = match rects.get(1) {
        Some(&r) => density_of(geom.rects[r].cost, geom.rects[r].cap, eps_inv),
        None => Density::Infinite,
    };
    RectType { rho, rho2, s: rects.len() }
}

/// Cost of the first `k` rectangles of a chain.
pub fn prefix_cost(geom: &Geometry, chain: ChainId, k: usize) -> i64 {
    geom.chains[chain]
        .rects
        .iter()
        .take(k)
        .map(|&r| geom.rects[r].cost)
        .sum()
}

/// Oracle-derived budgets indexed by (cell, chain type, prefix length).
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct BudgetLedger {
    pub entries: BTreeMap<(CellId, RectType, usize), i64>,
}

impl BudgetLedger {
    pub fn total(&self) -> i64 {
        self.entries.values().sum()
    }

    pub fn to_json(&self, geom: &Geometry) -> String {
        let rows: Vec<serde_json::Value> = self
            .entries
            .iter()
            .map(|((cell, tau, s_prime), budget)| {
                let dens = |d: &Density| match d {
                    Density::Finite(k) => serde_json::json!(k),
                    Density::Infinite => serde_json::json!("inf"),
                };
                serde_json::json!({
                    "cell": {"level": cell.level, "beg": geom.grid.beg(*cell)},
                    "type": {"rhoExp": dens(&tau.rho), "rho2Exp": dens(&tau.rho2), "s": tau.s},
                    "sPrime": s_prime,
                    "budget": budget,
                })
            })
            .collect();
        serde_json::to_string_pretty(&rows).unwrap() + "\n"
    }
}

/// Summarizes a prefix-closed selection: for each chain from which it
/// takes exactly s' rectangles, the cost of those rectangles is charged
/// to (cell, type, s').
pub fn budgets_from_solution(geom: &Geometry, sel: &Selection, eps_inv: i64) -> BudgetLedger {
    let lens = geom.prefix_lens(sel);
    let mut entries: BTreeMap<(CellId, RectType, usize), i64> = BTreeMap::new();
    for (cid, &len) in lens.iter().enumerate() {
        if len == 0 {
            continue;
        }
        let tau = type_of(geom, cid, eps_inv);
        let key = (geom.chains[cid].cell, tau, len);
        *entries.entry(key).or_insert(0) += prefix_cost(geom, cid, len);
    }
    BudgetLedger { entries }
}

/// A phase budget: a finite amount or unbounded.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Budget {
    Fin(BigRational),
    Inf,
}

impl Budget {
    fn admits(&self, cost: i64) -> bool {
        match self {
            Budget::Inf => true,
            Budget::Fin(b) => &rat(cost) <= b,
        }
    }
}

pub type BudgetVec = BTreeMap<usize, Budget>;

pub fn budget_vec_from_ints(v: &BTreeMap<usize, i64>) -> BudgetVec {
    v.iter().map(|(&k, &b)| (k, Budget::Fin(rat(b)))).collect()
}

/// Result of one greedy run: the rounded-up selection, the fractional
/// profile per chain, and the fractional spend grouped by the exact
/// support size of each chain.
#[derive(Debug, Clone)]
pub struct GreedyOutcome {
    pub selection: Selection,
    pub frac: Vec<(ChainId, Vec<BigRational>)>,
    pub spend_by_support: BTreeMap<usize, BigRational>,
    pub fractional_cost: BigRational,
}

/// The phased fractional greedy over the chains of one (cell, type)
/// class. Phases run from the full prefix length down to one; in each
/// phase the eligible chains (those whose some affordable prefix reaches
/// the phase index) are filled bottom row first, spending at most
/// (1+eps) times the phase budget; every touched prefix coordinate is
/// finally rounded up.
pub fn greedy_select(
    geom: &Geometry,
    cell: CellId,
    tau: &RectType,
    budgets: &BudgetVec,
    job_filter: impl Fn(usize) -> bool,
    eps_inv: i64,
) -> Result<GreedyOutcome> {
    let s = tau.s;
    let mut chains: Vec<ChainId> = geom
        .chains_by_cell
        .get(&cell)
        .map(|v| v.clone())
        .unwrap_or_default()
        .into_iter()
        .filter(|&c| type_of(geom, c, eps_inv) == *tau && job_filter(geom.chains[c].row))
        .collect();
    // bottom rows (largest) first: lower rectangles meet more rays
    chains.sort_by_key(|&c| std::cmp::Reverse(geom.chains[c].row));

    let zero_budget = Budget::Fin(BigRational::zero());
    let budget_at = |k: usize| budgets.get(&k).unwrap_or(&zero_budget);
    let one_eps = one_plus_eps(eps_inv);

    let mut x: Vec<Vec<BigRational>> = chains.iter().map(|_| vec![BigRational::zero(); s]).collect();
    for s_prime in (1..=s).rev() {
        let cap = match budget_at(s_prime) {
            Budget::Inf => None,
            Budget::Fin(b) => Some(&one_eps * b),
        };
        let mut spent = BigRational::zero();
        for (ci, &chain) in chains.iter().enumerate() {
            let available = (s_prime..=s)
                .any(|k| budget_at(k).admits(prefix_cost(geom, chain, k)));
            if !available {
                continue;
            }
            let v = x[ci][s_prime - 1].clone();
            debug_assert!(
                x[ci][..s_prime].iter().all(|y| *y == v),
                "prefix coordinates diverged"
            );
            let room = BigRational::one() - &v;
            if room.is_zero() {
                continue;
            }
            let pc = rat(prefix_cost(geom, chain, s_prime));
            let delta = match &cap {
                None => room,
                Some(c) => {
                    let by_budget = (c - &spent) / &pc;
                    if by_budget < room {
                        by_budget
                    } else {
                        room
                    }
                }
            };
            if delta <= BigRational::zero() {
                if cap.is_some() {
                    break;
                }
                continue;
            }
            for r in 0..s_prime {
                x[ci][r] += &delta;
            }
            spent += &delta * &pc;
            if let Some(c) = &cap {
                if &spent == c {
                    break;
                }
            }
        }
    }

    // round up: select the r-th rectangle wherever its coordinate is
    // positive; the positives form a prefix by construction
    let mut selection = Selection::new();
    let mut fractional_cost = BigRational::zero();
    let mut spend_by_support: BTreeMap<usize, BigRational> = BTreeMap::new();
    for (ci, &chain) in chains.iter().enumerate() {
        let support = x[ci].iter().take_while(|v| !v.is_zero()).count();
        debug_assert!(
            x[ci][support..].iter().all(|v| v.is_zero()),
            "support is not a prefix"
        );
        let mut chain_spend = BigRational::zero();
        for (r, v) in x[ci].iter().enumerate() {
            if !v.is_zero() {
                selection.insert(geom.chains[chain].rects[r]);
                chain_spend += v * rat(geom.rects[geom.chains[chain].rects[r]].cost);
            }
        }
        fractional_cost += &chain_spend;
        if support > 0 {
            *spend_by_support
                .entry(support)
                .or_insert_with(BigRational::zero) += chain_spend;
        }
    }

    // at most one strictly fractional chain per (eligibility kind, coordinate)
    let kind_of = |chain: ChainId| -> usize {
        (1..=s)
            .rev()
            .find(|&k| budget_at(k).admits(prefix_cost(geom, chain, k)))
            .unwrap_or(0)
    };
    for r in 0..s {
        let mut frac_by_kind: BTreeMap<usize, usize> = BTreeMap::new();
        for (ci, &chain) in chains.iter().enumerate() {
            let v = &x[ci][r];
            if !v.is_zero() && *v != BigRational::one() {
                *frac_by_kind.entry(kind_of(chain)).or_insert(0) += 1;
            }
        }
        if let Some((k, n)) = frac_by_kind.iter().find(|(_, &n)| n > 1) {
            return Err(Error::BugTrap(format!(
                "{n} fractional chains of kind {k} at coordinate {}",
                r + 1
            )));
        }
    }

    // cost control: with all-finite budgets the rounded cost stays within
    // (2+eps) of the budget sum
    if budgets.values().all(|b| matches!(b, Budget::Fin(_))) {
        let budget_sum: BigRational = (1..=s)
            .map(|k| match budget_at(k) {
                Budget::Fin(b) => b.clone(),
                Budget::Inf => unreachable!(),
            })
            .sum();
        let bound = (rat(2) + ratio(1, eps_inv)) * &budget_sum;
        let total = rat(geom.cost(&selection));
        if total > bound {
            return Err(Error::BugTrap(format!(
                "greedy cost {total} exceeds (2+eps) budget bound {bound}"
            )));
        }
    }

    Ok(GreedyOutcome {
        selection,
        frac: chains.into_iter().zip(x).collect(),
        spend_by_support,
        fractional_cost,
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DominanceReport {
    Ok,
    PreconditionViolated { s_prime: usize },
    Undominated { ray_index: usize, greedy_cap: i64, reference_cap: i64 },
}

/// Checks that the greedy output built from at-least-reference budgets
/// covers every ray at least as well as the reference does with this
/// (cell, type) class, and that the cost bound holds.
pub fn check_greedy_dominance(
    geom: &Geometry,
    cell: CellId,
    tau: &RectType,
    budgets: &BudgetVec,
    reference: &Selection,
    eps_inv: i64,
) -> Result<DominanceReport> {
    let ref_ledger = budgets_from_solution(geom, reference, eps_inv);
    for s_prime in 1..=tau.s {
        let spent = ref_ledger
            .entries
            .get(&(cell, *tau, s_prime))
            .copied()
            .unwrap_or(0);
        let b = budgets
            .get(&s_prime)
            .cloned()
            .unwrap_or(Budget::Fin(BigRational::zero()));
        if !b.admits(spent) {
            return Ok(DominanceReport::PreconditionViolated { s_prime });
        }
    }
    let out = greedy_select(geom, cell, tau, budgets, |_| true, eps_inv)?;
    let class_rects: Selection = geom
        .chains_by_cell
        .get(&cell)
        .map(|chains| {
            chains
                .iter()
                .filter(|&&c| type_of(geom, c, eps_inv) == *tau)
                .flat_map(|&c| geom.chains[c].rects.iter().copied())
                .collect()
        })
        .unwrap_or_default();
    for (ri, ray) in geom.rays.iter().enumerate() {
        let greedy_cap: i64 = out
            .selection
            .iter()
            .filter(|&&r| intersects(ray, &geom.rects[r]))
            .map(|&r| geom.rects[r].cap)
            .sum();
        let reference_cap: i64 = reference
            .iter()
            .filter(|&&r| class_rects.contains(&r) && intersects(ray, &geom.rects[r]))
            .map(|&r| geom.rects[r].cap)
            .sum();
        if greedy_cap < reference_cap {
            return Ok(DominanceReport::Undominated { ray_index: ri, greedy_cap, reference_cap });
        }
    }
    Ok(DominanceReport::Ok)
}

/// All (cell, type) classes present in a geometry.
pub fn chain_classes(geom: &Geometry, eps_inv: i64) -> Vec<(CellId, RectType)> {
    let mut out: Vec<(CellId, RectType)> = Vec::new();
    for (&cell, chains) in &geom.chains_by_cell {
        let mut types: Vec<RectType> =
            chains.iter().map(|&c| type_of(geom, c, eps_inv)).collect();
        types.sort();
        types.dedup();
        for t in types {
            out.push((cell, t));
        }
    }
    out
}

/// Builds the budget-driven consistent solution: one greedy run per
/// (cell, type) class with the ledger's budgets, the union as the global
/// set, and singleton per-path families.
pub fn build_qpoly_solution(
    geom: &Geometry,
    tree: &CellTree,
    ledger: &BudgetLedger,
    eps_inv: i64,
) -> Result<(ConsistentSolution, CandidateFamily)> {
    let mut global = Selection::new();
    let mut by_class: BTreeMap<(CellId, RectType), BTreeMap<usize, i64>> = BTreeMap::new();
    for ((cell, tau, s_prime), &b) in &ledger.entries {
        by_class.entry((*cell, *tau)).or_default().insert(*s_prime, b);
    }
    for ((cell, tau), ints) in &by_class {
        let budgets = budget_vec_from_ints(ints);
        let out = greedy_select(geom, *cell, tau, &budgets, |_| true, eps_inv)?;
        global.extend(out.selection.iter().copied());
    }
    let bound = (rat(2) + ratio(1, eps_inv)) * rat(ledger.total());
    if rat(geom.cost(&global)) > bound {
        return Err(Error::BugTrap(format!(
            "solution cost {} exceeds (2+eps) ledger bound {bound}",
            geom.cost(&global)
        )));
    }
    let (families, sol) = singleton_families(geom, tree, &global);
    match check_consistent(geom, tree, &sol, &families) {
        ConsistencyReport::Ok => Ok((sol, families)),
        ConsistencyReport::Violation { property, detail } => Err(Error::BugTrap(format!(
            "budget-driven solution violates consistency property {property}: {detail}"
        ))),
    }
}
