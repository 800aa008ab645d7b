//! Smoothed cell budgets, the small/large chain split, critical density
//! pairs, and the path-restricted solution constructions that keep the
//! per-path candidate count small.

use crate::dptree::{singleton_families, CandidateFamily, CellTree, ConsistentSolution};
use crate::geom::{ChainId, Geometry, Selection};
use crate::grid::CellId;
use crate::qpoly::{
    budgets_from_solution, greedy_select, one_plus_eps, type_of, Budget, BudgetVec, Density,
    RectType,
};
use crate::rat::{ceil_multiple, ceil_pow, floor_log, next_multiple, pow_int, rat, ratio};
use crate::{Error, Result};
use num::{BigRational, One, Zero};
use std::collections::{BTreeMap, BTreeSet};

pub type DPair = (Density, Density);

/// A critical-pair value: below every density pair, a concrete pair, or
/// above every pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Crit {
    Bottom,
    Pair(DPair),
    Top,
}

impl Crit {
    /// Component-wise multiplication by a power of (1+eps), expressed as
    /// an exponent shift; the sentinels absorb it.
    pub fn shift(self, exp: i64) -> Crit {
        match self {
            Crit::Pair((a, b)) => {
                let sh = |d: Density| match d {
                    Density::Finite(k) => Density::Finite(k + exp),
                    Density::Infinite => Density::Infinite,
                };
                Crit::Pair((sh(a), sh(b)))
            }
            other => other,
        }
    }
}

/// Evaluated smoothing inequalities; theorems for eps <= 1/2, reported
/// (not enforced) at eps = 1 where the donation series stops converging.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SmoothingBounds {
    pub entrywise_ok: bool,
    pub prime_sum_ok: bool,
    pub round_sum_ok: bool,
    pub add_sum_ok: bool,
}

impl SmoothingBounds {
    pub fn all_ok(&self) -> bool {
        self.entrywise_ok && self.prime_sum_ok && self.round_sum_ok && self.add_sum_ok
    }
}

/// Per-cell budgets: the reference spend, its ancestor-smoothed variant,
/// the power-of-(1+eps) round-up, and the donated extra budget.
#[derive(Debug, Clone)]
pub struct CellBudgets {
    pub eps_inv: i64,
    pub k: i64,
    pub b_opt: BTreeMap<CellId, i64>,
    pub b_prime: BTreeMap<CellId, BigRational>,
    pub b_round: BTreeMap<CellId, BigRational>,
    pub b_add: BTreeMap<CellId, BigRational>,
    pub bounds: SmoothingBounds,
}

impl CellBudgets {
    pub fn b_round_of(&self, c: CellId) -> BigRational {
        self.b_round.get(&c).cloned().unwrap_or_else(BigRational::zero)
    }

    pub fn b_add_of(&self, c: CellId) -> BigRational {
        self.b_add.get(&c).cloned().unwrap_or_else(BigRational::zero)
    }

    /// The donated budget split equally over the (s, s') index pairs.
    pub fn b_add_split(&self, c: CellId) -> BigRational {
        self.b_add_of(c) / rat(self.k.pow(4))
    }

    pub fn to_json(&self, tree: &CellTree) -> String {
        let rows: Vec<serde_json::Value> = tree
            .vertices()
            .iter()
            .map(|&v| {
                serde_json::json!({
                    "level": v.level,
                    "beg": tree.grid.beg(v),
                    "bOpt": self.b_opt.get(&v).copied().unwrap_or(0),
                    "bRound": self.b_round_of(v).to_string(),
                    "bAdd": self.b_add_of(v).to_string(),
                })
            })
            .collect();
        serde_json::to_string_pretty(&rows).unwrap() + "\n"
    }
}

/// Aggregate reference spend per cell.
pub fn cell_aggregate(geom: &Geometry, sel: &Selection) -> BTreeMap<CellId, i64> {
    let mut out: BTreeMap<CellId, i64> = BTreeMap::new();
    for &r in sel {
        *out.entry(geom.rects[r].cell).or_insert(0) += geom.rects[r].cost;
    }
    out
}

/// Ancestor-donation smoothing: every cell passes a geometrically
/// decaying share of its budget to each descendant, then budgets are
/// rounded up to powers of (1+eps). The evaluated inequality bundle is
/// enforced when eps <= 1/2 and carried as a report otherwise.
pub fn smooth_budgets(
    tree: &CellTree,
    b_opt: &BTreeMap<CellId, i64>,
    eps_inv: i64,
) -> Result<CellBudgets> {
    let k = tree.grid.params.k;
    let eps = ratio(1, eps_inv);
    let decay = &eps / rat(k);
    let one_eps = one_plus_eps(eps_inv);
    let mut b_prime: BTreeMap<CellId, BigRational> = BTreeMap::new();
    let mut b_round: BTreeMap<CellId, BigRational> = BTreeMap::new();
    let mut b_add: BTreeMap<CellId, BigRational> = BTreeMap::new();
    for v in tree.vertices() {
        let mut prime = rat(b_opt.get(&v).copied().unwrap_or(0));
        let mut factor = BigRational::one();
        let mut cur = v;
        while let Some(p) = tree.grid.parent(cur) {
            factor *= &decay;
            prime += rat(b_opt.get(&p).copied().unwrap_or(0)) * &factor;
            cur = p;
        }
        let round = if prime.is_zero() {
            BigRational::zero()
        } else {
            ceil_pow(&one_eps, &prime).1
        };
        b_prime.insert(v, prime);
        b_round.insert(v, round);
    }
    for v in tree.vertices() {
        let mut add = BigRational::zero();
        let mut factor = BigRational::one();
        let mut cur = v;
        while let Some(p) = tree.grid.parent(cur) {
            factor *= &decay;
            add += &b_round[&p] * &factor;
            cur = p;
        }
        b_add.insert(v, add);
    }

    let sum_opt: BigRational = b_opt.values().map(|&b| rat(b)).sum();
    let sum_prime: BigRational = b_prime.values().cloned().sum();
    let sum_round: BigRational = b_round.values().cloned().sum();
    let sum_add: BigRational = b_add.values().cloned().sum();
    let bounds = SmoothingBounds {
        entrywise_ok: tree
            .vertices()
            .iter()
            .all(|v| b_round[v] >= rat(b_opt.get(v).copied().unwrap_or(0))),
        prime_sum_ok: sum_prime <= (BigRational::one() + rat(2) * &eps) * &sum_opt,
        round_sum_ok: sum_round <= (BigRational::one() + rat(4) * &eps) * &sum_opt,
        add_sum_ok: sum_add <= rat(2) * &eps * &sum_round,
    };
    if !bounds.entrywise_ok {
        return Err(Error::BugTrap("rounded budget fell below the reference spend".into()));
    }
    if eps_inv >= 2 && !bounds.all_ok() {
        return Err(Error::BugTrap(format!(
            "smoothing bounds failed in the convergent regime: {bounds:?}"
        )));
    }
    Ok(CellBudgets { eps_inv, k, b_opt: b_opt.clone(), b_prime, b_round, b_add, bounds })
}

/// Small/large classification of chains per cell: a chain is large when
/// its leftmost rectangle costs more than delta times the cell's rounded
/// budget, with delta = eps/K^8.
#[derive(Debug, Clone)]
pub struct SmallLargeSplit {
    pub delta: BigRational,
    pub large_chains: BTreeSet<ChainId>,
}

impl SmallLargeSplit {
    pub fn is_large(&self, chain: ChainId) -> bool {
        self.large_chains.contains(&chain)
    }

    pub fn small_rects(&self, geom: &Geometry) -> Selection {
        (0..geom.chains.len())
            .filter(|c| !self.is_large(*c))
            .flat_map(|c| geom.chains[c].rects.iter().copied())
            .collect()
    }

    pub fn large_rects(&self, geom: &Geometry) -> Selection {
        self.large_chains
            .iter()
            .flat_map(|&c| geom.chains[c].rects.iter().copied())
            .collect()
    }
}

/// The chain of one row inside one cell, if any.
pub fn chain_at(geom: &Geometry, cell: CellId, row: usize) -> Option<ChainId> {
    geom.chains_by_cell
        .get(&cell)?
        .iter()
        .copied()
        .find(|&c| geom.chains[c].row == row)
}

pub fn split_small_large(
    geom: &Geometry,
    cb: &CellBudgets,
    reference: Option<&Selection>,
) -> Result<SmallLargeSplit> {
    let delta = ratio(1, cb.eps_inv) / rat(cb.k.pow(8));
    let mut large_chains = BTreeSet::new();
    for (cid, chain) in geom.chains.iter().enumerate() {
        let first_cost = rat(geom.rects[chain.rects[0]].cost);
        if first_cost > &delta * cb.b_round_of(chain.cell) {
            large_chains.insert(cid);
        }
    }
    if let Some(sel) = reference {
        // per cell at most 1/delta large chains carry reference rects
        let lens = geom.prefix_lens(sel);
        let mut per_cell: BTreeMap<CellId, i64> = BTreeMap::new();
        for &cid in &large_chains {
            if lens[cid] > 0 {
                *per_cell.entry(geom.chains[cid].cell).or_insert(0) += 1;
            }
        }
        let cap = rat(cb.eps_inv * cb.k.pow(8));
        for (cell, count) in per_cell {
            if rat(count) > cap {
                return Err(Error::BugTrap(format!(
                    "{count} selected large chains in cell {cell:?} exceed 1/delta"
                )));
            }
        }
    }
    Ok(SmallLargeSplit { delta, large_chains })
}

/// Reference spends on small chains, keyed by (cell, density pair, chain
/// length, prefix length).
pub type SmallOptBudgets = BTreeMap<(CellId, DPair, usize, usize), i64>;

pub fn small_opt_budgets(
    geom: &Geometry,
    split: &SmallLargeSplit,
    reference: &Selection,
    eps_inv: i64,
) -> SmallOptBudgets {
    let lens = geom.prefix_lens(reference);
    let mut out: SmallOptBudgets = BTreeMap::new();
    for (cid, &len) in lens.iter().enumerate() {
        if len == 0 || split.is_large(cid) {
            continue;
        }
        let tau = type_of(geom, cid, eps_inv);
        let key = (geom.chains[cid].cell, (tau.rho, tau.rho2), tau.s, len);
        *out.entry(key).or_insert(0) += crate::qpoly::prefix_cost(geom, cid, len);
    }
    out
}

/// Density pairs of small chains of one length inside one cell, in
/// lexicographic order.
pub fn small_pairs(
    geom: &Geometry,
    split: &SmallLargeSplit,
    cell: CellId,
    s: usize,
    eps_inv: i64,
) -> Vec<DPair> {
    let mut pairs: Vec<DPair> = geom
        .chains_by_cell
        .get(&cell)
        .map(|chains| {
            chains
                .iter()
                .filter(|&&c| !split.is_large(c) && geom.chains[c].rects.len() == s)
                .map(|&c| {
                    let tau = type_of(geom, c, eps_inv);
                    (tau.rho, tau.rho2)
                })
                .collect()
        })
        .unwrap_or_default();
    pairs.sort();
    pairs.dedup();
    pairs
}

/// Chain lengths of small chains inside one cell.
pub fn small_lengths(geom: &Geometry, split: &SmallLargeSplit, cell: CellId) -> Vec<usize> {
    let mut out: Vec<usize> = geom
        .chains_by_cell
        .get(&cell)
        .map(|chains| {
            chains
                .iter()
                .filter(|&&c| !split.is_large(c))
                .map(|&c| geom.chains[c].rects.len())
                .collect()
        })
        .unwrap_or_default();
    out.sort_unstable();
    out.dedup();
    out
}

/// Critical pairs per (cell, length, prefix index).
pub type CriticalPairs = BTreeMap<(CellId, usize, usize), Crit>;

/// One budget-raising pass over the density pairs of (cell, s): pairs are
/// processed in lexicographic order; a prefix index still below its
/// cumulative spend threshold buys with the donated extra budget (case
/// 1), otherwise with the bare reference budget (case 2). Returns the
/// union of the selections and the per-index critical pair: the largest
/// case-1 pair, the bottom sentinel when case 1 never fired, or the top
/// sentinel when case 2 never fired.
pub fn greedy_increase(
    geom: &Geometry,
    cell: CellId,
    s: usize,
    small_opt: &SmallOptBudgets,
    cb: &CellBudgets,
    split: &SmallLargeSplit,
    eps_inv: i64,
) -> Result<(Selection, BTreeMap<usize, Crit>)> {
    let pairs = small_pairs(geom, split, cell, s, eps_inv);
    let add_split = cb.b_add_split(cell);
    let opt_of = |pair: &DPair, s_prime: usize| -> i64 {
        small_opt
            .get(&(cell, *pair, s, s_prime))
            .copied()
            .unwrap_or(0)
    };
    let mut spent: BTreeMap<usize, BigRational> = (1..=s)
        .map(|sp| (sp, BigRational::zero()))
        .collect();
    let mut below_sum: BTreeMap<usize, BigRational> =
        (1..=s).map(|sp| (sp, BigRational::zero())).collect();
    let mut last_case1: BTreeMap<usize, Option<DPair>> = (1..=s).map(|sp| (sp, None)).collect();
    let mut case2_fired: BTreeMap<usize, bool> = (1..=s).map(|sp| (sp, false)).collect();
    let mut selection = Selection::new();
    for pair in &pairs {
        let mut budgets: BudgetVec = BTreeMap::new();
        for s_prime in 1..=s {
            let threshold = &add_split + &below_sum[&s_prime];
            let base = rat(opt_of(pair, s_prime));
            if spent[&s_prime] < threshold {
                last_case1.insert(s_prime, Some(*pair));
                budgets.insert(s_prime, Budget::Fin(base + &add_split));
            } else {
                case2_fired.insert(s_prime, true);
                budgets.insert(s_prime, Budget::Fin(base));
            }
        }
        let tau = RectType { rho: pair.0, rho2: pair.1, s };
        let out = greedy_select(
            geom,
            cell,
            &tau,
            &budgets,
            |row| chain_at(geom, cell, row).map(|c| !split.is_large(c)).unwrap_or(false),
            eps_inv,
        )?;
        for (sp, amount) in &out.spend_by_support {
            *spent.get_mut(sp).unwrap() += amount;
        }
        for s_prime in 1..=s {
            *below_sum.get_mut(&s_prime).unwrap() += rat(opt_of(pair, s_prime));
        }
        selection.extend(out.selection.iter().copied());
    }
    let mut gamma = BTreeMap::new();
    for s_prime in 1..=s {
        let g = if !case2_fired[&s_prime] {
            Crit::Top
        } else {
            match last_case1[&s_prime] {
                Some(p) => Crit::Pair(p),
                None => Crit::Bottom,
            }
        };
        gamma.insert(s_prime, g);
    }
    Ok((selection, gamma))
}

/// Runs the budget-raising pass for every (cell, length) and collects the
/// critical pairs.
pub fn critical_pairs(
    geom: &Geometry,
    small_opt: &SmallOptBudgets,
    cb: &CellBudgets,
    split: &SmallLargeSplit,
    eps_inv: i64,
) -> Result<CriticalPairs> {
    let mut out = CriticalPairs::new();
    for (&cell, _) in &geom.chains_by_cell {
        for s in small_lengths(geom, split, cell) {
            let (_, gamma) = greedy_increase(geom, cell, s, small_opt, cb, split, eps_inv)?;
            for (s_prime, g) in gamma {
                out.insert((cell, s, s_prime), g);
            }
        }
    }
    Ok(out)
}

/// Smoothed small budgets, keyed like the reference spends, each a power
/// of (1 + eps/4).
pub type SmallRoundBudgets = BTreeMap<(CellId, DPair, usize, usize), BigRational>;

/// Rounds the small reference budgets between consecutive critical pairs:
/// inside each stretch the budgets receive geometrically decaying
/// donations from their lexicographic predecessors plus a geometrically
/// vanishing share of the cell budget, then round up to powers of
/// (1 + eps/4). The per-stretch sum bound is enforced.
pub fn round_small_budgets(
    geom: &Geometry,
    split: &SmallLargeSplit,
    small_opt: &SmallOptBudgets,
    critical: &CriticalPairs,
    cb: &CellBudgets,
    eps_inv: i64,
) -> Result<SmallRoundBudgets> {
    let eps = ratio(1, eps_inv);
    let quarter = &eps / rat(4);
    let one_q = BigRational::one() + &quarter;
    let k8 = rat(cb.k.pow(8));
    let seed_base = &quarter / &k8; // eps / (4 K^8)
    let mut out = SmallRoundBudgets::new();
    for (&cell, _) in &geom.chains_by_cell {
        let b_round_cell = cb.b_round_of(cell);
        // stretch boundaries: the concrete critical pairs of this cell
        let mut boundaries: Vec<DPair> = critical
            .iter()
            .filter(|((c, _, _), _)| *c == cell)
            .filter_map(|(_, g)| match g {
                Crit::Pair(p) => Some(*p),
                _ => None,
            })
            .collect();
        boundaries.sort();
        boundaries.dedup();
        for s in small_lengths(geom, split, cell) {
            let pairs = small_pairs(geom, split, cell, s, eps_inv);
            for s_prime in 1..=s {
                // stretches: (-inf, b1), [b1, b2), ..., [bm, +inf)
                let mut edges: Vec<Option<DPair>> = vec![None];
                edges.extend(boundaries.iter().map(|b| Some(*b)));
                for (h, lo) in edges.iter().enumerate() {
                    let hi = boundaries.get(h).copied();
                    // enumerated pairs of this stretch: the base boundary
                    // itself (when concrete) plus the concrete pairs
                    let mut stretch: Vec<DPair> = Vec::new();
                    if let Some(b) = lo {
                        stretch.push(*b);
                    }
                    for p in &pairs {
                        let above_lo = lo.map(|b| *p >= b).unwrap_or(true);
                        let below_hi = hi.map(|b| *p < b).unwrap_or(true);
                        if above_lo && below_hi && !stretch.contains(p) {
                            stretch.push(*p);
                        }
                    }
                    stretch.sort();
                    let mut opt_sum = BigRational::zero();
                    let mut round_sum = BigRational::zero();
                    let mut donations = BigRational::zero();
                    for (i, p) in stretch.iter().enumerate() {
                        let opt = rat(
                            small_opt.get(&(cell, *p, s, s_prime)).copied().unwrap_or(0),
                        );
                        // donations carry sum_{j<=i} (eps/4)^{i-j} opt_j
                        donations = &donations * &quarter + &opt;
                        let prime =
                            pow_int(&seed_base, (i + 1) as i64) * &b_round_cell + &donations;
                        let round = if prime.is_zero() {
                            BigRational::zero()
                        } else {
                            ceil_pow(&one_q, &prime).1
                        };
                        if round < opt {
                            return Err(Error::BugTrap(
                                "rounded small budget fell below the reference spend".into(),
                            ));
                        }
                        opt_sum += &opt;
                        round_sum += &round;
                        out.insert((cell, *p, s, s_prime), round);
                    }
                    // per-stretch sum bound
                    let bound = (&eps / &k8) * &b_round_cell
                        + (BigRational::one() + &eps) * &opt_sum;
                    if round_sum > bound {
                        return Err(Error::BugTrap(format!(
                            "stretch budget sum {round_sum} exceeds bound {bound}"
                        )));
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Builds the small-chain solution from the case table: pairs below the
/// critical pair buy with unbounded budget, the critical pair itself buys
/// with its rounded budget plus the donated share, pairs above buy with
/// the bare rounded budget. The cost chain against the reference is
/// enforced.
pub fn build_small_solution(
    geom: &Geometry,
    cb: &CellBudgets,
    split: &SmallLargeSplit,
    critical: &CriticalPairs,
    round_budgets: &SmallRoundBudgets,
    reference: &Selection,
    eps_inv: i64,
) -> Result<Selection> {
    let mut r_sm = Selection::new();
    for (&cell, _) in &geom.chains_by_cell {
        let add_split = cb.b_add_split(cell);
        for s in small_lengths(geom, split, cell) {
            for pair in small_pairs(geom, split, cell, s, eps_inv) {
                let mut budgets: BudgetVec = BTreeMap::new();
                for s_prime in 1..=s {
                    let gamma = critical[&(cell, s, s_prime)];
                    let here = Crit::Pair(pair);
                    let round = round_budgets
                        .get(&(cell, pair, s, s_prime))
                        .cloned()
                        .unwrap_or_else(BigRational::zero);
                    let b = if here < gamma {
                        Budget::Inf
                    } else if here == gamma {
                        Budget::Fin(round + &add_split)
                    } else {
                        Budget::Fin(round)
                    };
                    budgets.insert(s_prime, b);
                }
                let tau = RectType { rho: pair.0, rho2: pair.1, s };
                let out = greedy_select(
                    geom,
                    cell,
                    &tau,
                    &budgets,
                    |row| chain_at(geom, cell, row).map(|c| !split.is_large(c)).unwrap_or(false),
                    eps_inv,
                )?;
                r_sm.extend(out.selection.iter().copied());
            }
        }
    }
    // cost chain: c(R'_sm) <= (2+4eps) c(ref ∩ small) + (K^8 delta + 6 eps)(1+eps) c(ref)
    let eps = ratio(1, eps_inv);
    let small = split.small_rects(geom);
    let ref_small_cost: i64 = reference
        .iter()
        .filter(|r| small.contains(r))
        .map(|&r| geom.rects[r].cost)
        .sum();
    let ref_cost = geom.cost(reference);
    let k8delta = rat(cb.k.pow(8)) * &split.delta; // = eps exactly
    let lhs = rat(geom.cost(&r_sm));
    let rhs = (rat(2) + rat(4) * &eps) * rat(ref_small_cost)
        + (&k8delta + rat(6) * &eps) * (BigRational::one() + &eps) * rat(ref_cost);
    if lhs > rhs {
        return Err(Error::BugTrap(format!(
            "small-solution cost {lhs} exceeds chain bound {rhs}"
        )));
    }
    Ok(r_sm)
}

/// The prefix index whose rectangle meets the bottom cell, identical for
/// every length-s chain of the cell; zero when none does. Only meaningful
/// for cells at least two levels above the bottom cell.
pub fn reach_index(geom: &Geometry, cell: CellId, s: usize, bottom: CellId) -> usize {
    let grid = &geom.grid;
    debug_assert!(cell.level + 2 <= grid.params.ell_max);
    let seg_len = grid.len_at(cell.level + 2);
    let end = grid.end(cell);
    let span_lo = end - s as i64 * seg_len;
    let (b_lo, b_hi) = (grid.beg(bottom), grid.end(bottom));
    for q in 1..=s {
        let lo = span_lo + (q - 1) as i64 * seg_len;
        let hi = lo + seg_len;
        if lo < b_hi && b_lo < hi {
            return q;
        }
    }
    0
}

/// The exponent of the density step H: the largest power of (1+eps) not
/// exceeding K^7/eps.
pub fn h_exponent(k: i64, eps_inv: i64) -> i64 {
    floor_log(&one_plus_eps(eps_inv), &rat(k.pow(7) * eps_inv))
}

/// Restricts the small solution to one root path: chains in cells at
/// least two above the bottom keep only the prefix that reaches the
/// bottom cell (nothing if their selected prefix stops earlier), and
/// whole density classes are dropped above the per-cell threshold formed
/// by scaling deeper critical pairs.
pub fn restrict_small_to_path(
    geom: &Geometry,
    tree: &CellTree,
    r_sm: &Selection,
    endpoint: CellId,
    critical: &CriticalPairs,
    split: &SmallLargeSplit,
    eps_inv: i64,
) -> Selection {
    let path = tree.path(endpoint);
    let ell = path.len();
    let bottom = path[ell - 1];
    let lens = geom.prefix_lens(r_sm);
    let h_exp = h_exponent(geom.grid.params.k, eps_inv);

    // sigma_minus per rule-governed cell (1-based positions 1..=ell-2)
    let mut sigma_minus: Vec<Crit> = vec![Crit::Top; ell];
    for (idx, &cell) in path.iter().enumerate() {
        if idx + 2 >= ell {
            break;
        }
        let mut best = Crit::Top;
        for s in small_lengths(geom, split, cell) {
            let r = reach_index(geom, cell, s, bottom);
            if r == 0 {
                continue;
            }
            let g = critical.get(&(cell, s, r)).copied().unwrap_or(Crit::Top);
            if g < best {
                best = g;
            }
        }
        sigma_minus[idx] = best;
    }
    // sigma_plus: minimum over deeper rule-governed cells of the scaled
    // sigma_minus
    let mut sigma_plus: Vec<Crit> = vec![Crit::Top; ell];
    for i in 0..ell {
        let mut best = Crit::Top;
        for j in (i + 1)..ell.saturating_sub(2) {
            let scaled = sigma_minus[j].shift((j - i) as i64 * h_exp);
            if scaled < best {
                best = scaled;
            }
        }
        sigma_plus[i] = best;
    }

    let spans_bottom = |rect: usize| -> bool {
        let (b, e) = geom.rects[rect].seg;
        b <= geom.grid.beg(bottom) && geom.grid.end(bottom) <= e
    };

    // the drop rules compensate only for rays ending inside the bottom
    // cell, which meet exactly the bottom-spanning rectangles; held
    // rectangles not spanning the bottom cell stay, keeping every ray
    // visible from this path covered
    let mut kept = Selection::new();
    for (idx, &cell) in path.iter().enumerate() {
        let chains = match geom.chains_by_cell.get(&cell) {
            Some(c) => c,
            None => continue,
        };
        let exempt = idx + 2 >= ell;
        for &cid in chains {
            if split.is_large(cid) {
                continue;
            }
            let held = lens[cid];
            if held == 0 {
                continue;
            }
            if exempt {
                for &r in geom.chains[cid].rects.iter().take(held) {
                    kept.insert(r);
                }
                continue;
            }
            let tau = type_of(geom, cid, eps_inv);
            let dropped_class = Crit::Pair((tau.rho, tau.rho2)) >= sigma_plus[idx];
            for &rect in geom.chains[cid].rects.iter().take(held) {
                if !spans_bottom(rect) || !dropped_class {
                    kept.insert(rect);
                }
            }
        }
    }
    kept
}

/// Rounded processing time exponent: (1+eps)^h <= p < (1+eps)^(h+1).
pub fn pbar_exponent(p: i64, eps_inv: i64) -> i64 {
    floor_log(&one_plus_eps(eps_inv), &rat(p))
}

/// Group key for large chains: equal length and equal ratio of the two
/// leading densities (expressed as an exponent difference; chains of
/// length one share the missing second density).
pub fn group_key(tau: &RectType) -> (usize, Option<i64>) {
    let diff = match (tau.rho, tau.rho2) {
        (Density::Finite(a), Density::Finite(b)) => Some(a - b),
        _ => None,
    };
    (tau.s, diff)
}

/// Why a chain entered the large solution: taken verbatim for an easy
/// job, or as a substitute bought during some hard job's iteration.
#[derive(Debug, Clone, Default)]
pub struct SelectionReason {
    pub easy: bool,
    pub hard_sources: BTreeSet<usize>,
}

/// Everything the path restriction needs about the large build.
#[derive(Debug, Clone, Default)]
pub struct LargeInfo {
    /// (cell, row) -> why its rectangles were selected
    pub reasons: BTreeMap<(CellId, usize), SelectionReason>,
    /// hard jobs per cell (rows), across groups
    pub hard: BTreeMap<CellId, BTreeSet<usize>>,
    /// reference prefix length per (cell, row) with reference rects
    pub ref_lens: BTreeMap<(CellId, usize), usize>,
}

/// Builds the large-chain solution: per cell and type group, easy jobs
/// (those inside the bounded high-processing pool) keep their reference
/// prefixes; every hard job is replaced by the prefixes of two
/// substitute jobs with matching rounded processing time, or one
/// substitute plus a pool job when the hard job tops its own candidate
/// list.
pub fn build_large_solution(
    geom: &Geometry,
    cb: &CellBudgets,
    split: &SmallLargeSplit,
    reference: &Selection,
    eps_inv: i64,
) -> Result<(Selection, LargeInfo)> {
    let eps = ratio(1, eps_inv);
    let lens = geom.prefix_lens(reference);
    let mut r_l = Selection::new();
    let mut info = LargeInfo::default();

    for (&cell, cell_chains) in &geom.chains_by_cell {
        // reference spend on large chains of this cell
        let b_large_opt: i64 = cell_chains
            .iter()
            .filter(|&&c| split.is_large(c))
            .map(|&c| crate::qpoly::prefix_cost(geom, c, lens[c]))
            .sum();
        let b_round_cell = cb.b_round_of(cell);
        let step = &eps * &b_round_cell;
        let b_large_round = if step.is_zero() {
            if b_large_opt != 0 {
                return Err(Error::BugTrap(
                    "large spend in a cell with zero rounded budget".into(),
                ));
            }
            BigRational::zero()
        } else {
            next_multiple(&step, &rat(b_large_opt))
        };

        // group the large chains
        let mut groups: BTreeMap<(usize, Option<i64>), Vec<ChainId>> = BTreeMap::new();
        for &cid in cell_chains {
            if split.is_large(cid) {
                let tau = type_of(geom, cid, eps_inv);
                groups.entry(group_key(&tau)).or_default().push(cid);
            }
        }
        for (_gkey, members) in &groups {
            let selected: Vec<ChainId> =
                members.iter().copied().filter(|&c| lens[c] > 0).collect();
            let k_count = selected.len();
            if k_count == 0 {
                continue;
            }
            // per selected job: prefix length and rounded budget
            let job_step = &eps * &split.delta * &b_large_round;
            let mut s_prime: BTreeMap<usize, usize> = BTreeMap::new();
            let mut b_job: BTreeMap<usize, BigRational> = BTreeMap::new();
            let mut budget_sum = BigRational::zero();
            for &c in &selected {
                let row = geom.chains[c].row;
                let spend = rat(crate::qpoly::prefix_cost(geom, c, lens[c]));
                let b = if job_step.is_zero() {
                    spend.clone()
                } else {
                    ceil_multiple(&job_step, &spend)
                };
                budget_sum += &b;
                s_prime.insert(row, lens[c]);
                b_job.insert(row, b);
                info.ref_lens.insert((cell, row), lens[c]);
                info.hard.entry(cell).or_default(); // filled below
            }
            if !b_large_round.is_zero()
                && budget_sum > (BigRational::one() + &eps) * &b_large_round
            {
                return Err(Error::BugTrap(format!(
                    "per-job rounded budgets sum {budget_sum} exceed (1+eps) of the cell's large budget"
                )));
            }

            // high-processing pool: per selected job, the k_count group
            // members with largest processing time among those affordable
            // at the job's budget
            let affordable = |c: ChainId, sp: usize, budget: &BigRational| -> bool {
                rat(crate::qpoly::prefix_cost(geom, c, sp)) <= *budget
            };
            let mut j_high: BTreeSet<usize> = BTreeSet::new();
            for &c in &selected {
                let row = geom.chains[c].row;
                let mut cands: Vec<ChainId> = members
                    .iter()
                    .copied()
                    .filter(|&m| affordable(m, s_prime[&row], &b_job[&row]))
                    .collect();
                cands.sort_by_key(|&m| {
                    (std::cmp::Reverse(geom.rects[geom.chains[m].rects[0]].cap),
                     std::cmp::Reverse(geom.chains[m].row))
                });
                for &m in cands.iter().take(k_count) {
                    j_high.insert(geom.chains[m].row);
                }
            }
            if j_high.len() > k_count * k_count {
                return Err(Error::BugTrap(format!(
                    "high-processing pool of {} exceeds k^2 = {}",
                    j_high.len(),
                    k_count * k_count
                )));
            }
            let easy: BTreeSet<usize> = selected
                .iter()
                .map(|&c| geom.chains[c].row)
                .filter(|row| j_high.contains(row))
                .collect();
            let hard: Vec<usize> = selected
                .iter()
                .map(|&c| geom.chains[c].row)
                .filter(|row| !j_high.contains(row))
                .collect();
            info.hard.entry(cell).or_default().extend(hard.iter().copied());

            // easy jobs keep their reference prefixes
            for &row in &easy {
                let c = chain_at(geom, cell, row).unwrap();
                for &r in geom.chains[c].rects.iter().take(s_prime[&row]) {
                    r_l.insert(r);
                }
                info.reasons.entry((cell, row)).or_default().easy = true;
            }

            // hard jobs, per rounded-processing-time class, rows descending
            let proc_of = |row: usize| geom.rects[chain_at(geom, cell, row).map(|c| geom.chains[c].rects[0]).unwrap()].cap;
            let mut classes: BTreeMap<i64, Vec<usize>> = BTreeMap::new();
            for &row in &hard {
                classes
                    .entry(pbar_exponent(proc_of(row), eps_inv))
                    .or_default()
                    .push(row);
            }
            let mut selected_from: BTreeSet<usize> =
                easy.iter().copied().collect();
            for (pbar, mut class_rows) in classes {
                class_rows.sort_by_key(|&r| std::cmp::Reverse(r));
                let mut hat: Option<usize> = None;
                for &jk in &class_rows {
                    let sp = s_prime[&jk];
                    let budget = b_job[&jk].clone();
                    let mut cands: Vec<usize> = members
                        .iter()
                        .copied()
                        .filter(|&m| {
                            let row = geom.chains[m].row;
                            pbar_exponent(proc_of(row), eps_inv) == pbar
                                && affordable(m, sp, &budget)
                                && hat.map(|h| row < h).unwrap_or(true)
                        })
                        .map(|m| geom.chains[m].row)
                        .collect();
                    cands.sort_by_key(|&r| std::cmp::Reverse(r));
                    let j1 = *cands.first().ok_or_else(|| {
                        Error::BugTrap(format!(
                            "no substitute candidate for hard row {jk} in cell {cell:?} \
                             (class {pbar}, budget {budget}, bound {hat:?})"
                        ))
                    })?;
                    let mut picks = vec![j1];
                    if j1 != jk {
                        let j2 = *cands.get(1).ok_or_else(|| {
                            Error::BugTrap(format!(
                                "hard row {jk} is not its own best substitute yet no second \
                                 candidate exists in cell {cell:?}"
                            ))
                        })?;
                        picks.push(j2);
                    } else {
                        // the hard job tops its own list: pair it with the
                        // largest-processing unused pool job
                        let jt = j_high
                            .iter()
                            .copied()
                            .filter(|row| {
                                !easy.contains(row)
                                    && !selected_from.contains(row)
                                    && chain_at(geom, cell, *row)
                                        .map(|c| affordable(c, sp, &budget))
                                        .unwrap_or(false)
                            })
                            .max_by_key(|&row| (proc_of(row), std::cmp::Reverse(row)))
                            .ok_or_else(|| {
                                Error::BugTrap(format!(
                                    "no unused pool job for hard row {jk} in cell {cell:?} \
                                     (pool {j_high:?}, easy {easy:?}, used {selected_from:?})"
                                ))
                            })?;
                        picks.push(jt);
                    }
                    for &row in &picks {
                        let c = chain_at(geom, cell, row).unwrap();
                        for &r in geom.chains[c].rects.iter().take(sp) {
                            r_l.insert(r);
                        }
                        selected_from.insert(row);
                        info.reasons
                            .entry((cell, row))
                            .or_default()
                            .hard_sources
                            .insert(jk);
                        if !j_high.contains(&row)
                            && pbar_exponent(proc_of(row), eps_inv) == pbar
                        {
                            hat = Some(hat.map_or(row, |h| h.min(row)));
                        }
                    }
                }
            }
        }
    }

    // cost chain: c(R'_l) <= 2 c(ref ∩ large) + 3 eps c(ref)
    let large = split.large_rects(geom);
    let ref_large_cost: i64 = reference
        .iter()
        .filter(|r| large.contains(r))
        .map(|&r| geom.rects[r].cost)
        .sum();
    let lhs = rat(geom.cost(&r_l));
    let rhs = rat(2 * ref_large_cost) + rat(3) * &eps * rat(geom.cost(reference));
    if lhs > rhs {
        return Err(Error::BugTrap(format!(
            "large-solution cost {lhs} exceeds chain bound {rhs}"
        )));
    }
    Ok((r_l, info))
}

/// Restricts the large solution to one root path: easy rectangles stay;
/// substitute rectangles stay only while the (cell, rounded processing
/// time) pair of their hard source is still relevant for this path.
pub fn restrict_large_to_path(
    geom: &Geometry,
    tree: &CellTree,
    r_l: &Selection,
    endpoint: CellId,
    split: &SmallLargeSplit,
    reference: &Selection,
    info: &LargeInfo,
    eps_inv: i64,
) -> Selection {
    let path = tree.path(endpoint);
    let ell = path.len();
    let bottom = path[ell - 1];
    let eps = ratio(1, eps_inv);
    let lens = geom.prefix_lens(reference);
    let proc_of = |cell: CellId, row: usize| {
        geom.rects[chain_at(geom, cell, row).map(|c| geom.chains[c].rects[0]).unwrap()].cap
    };

    // a hard job's reference rect spans the bottom cell?
    let spans_bottom = |cell: CellId, row: usize| -> bool {
        chain_at(geom, cell, row)
            .map(|c| {
                geom.chains[c].rects.iter().take(lens[c]).any(|&r| {
                    let (b, e) = geom.rects[r].seg;
                    b <= geom.grid.beg(bottom) && geom.grid.end(bottom) <= e
                })
            })
            .unwrap_or(false)
    };

    let relevant = |idx: usize, cell: CellId, pbar: i64| -> bool {
        let empty = BTreeSet::new();
        let hard_here = info.hard.get(&cell).unwrap_or(&empty);
        // first irrelevance condition: no hard job of this rounded size
        // has a reference rectangle spanning the bottom cell
        let witness = hard_here.iter().any(|&row| {
            pbar_exponent(proc_of(cell, row), eps_inv) == pbar && spans_bottom(cell, row)
        });
        if !witness {
            return false;
        }
        // second condition: a much larger hard job deeper on the path
        // spans the bottom cell and absorbs this size class
        let pbar_val = pow_int(&one_plus_eps(eps_inv), pbar);
        for (j, &cell_j) in path.iter().enumerate() {
            if j <= idx || j + 2 >= ell {
                continue;
            }
            if let Some(hard_j) = info.hard.get(&cell_j) {
                for &row in hard_j {
                    if !spans_bottom(cell_j, row) {
                        continue;
                    }
                    let pj = pow_int(&one_plus_eps(eps_inv), pbar_exponent(proc_of(cell_j, row), eps_inv));
                    let decay = pow_int(&eps, (j - idx) as i64);
                    if pbar_val <= pj * &split.delta * decay {
                        return false;
                    }
                }
            }
        }
        true
    };

    let rect_spans_bottom = |rect: usize| -> bool {
        let (b, e) = geom.rects[rect].seg;
        b <= geom.grid.beg(bottom) && geom.grid.end(bottom) <= e
    };

    // as in the small restriction, only bottom-spanning rectangles are
    // subject to the relevance rule; the rest stay to keep every ray
    // visible from this path covered
    let mut kept = Selection::new();
    for (idx, &cell) in path.iter().enumerate() {
        let chains = match geom.chains_by_cell.get(&cell) {
            Some(c) => c,
            None => continue,
        };
        let exempt = idx + 2 >= ell;
        for &cid in chains {
            let row = geom.chains[cid].row;
            let reason = match info.reasons.get(&(cell, row)) {
                Some(r) => r,
                None => continue,
            };
            let held: Vec<_> = geom.chains[cid]
                .rects
                .iter()
                .copied()
                .filter(|r| r_l.contains(r))
                .collect();
            if held.is_empty() {
                continue;
            }
            let keep_spanning = exempt
                || reason.easy
                || reason.hard_sources.iter().any(|&src| {
                    relevant(idx, cell, pbar_exponent(proc_of(cell, src), eps_inv))
                });
            for r in held {
                if keep_spanning || !rect_spans_bottom(r) {
                    kept.insert(r);
                }
            }
        }
    }
    kept
}

/// The full path-family pipeline: smooth the reference's cell budgets,
/// split chains, derive critical pairs and rounded small budgets, build
/// the small and large solutions, and form singleton per-path families
/// from the two restrictions.
pub struct PolyOutcome {
    pub solution: ConsistentSolution,
    pub families: CandidateFamily,
    pub r_sm: Selection,
    pub r_l: Selection,
    pub cb: CellBudgets,
    pub split: SmallLargeSplit,
    pub critical: CriticalPairs,
    pub info: LargeInfo,
}

pub fn build_poly_solution(
    geom: &Geometry,
    tree: &CellTree,
    reference: &Selection,
    eps_inv: i64,
) -> Result<PolyOutcome> {
    let agg = cell_aggregate(geom, reference);
    let cb = smooth_budgets(tree, &agg, eps_inv)?;
    let split = split_small_large(geom, &cb, Some(reference))?;
    let small_opt = small_opt_budgets(geom, &split, reference, eps_inv);
    let critical = critical_pairs(geom, &small_opt, &cb, &split, eps_inv)?;
    let round_budgets =
        round_small_budgets(geom, &split, &small_opt, &critical, &cb, eps_inv)?;
    let r_sm =
        build_small_solution(geom, &cb, &split, &critical, &round_budgets, reference, eps_inv)?;
    let (r_l, info) = build_large_solution(geom, &cb, &split, reference, eps_inv)?;
    let mut global = r_sm.clone();
    global.extend(r_l.iter().copied());

    let (_, mut sol) = singleton_families(geom, tree, &global);
    let mut families = CandidateFamily::default();
    for v in tree.vertices() {
        let mut set =
            restrict_small_to_path(geom, tree, &r_sm, v, &critical, &split, eps_inv);
        set.extend(restrict_large_to_path(
            geom, tree, &r_l, v, &split, reference, &info, eps_inv,
        ));
        families.per_path.insert(v, vec![set.clone()]);
        sol.per_path.insert(v, set);
    }
    sol.global = global;
    Ok(PolyOutcome { solution: sol, families, r_sm, r_l, cb, split, critical, info })
}

/// Coverage domination of a per-path restriction against the reference on
/// one side of the split, plus path monotonicity. Returns the first
/// violation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RestrictionReport {
    Ok,
    Undominated { endpoint: CellId, ray_index: usize, have: i64, need: i64 },
    NotMonotone { longer: CellId, shorter: CellId, rect: usize },
}

pub fn check_restriction(
    geom: &Geometry,
    tree: &CellTree,
    per_path: &BTreeMap<CellId, Selection>,
    reference: &Selection,
    side: &Selection,
) -> RestrictionReport {
    // domination on every ray fully visible from each path
    for (ri, ray) in geom.rays.iter().enumerate() {
        let deepest = crate::dptree::ray_deepest_cell(geom, ray);
        let need: i64 = reference
            .iter()
            .filter(|&&r| side.contains(&r) && crate::geom::intersects(ray, &geom.rects[r]))
            .map(|&r| geom.rects[r].cap)
            .sum();
        if need == 0 {
            continue;
        }
        for v in tree.vertices() {
            if !tree.is_ancestor_or_self(deepest, v) {
                continue;
            }
            let have: i64 = per_path[&v]
                .iter()
                .filter(|&&r| side.contains(&r) && crate::geom::intersects(ray, &geom.rects[r]))
                .map(|&r| geom.rects[r].cap)
                .sum();
            if have < need {
                return RestrictionReport::Undominated { endpoint: v, ray_index: ri, have, need };
            }
        }
    }
    // monotonicity along every root path
    for v in tree.vertices() {
        for u in tree.path(v) {
            if u == v {
                continue;
            }
            let upper = crate::dptree::path_rects(geom, tree, u);
            for &r in &per_path[&v] {
                if upper.contains(&r) && !per_path[&u].contains(&r) {
                    return RestrictionReport::NotMonotone { longer: v, shorter: u, rect: r };
                }
            }
        }
    }
    RestrictionReport::Ok
}
