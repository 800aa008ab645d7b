//! Cell tree, root paths, the consistent-solution framework, and the
//! exact dynamic program over per-path candidate families.

use crate::geom::{intersects, Geometry, Ray, RectId, Selection};
use crate::grid::{CellId, Grid};
use crate::{Error, Result};
use std::collections::BTreeMap;

/// The tree induced by the grid cells; vertices are cells, the root is
/// the unique level-0 cell. A root path is identified by its endpoint.
#[derive(Debug, Clone)]
pub struct CellTree {
    pub grid: Grid,
}

pub fn build_tree(grid: &Grid) -> CellTree {
    CellTree { grid: grid.clone() }
}

impl CellTree {
    pub fn vertex_count(&self) -> i64 {
        self.grid.total_cells()
    }

    pub fn leaf_count(&self) -> i64 {
        self.grid.n_cells(self.grid.params.ell_max)
    }

    /// Cells on the root path ending at `v`, root first.
    pub fn path(&self, v: CellId) -> Vec<CellId> {
        let mut cells = vec![v];
        let mut cur = v;
        while let Some(p) = self.grid.parent(cur) {
            cells.push(p);
            cur = p;
        }
        cells.reverse();
        cells
    }

    pub fn is_ancestor_or_self(&self, anc: CellId, v: CellId) -> bool {
        if anc.level > v.level {
            return false;
        }
        let shift = self.grid.params.k.pow(v.level - anc.level);
        v.index.div_euclid(shift) == anc.index
    }

    /// All vertices, level by level, index ascending.
    pub fn vertices(&self) -> Vec<CellId> {
        self.grid.all_cells()
    }
}

/// Per-path candidate families: for the path ending at vertex `v`, the
/// list of allowed rectangle subsets.
#[derive(Debug, Clone, Default)]
pub struct CandidateFamily {
    pub per_path: BTreeMap<CellId, Vec<Selection>>,
}

/// A global rectangle set together with one chosen subset per root path.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConsistentSolution {
    pub global: Selection,
    pub per_path: BTreeMap<CellId, Selection>,
}

/// Rectangles assigned to one cell.
pub fn rects_in_cell(geom: &Geometry, c: CellId) -> Vec<RectId> {
    geom.chains_by_cell
        .get(&c)
        .map(|chains| {
            chains
                .iter()
                .flat_map(|&cid| geom.chains[cid].rects.iter().copied())
                .collect()
        })
        .unwrap_or_default()
}

/// Rectangles on the path ending at `v`.
pub fn path_rects(geom: &Geometry, tree: &CellTree, v: CellId) -> Selection {
    tree.path(v)
        .into_iter()
        .flat_map(|c| rects_in_cell(geom, c))
        .collect()
}

/// Root-to-leaf path through the cells containing the window's right end.
pub fn path_for_interval(grid: &Grid, t: i64) -> Result<Vec<CellId>> {
    (0..=grid.params.ell_max)
        .map(|level| grid.cell_containing(level, t))
        .collect()
}

/// The deepest cell holding a rectangle intersected by the ray; the root
/// when the ray meets nothing. Every root path whose endpoint lies in
/// this cell's subtree sees all of the ray's rectangles.
pub fn ray_deepest_cell(geom: &Geometry, ray: &Ray) -> CellId {
    geom.rects
        .iter()
        .filter(|r| intersects(ray, r))
        .map(|r| r.cell)
        .max_by_key(|c| (c.level, c.index))
        .unwrap_or(geom.grid.root())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ConsistencyReport {
    Ok,
    Violation { property: u8, detail: String },
}

/// Verifies the three consistency properties and family membership:
/// (1) each per-path set is contained in the global set, (2)每 per-path
/// set covers every ray whose rectangles all lie on that path, (3) longer
/// paths refine shorter ones.
pub fn check_consistent(
    geom: &Geometry,
    tree: &CellTree,
    sol: &ConsistentSolution,
    families: &CandidateFamily,
) -> ConsistencyReport {
    for (v, set) in &sol.per_path {
        if !set.is_subset(&sol.global) {
            return ConsistencyReport::Violation {
                property: 1,
                detail: format!("path to {v:?} holds rectangles outside the global set"),
            };
        }
        match families.per_path.get(v) {
            Some(cands) if cands.iter().any(|c| c == set) => {}
            _ => {
                return ConsistencyReport::Violation {
                    property: 0,
                    detail: format!("path to {v:?} uses a set outside its family"),
                }
            }
        }
    }
    for (ri, ray) in geom.rays.iter().enumerate() {
        let deepest = ray_deepest_cell(geom, ray);
        for v in tree.vertices() {
            if !tree.is_ancestor_or_self(deepest, v) {
                continue;
            }
            let set = match sol.per_path.get(&v) {
                Some(s) => s,
                None => {
                    return ConsistencyReport::Violation {
                        property: 0,
                        detail: format!("no chosen set for path to {v:?}"),
                    }
                }
            };
            let have: i64 = set
                .iter()
                .filter(|&&r| intersects(ray, &geom.rects[r]))
                .map(|&r| geom.rects[r].cap)
                .sum();
            if have < ray.demand {
                return ConsistencyReport::Violation {
                    property: 2,
                    detail: format!(
                        "ray {ri} ([{}..{}], demand {}) covered only {have} on path to {v:?}",
                        ray.s, ray.t, ray.demand
                    ),
                };
            }
        }
    }
    for v in tree.vertices() {
        let set_v = &sol.per_path[&v];
        for u in tree.path(v) {
            if u == v {
                continue;
            }
            let upper = path_rects(geom, tree, u);
            let set_u = &sol.per_path[&u];
            for &r in set_v {
                if upper.contains(&r) && !set_u.contains(&r) {
                    return ConsistencyReport::Violation {
                        property: 3,
                        detail: format!(
                            "rect {r} chosen on path to {v:?} but not on prefix {u:?}"
                        ),
                    };
                }
            }
        }
    }
    ConsistencyReport::Ok
}

/// Exact cheapest consistent solution for the given families, or `None`
/// when no combination of candidates is consistent.
pub fn dp_solve(
    geom: &Geometry,
    tree: &CellTree,
    families: &CandidateFamily,
) -> Result<Option<(i64, ConsistentSolution)>> {
    let vertices = tree.vertices();
    for &v in &vertices {
        let cands = families
            .per_path
            .get(&v)
            .ok_or_else(|| Error::InvalidBounds(format!("no family for path to {v:?}")))?;
        let allowed = path_rects(geom, tree, v);
        for c in cands {
            if !c.is_subset(&allowed) {
                return Err(Error::InvalidBounds(format!(
                    "candidate for {v:?} leaves its path"
                )));
            }
        }
    }

    // rays a leaf must cover: those whose deepest cell sits on its path
    let ray_bucket: Vec<CellId> = geom
        .rays
        .iter()
        .map(|ray| ray_deepest_cell(geom, ray))
        .collect();

    // table per vertex: per candidate, the minimal cost of the subtree
    // part (own-cell rectangles plus strictly-below choices), plus the
    // chosen child candidate indices
    let mut cost_tab: BTreeMap<CellId, Vec<Option<i64>>> = BTreeMap::new();
    let mut choice_tab: BTreeMap<CellId, Vec<Vec<usize>>> = BTreeMap::new();

    for &v in vertices.iter().rev() {
        let cands = &families.per_path[&v];
        let own = rects_in_cell(geom, v);
        let own_set: Selection = own.iter().copied().collect();
        let kids = tree.grid.children(v);
        let mut costs: Vec<Option<i64>> = Vec::with_capacity(cands.len());
        let mut choices: Vec<Vec<usize>> = Vec::with_capacity(cands.len());
        for cand in cands {
            let own_cost: i64 = cand
                .iter()
                .filter(|r| own_set.contains(r))
                .map(|&r| geom.rects[r].cost)
                .sum();
            if kids.is_empty() {
                // leaf feasibility: cover every ray living on this path
                let path = tree.path(v);
                let mut ok = true;
                for (ri, ray) in geom.rays.iter().enumerate() {
                    if !path.contains(&ray_bucket[ri]) {
                        continue;
                    }
                    let have: i64 = cand
                        .iter()
                        .filter(|&&r| intersects(ray, &geom.rects[r]))
                        .map(|&r| geom.rects[r].cap)
                        .sum();
                    if have < ray.demand {
                        ok = false;
                        break;
                    }
                }
                costs.push(if ok { Some(own_cost) } else { None });
                choices.push(vec![]);
                continue;
            }
            let mut total = Some(own_cost);
            let mut pick = Vec::with_capacity(kids.len());
            for &u in &kids {
                let u_cands = &families.per_path[&u];
                let u_costs = &cost_tab[&u];
                let u_own: Selection = rects_in_cell(geom, u).into_iter().collect();
                let mut best: Option<(i64, usize)> = None;
                for (j, uc) in u_cands.iter().enumerate() {
                    let feasible = match u_costs[j] {
                        Some(c) => c,
                        None => continue,
                    };
                    // the child's set restricted to the parent path must
                    // refine the parent's candidate
                    let refines = uc
                        .iter()
                        .all(|r| u_own.contains(r) || cand.contains(r));
                    if !refines {
                        continue;
                    }
                    if best.map_or(true, |(bc, _)| feasible < bc) {
                        best = Some((feasible, j));
                    }
                }
                match best {
                    Some((c, j)) => {
                        total = total.map(|t| t + c);
                        pick.push(j);
                    }
                    None => {
                        total = None;
                        break;
                    }
                }
            }
            costs.push(total);
            choices.push(pick);
        }
        cost_tab.insert(v, costs);
        choice_tab.insert(v, choices);
    }

    let root = tree.grid.root();
    let root_costs = &cost_tab[&root];
    let mut best: Option<(i64, usize)> = None;
    for (i, c) in root_costs.iter().enumerate() {
        if let Some(c) = c {
            if best.map_or(true, |(bc, _)| *c < bc) {
                best = Some((*c, i));
            }
        }
    }
    let (total, root_idx) = match best {
        Some(b) => b,
        None => return Ok(None),
    };

    // walk the choice table to collect the chosen candidate per vertex
    let mut per_path: BTreeMap<CellId, Selection> = BTreeMap::new();
    let mut stack = vec![(root, root_idx)];
    let mut global = Selection::new();
    while let Some((v, idx)) = stack.pop() {
        let cand = families.per_path[&v][idx].clone();
        global.extend(cand.iter().copied());
        per_path.insert(v, cand);
        for (u, &j) in tree.grid.children(v).iter().zip(&choice_tab[&v][idx]) {
            stack.push((*u, j));
        }
    }
    Ok(Some((total, ConsistentSolution { global, per_path })))
}

/// Exhaustive minimum over all candidate assignments that form a
/// consistent solution. Independent of `dp_solve`; test-scale only.
pub fn consistent_min_bruteforce(
    geom: &Geometry,
    tree: &CellTree,
    families: &CandidateFamily,
) -> Result<Option<i64>> {
    let vertices = tree.vertices();
    let ray_bucket: Vec<CellId> = geom
        .rays
        .iter()
        .map(|ray| ray_deepest_cell(geom, ray))
        .collect();

    struct Ctx<'a> {
        geom: &'a Geometry,
        tree: &'a CellTree,
        families: &'a CandidateFamily,
        vertices: &'a [CellId],
        ray_bucket: &'a [CellId],
        assign: BTreeMap<CellId, usize>,
        best: Option<i64>,
    }

    fn feasible_so_far(ctx: &Ctx, v: CellId, idx: usize) -> bool {
        let cand = &ctx.families.per_path[&v][idx];
        // refinement against every assigned ancestor
        for u in ctx.tree.path(v) {
            if u == v {
                continue;
            }
            let upper = path_rects(ctx.geom, ctx.tree, u);
            let uc = &ctx.families.per_path[&u][ctx.assign[&u]];
            for r in cand {
                if upper.contains(r) && !uc.contains(r) {
                    return false;
                }
            }
        }
        // leaves must cover their rays
        if ctx.tree.grid.children(v).is_empty() {
            let path = ctx.tree.path(v);
            for (ri, ray) in ctx.geom.rays.iter().enumerate() {
                if !path.contains(&ctx.ray_bucket[ri]) {
                    continue;
                }
                let have: i64 = cand
                    .iter()
                    .filter(|&&r| intersects(ray, &ctx.geom.rects[r]))
                    .map(|&r| ctx.geom.rects[r].cap)
                    .sum();
                if have < ray.demand {
                    return false;
                }
            }
        }
        true
    }

    fn go(ctx: &mut Ctx, pos: usize) {
        if pos == ctx.vertices.len() {
            let mut global = Selection::new();
            for (v, &idx) in &ctx.assign {
                global.extend(ctx.families.per_path[v][idx].iter().copied());
            }
            let cost = ctx.geom.cost(&global);
            if ctx.best.map_or(true, |b| cost < b) {
                ctx.best = Some(cost);
            }
            return;
        }
        let v = ctx.vertices[pos];
        let n = ctx.families.per_path[&v].len();
        for idx in 0..n {
            if !feasible_so_far(ctx, v, idx) {
                continue;
            }
            ctx.assign.insert(v, idx);
            go(ctx, pos + 1);
            ctx.assign.remove(&v);
        }
    }

    let mut ctx = Ctx {
        geom,
        tree,
        families,
        vertices: &vertices,
        ray_bucket: &ray_bucket,
        assign: BTreeMap::new(),
        best: None,
    };
    go(&mut ctx, 0);
    Ok(ctx.best)
}

/// Debug dump of the chosen per-path sets.
pub fn solution_to_debug_json(geom: &Geometry, sol: &ConsistentSolution) -> String {
    let entries: Vec<serde_json::Value> = sol
        .per_path
        .iter()
        .map(|(v, set)| {
            serde_json::json!({
                "level": v.level,
                "index": v.index,
                "cost": geom.cost(set),
                "rects": set.iter().collect::<Vec<_>>(),
            })
        })
        .collect();
    serde_json::to_string_pretty(&entries).unwrap() + "\n"
}

/// Families holding exactly one candidate per path: the restriction of a
/// single global set to each path's rectangles.
pub fn singleton_families(
    geom: &Geometry,
    tree: &CellTree,
    global: &Selection,
) -> (CandidateFamily, ConsistentSolution) {
    let mut per_path_f = BTreeMap::new();
    let mut per_path_s = BTreeMap::new();
    for v in tree.vertices() {
        let allowed = path_rects(geom, tree, v);
        let restricted: Selection = global.intersection(&allowed).copied().collect();
        per_path_f.insert(v, vec![restricted.clone()]);
        per_path_s.insert(v, restricted);
    }
    (
        CandidateFamily { per_path: per_path_f },
        ConsistentSolution { global: global.clone(), per_path: per_path_s },
    )
}
