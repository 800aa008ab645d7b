//! Geometric encoding of the covering program: capacitated, costed
//! rectangles grouped into per-cell prefix chains, downward demand rays,
//! selection feasibility, exact optima, and SVG rendering.

use crate::grid::{build_all_segments, CellId, Grid};
use crate::instance::Instance;
use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet, HashMap};

pub type RectId = usize;
pub type ChainId = usize;

/// One rectangle: a job segment with the job's row extent, capacity and
/// cost. `pos` is its 1-based position inside its chain.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rect {
    pub row: usize,
    pub job_id: u32,
    pub seg: (i64, i64),
    pub cell: CellId,
    pub pos: usize,
    pub cap: i64,
    pub cost: i64,
}

/// The rectangles of one job inside one cell, left to right; selections
/// must take prefixes of this list.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Chain {
    pub row: usize,
    pub cell: CellId,
    pub rects: Vec<RectId>,
}

/// A downward demand ray for the window [s, t].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Ray {
    pub s: i64,
    pub t: i64,
    /// row of the first job released at or after s (1-based)
    pub row_min: usize,
    pub demand: i64,
}

#[derive(Debug, Clone)]
pub struct Geometry {
    pub rects: Vec<Rect>,
    pub chains: Vec<Chain>,
    pub rays: Vec<Ray>,
    pub chain_of_rect: Vec<ChainId>,
    pub chains_by_cell: BTreeMap<CellId, Vec<ChainId>>,
    pub n_rows: usize,
    pub t_hi: i64,
    pub grid: Grid,
}

/// A prefix-closed set of rectangles.
pub type Selection = BTreeSet<RectId>;

pub fn build_geometry(instance: &Instance, grid: &Grid) -> Result<Geometry> {
    let t_hi = if instance.is_empty() { 0 } else { instance.horizon()? };
    let mut rects = Vec::new();
    let mut chains = Vec::new();
    let mut chain_of_rect = Vec::new();
    let mut chains_by_cell: BTreeMap<CellId, Vec<ChainId>> = BTreeMap::new();
    if !instance.is_empty() {
        let sets = build_all_segments(grid, instance, t_hi)?;
        for (row, set) in sets.iter().enumerate() {
            let job = instance.jobs()[row];
            for (cell, segs) in &set.per_cell {
                let chain_id = chains.len();
                let mut ids = Vec::with_capacity(segs.len());
                for (pos, &(b, e)) in segs.iter().enumerate() {
                    let cost = if pos == 0 {
                        job.weight * (e - job.release)
                    } else {
                        job.weight * (e - b)
                    };
                    let rect_id = rects.len();
                    rects.push(Rect {
                        row: row + 1,
                        job_id: job.id,
                        seg: (b, e),
                        cell: *cell,
                        pos: pos + 1,
                        cap: job.proc,
                        cost,
                    });
                    chain_of_rect.push(chain_id);
                    ids.push(rect_id);
                }
                chains.push(Chain { row: row + 1, cell: *cell, rects: ids });
                chains_by_cell.entry(*cell).or_default().push(chain_id);
            }
        }
    }
    // rays: s over release dates, t in [s, T], positive demand only
    let mut rays = Vec::new();
    if !instance.is_empty() {
        let mut releases: Vec<i64> = instance.jobs().iter().map(|j| j.release).collect();
        releases.sort_unstable();
        releases.dedup();
        for &s in &releases {
            for t in s..=t_hi {
                let mut demand = -(t - s);
                let mut row_min = usize::MAX;
                for (row, job) in instance.jobs().iter().enumerate() {
                    if s <= job.release && job.release <= t {
                        demand += job.proc;
                        row_min = row_min.min(row + 1);
                    }
                }
                if demand > 0 {
                    rays.push(Ray { s, t, row_min, demand });
                }
            }
        }
    }
    Ok(Geometry {
        rects,
        chains,
        rays,
        chain_of_rect,
        chains_by_cell,
        n_rows: instance.len(),
        t_hi,
        grid: grid.clone(),
    })
}

impl Geometry {
    pub fn cost(&self, sel: &Selection) -> i64 {
        sel.iter().map(|&r| self.rects[r].cost).sum()
    }

    /// Chain prefix lengths of a selection; errors are not raised here,
    /// use `ip2_check` for prefix validation.
    pub fn prefix_lens(&self, sel: &Selection) -> Vec<usize> {
        let mut lens = vec![0usize; self.chains.len()];
        for &r in sel {
            lens[self.chain_of_rect[r]] += 1;
        }
        lens
    }
}

/// Geometric ray/rectangle intersection on doubled coordinates: the ray
/// sits at x = t + 1/2 and spans rows at and below row_min + 1/2.
pub fn intersects(ray: &Ray, rect: &Rect) -> bool {
    let x2 = 2 * ray.t + 1;
    let in_x = 2 * rect.seg.0 <= x2 && x2 < 2 * rect.seg.1;
    // rect rows [row, row+1) meet [row_min + 1/2, inf) iff 2*row+2 > 2*row_min+1
    let in_y = 2 * rect.row + 2 > 2 * ray.row_min + 1;
    in_x && in_y
}

/// Rectangles intersecting a ray.
pub fn ray_rects(geom: &Geometry, ray: &Ray) -> Vec<RectId> {
    (0..geom.rects.len())
        .filter(|&r| intersects(ray, &geom.rects[r]))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Ip2Report {
    Feasible,
    PrefixViolation { chain: ChainId, pos: usize },
    Uncovered { ray_index: usize, have: i64, need: i64 },
}

/// Verifies prefix closure per chain and capacity coverage per ray.
pub fn ip2_check(geom: &Geometry, sel: &Selection) -> Ip2Report {
    for (cid, chain) in geom.chains.iter().enumerate() {
        let mut seen_gap = false;
        for (pos, &r) in chain.rects.iter().enumerate() {
            if sel.contains(&r) {
                if seen_gap {
                    return Ip2Report::PrefixViolation { chain: cid, pos: pos + 1 };
                }
            } else {
                seen_gap = true;
            }
        }
    }
    for (ri, ray) in geom.rays.iter().enumerate() {
        let have: i64 = sel
            .iter()
            .filter(|&&r| intersects(ray, &geom.rects[r]))
            .map(|&r| geom.rects[r].cap)
            .sum();
        if have < ray.demand {
            return Ip2Report::Uncovered { ray_index: ri, have, need: ray.demand };
        }
    }
    Ip2Report::Feasible
}

/// Exhaustive minimum-cost prefix-closed covering selection, by recursion
/// over per-chain prefix lengths with cost pruning. Rectangles lying
/// wholly at or beyond the horizon never meet a ray and are skipped.
pub fn ip2_opt_bruteforce(geom: &Geometry, max_rects: usize) -> Result<Option<(i64, Selection)>> {
    if geom.rects.len() > max_rects {
        return Err(Error::BruteForceGuard(format!(
            "{} rectangles exceed bound {max_rects}",
            geom.rects.len()
        )));
    }
    // max useful prefix length per chain: drop rects starting at or after T
    let max_len: Vec<usize> = geom
        .chains
        .iter()
        .map(|c| {
            c.rects
                .iter()
                .take_while(|&&r| geom.rects[r].seg.0 < geom.t_hi)
                .count()
        })
        .collect();
    // coverage bookkeeping: per ray, capacity still needed
    let mut needed: Vec<i64> = geom.rays.iter().map(|r| r.demand).collect();
    // per rect, the rays it meets
    let rays_of_rect: Vec<Vec<usize>> = (0..geom.rects.len())
        .map(|r| {
            (0..geom.rays.len())
                .filter(|&ri| intersects(&geom.rays[ri], &geom.rects[r]))
                .collect()
        })
        .collect();
    // upper bound: take all prefixes; if that cannot cover, report infeasible
    {
        let mut have = vec![0i64; geom.rays.len()];
        for (cid, chain) in geom.chains.iter().enumerate() {
            for &r in chain.rects.iter().take(max_len[cid]) {
                for &ri in &rays_of_rect[r] {
                    have[ri] += geom.rects[r].cap;
                }
            }
        }
        if have.iter().zip(&needed).any(|(h, n)| h < n) {
            return Ok(None);
        }
    }

    struct Ctx<'a> {
        geom: &'a Geometry,
        max_len: &'a [usize],
        rays_of_rect: &'a [Vec<usize>],
        best: Option<(i64, Vec<usize>)>,
        lens: Vec<usize>,
    }

    fn residual_coverable(ctx: &Ctx, chain_from: usize, needed: &[i64]) -> bool {
        // optimistic: all remaining chains fully selected
        let mut slack: Vec<i64> = needed.to_vec();
        for cid in chain_from..ctx.geom.chains.len() {
            for &r in ctx.geom.chains[cid].rects.iter().take(ctx.max_len[cid]) {
                for &ri in &ctx.rays_of_rect[r] {
                    slack[ri] -= ctx.geom.rects[r].cap;
                }
            }
        }
        slack.iter().all(|&s| s <= 0)
    }

    fn go(ctx: &mut Ctx, cid: usize, cost: i64, needed: &mut Vec<i64>) {
        if let Some((bc, _)) = &ctx.best {
            if cost >= *bc {
                return;
            }
        }
        if cid == ctx.geom.chains.len() {
            if needed.iter().all(|&n| n <= 0) {
                ctx.best = Some((cost, ctx.lens.clone()));
            }
            return;
        }
        if !residual_coverable(ctx, cid, needed) {
            return;
        }
        let chain = ctx.geom.chains[cid].clone();
        let mut add_cost = 0i64;
        for take in 0..=ctx.max_len[cid] {
            if take > 0 {
                let r = chain.rects[take - 1];
                add_cost += ctx.geom.rects[r].cost;
                for &ri in &ctx.rays_of_rect[r] {
                    needed[ri] -= ctx.geom.rects[r].cap;
                }
            }
            ctx.lens[cid] = take;
            go(ctx, cid + 1, cost + add_cost, needed);
        }
        for take in 1..=ctx.max_len[cid] {
            let r = chain.rects[take - 1];
            for &ri in &ctx.rays_of_rect[r] {
                needed[ri] += ctx.geom.rects[r].cap;
            }
        }
        ctx.lens[cid] = 0;
    }

    let mut ctx = Ctx {
        geom,
        max_len: &max_len,
        rays_of_rect: &rays_of_rect,
        best: None,
        lens: vec![0; geom.chains.len()],
    };
    go(&mut ctx, 0, 0, &mut needed);
    let (cost, lens) = ctx.best.ok_or_else(|| Error::BugTrap("coverable geometry lost".into()))?;
    let mut sel = Selection::new();
    for (cid, &take) in lens.iter().enumerate() {
        for &r in geom.chains[cid].rects.iter().take(take) {
            sel.insert(r);
        }
    }
    Ok(Some((cost, sel)))
}

/// Exact minimum-cost prefix-closed covering selection via a backward
/// scan over unit time with one coverage bit per row. Equivalent to the
/// exhaustive search (cross-checked in tests), exponential only in the
/// number of jobs.
pub fn ip2_opt(geom: &Geometry) -> Result<Option<(i64, Selection)>> {
    let n = geom.n_rows;
    if n == 0 {
        return Ok(Some((0, Selection::new())));
    }
    if n > 16 {
        return Err(Error::BruteForceGuard(format!("{n} rows exceed solver bound 16")));
    }
    // per row: the rect covering each unit t, plus segment-top flags
    let t_max = geom
        .rects
        .iter()
        .map(|r| r.seg.1)
        .max()
        .unwrap_or(0)
        .max(geom.t_hi);
    let mut rect_at: Vec<HashMap<i64, RectId>> = vec![HashMap::new(); n + 1];
    for (rid, rect) in geom.rects.iter().enumerate() {
        for t in rect.seg.0..rect.seg.1 {
            rect_at[rect.row].insert(t, rid);
        }
    }
    // the first segment of the deepest chain starts at the release
    let release_of_row: Vec<i64> = {
        let mut v = vec![i64::MAX; n + 1];
        for rect in &geom.rects {
            v[rect.row] = v[rect.row].min(rect.seg.0);
        }
        v
    };
    let rays_at: BTreeMap<i64, Vec<&Ray>> = {
        let mut m: BTreeMap<i64, Vec<&Ray>> = BTreeMap::new();
        for ray in &geom.rays {
            m.entry(ray.t).or_default().push(ray);
        }
        m
    };
    let caps: Vec<i64> = {
        let mut v = vec![0i64; n + 1];
        for rect in &geom.rects {
            v[rect.row] = rect.cap;
        }
        v
    };

    // states: bitmask over rows 1..=n (bit row-1), value: min cost + the
    // rect choices made so far (reconstructed via parent links)
    #[derive(Clone)]
    struct Node {
        cost: i64,
        parent: Option<(usize, u32)>, // (parent node index, mask at t+1)
        paid: Vec<RectId>,
    }
    let mut arena: Vec<Node> = Vec::new();
    let mut cur: BTreeMap<u32, usize> = BTreeMap::new();
    arena.push(Node { cost: 0, parent: None, paid: vec![] });
    cur.insert(0, 0);

    for t in (0..t_max).rev() {
        let mut next: BTreeMap<u32, usize> = BTreeMap::new();
        for (&mask, &node_idx) in &cur {
            // decide bits for rows alive at t
            let mut choices: Vec<(u32, i64, Vec<RectId>)> = vec![(0, 0, vec![])];
            for row in 1..=n {
                let bit = 1u32 << (row - 1);
                let alive = release_of_row[row] <= t && rect_at[row].contains_key(&t);
                let mut new_choices = Vec::new();
                for (m, c, paid) in &choices {
                    if !alive {
                        new_choices.push((*m, *c, paid.clone()));
                        continue;
                    }
                    let rid = rect_at[row][&t];
                    let rect = &geom.rects[rid];
                    let was_on = mask & bit != 0;
                    let prev_rid = rect_at[row].get(&(t + 1)).copied();
                    let same_segment = prev_rid == Some(rid);
                    let same_chain = prev_rid
                        .map(|pr| geom.chain_of_rect[pr] == geom.chain_of_rect[rid])
                        .unwrap_or(false);
                    if same_segment {
                        // bit carries over unchanged, nothing to pay
                        let m2 = if was_on { m | bit } else { *m };
                        new_choices.push((m2, *c, paid.clone()));
                        continue;
                    }
                    debug_assert_eq!(t + 1, rect.seg.1, "new segments are entered at their top unit");
                    // entering a new segment from above (or entering the
                    // timeline): choose off, or on (pay this rect)
                    let forced_on = same_chain && was_on;
                    if !forced_on {
                        new_choices.push((*m, *c, paid.clone()));
                    }
                    let mut paid2 = paid.clone();
                    paid2.push(rid);
                    new_choices.push((m | bit, c + rect.cost, paid2));
                }
                choices = new_choices;
            }
            // apply ray constraints at t
            'choice: for (m, c, paid) in choices {
                if let Some(rays) = rays_at.get(&t) {
                    for ray in rays {
                        let mut covered = 0i64;
                        for row in ray.row_min..=n {
                            // rows at or below row_min are exactly those in the window
                            if release_of_row[row] <= t && m & (1u32 << (row - 1)) != 0 {
                                covered += caps[row];
                            }
                        }
                        if covered < ray.demand {
                            continue 'choice;
                        }
                    }
                }
                let total = arena[node_idx].cost + c;
                let entry = next.entry(m);
                match entry {
                    std::collections::btree_map::Entry::Occupied(mut o) => {
                        if arena[*o.get()].cost > total {
                            arena.push(Node { cost: total, parent: Some((node_idx, mask)), paid });
                            *o.get_mut() = arena.len() - 1;
                        }
                    }
                    std::collections::btree_map::Entry::Vacant(v) => {
                        arena.push(Node { cost: total, parent: Some((node_idx, mask)), paid });
                        v.insert(arena.len() - 1);
                    }
                }
            }
        }
        if next.is_empty() {
            return Ok(None);
        }
        cur = next;
    }
    let best = cur
        .values()
        .min_by_key(|&&idx| (arena[idx].cost, idx))
        .copied()
        .ok_or_else(|| Error::BugTrap("empty state space".into()))?;
    let mut sel = Selection::new();
    let mut at = Some(best);
    while let Some(idx) = at {
        for &r in &arena[idx].paid {
            sel.insert(r);
        }
        at = arena[idx].parent.map(|(p, _)| p);
    }
    let cost = geom.cost(&sel);
    debug_assert_eq!(cost, arena[best].cost);
    Ok(Some((cost, sel)))
}

/// Translates a prefix-closed selection into an indicator solution: each
/// job stays unfinished until the end of its rightmost selected segment.
/// Jobs without selected rectangles get an all-zero indicator.
pub fn ip2_to_ip(instance: &Instance, geom: &Geometry, sel: &Selection) -> crate::oracle::IpSolution {
    let mut finish: Vec<i64> = instance.jobs().iter().map(|j| j.release).collect();
    for &r in sel {
        let rect = &geom.rects[r];
        let row = rect.row - 1;
        finish[row] = finish[row].max(rect.seg.1);
    }
    crate::oracle::IpSolution { finish }
}

/// Builds the witness selection from optimal flow times: every segment
/// meeting [r_j, r_j + F*_j) is selected. The per-job cost is checked
/// against eight times the job's weighted flow time.
pub fn opt_to_ip2_witness(
    instance: &Instance,
    geom: &Geometry,
    flows: &[i64],
) -> Result<Selection> {
    let mut sel = Selection::new();
    let mut per_job_cost = vec![0i64; instance.len()];
    for (rid, rect) in geom.rects.iter().enumerate() {
        let row = rect.row - 1;
        let job = instance.jobs()[row];
        let window = (job.release, job.release + flows[row]);
        if rect.seg.0 < window.1 && window.0 < rect.seg.1 {
            sel.insert(rid);
            per_job_cost[row] += rect.cost;
        }
    }
    for (row, job) in instance.jobs().iter().enumerate() {
        let bound = 8 * job.weight * flows[row];
        if per_job_cost[row] > bound {
            return Err(Error::BugTrap(format!(
                "witness cost {} for job {} exceeds bound {bound}",
                per_job_cost[row], job.id
            )));
        }
    }
    if ip2_check(geom, &sel) != Ip2Report::Feasible {
        return Err(Error::BugTrap("witness selection is not feasible".into()));
    }
    Ok(sel)
}

#[derive(Serialize, Deserialize)]
struct SelectionChainFile {
    job: u32,
    #[serde(rename = "cellLevel")]
    cell_level: u32,
    #[serde(rename = "cellBeg")]
    cell_beg: i64,
    #[serde(rename = "prefixLen")]
    prefix_len: usize,
}

#[derive(Serialize, Deserialize)]
struct SelectionFile {
    chains: Vec<SelectionChainFile>,
}

/// Serializes a selection as per-chain prefix lengths.
pub fn selection_to_json(geom: &Geometry, sel: &Selection) -> String {
    let lens = geom.prefix_lens(sel);
    let mut chains = Vec::new();
    for (cid, chain) in geom.chains.iter().enumerate() {
        if lens[cid] > 0 {
            chains.push(SelectionChainFile {
                job: geom.rects[chain.rects[0]].job_id,
                cell_level: chain.cell.level,
                cell_beg: geom.grid.beg(chain.cell),
                prefix_len: lens[cid],
            });
        }
    }
    serde_json::to_string_pretty(&SelectionFile { chains }).unwrap() + "\n"
}

pub fn selection_from_json(geom: &Geometry, text: &str) -> Result<Selection> {
    let file: SelectionFile = serde_json::from_str(text)?;
    let mut sel = Selection::new();
    for entry in &file.chains {
        let chain = geom
            .chains
            .iter()
            .find(|c| {
                c.cell.level == entry.cell_level
                    && geom.grid.beg(c.cell) == entry.cell_beg
                    && geom.rects[c.rects[0]].job_id == entry.job
            })
            .ok_or_else(|| {
                Error::InvalidBounds(format!(
                    "no chain for job {} in level-{} cell at {}",
                    entry.job, entry.cell_level, entry.cell_beg
                ))
            })?;
        if entry.prefix_len > chain.rects.len() {
            return Err(Error::InvalidBounds(format!(
                "prefix length {} exceeds chain length {}",
                entry.prefix_len,
                chain.rects.len()
            )));
        }
        for &r in chain.rects.iter().take(entry.prefix_len) {
            sel.insert(r);
        }
    }
    Ok(sel)
}

/// Deterministic SVG rendering: one rectangle per segment (hatched when
/// selected), red downward rays, green cell-boundary guides.
pub fn render_svg(geom: &Geometry, sel: Option<&Selection>) -> String {
    // layout: 1 time unit = 32px, 1 row = 24px, guides drawn above rows
    let ux = 32i64;
    let uy = 24i64;
    let margin = 16i64;
    let x_lo = geom.grid.beg(geom.grid.root()).min(0);
    let x_hi = geom
        .rects
        .iter()
        .map(|r| r.seg.1)
        .max()
        .unwrap_or(geom.t_hi)
        .max(geom.t_hi);
    let rows = geom.n_rows as i64;
    let width = (x_hi - x_lo) * ux + 2 * margin;
    let height = (rows + 2) * uy + 2 * margin + (geom.grid.params.ell_max as i64 + 1) * 6;
    let px = |x: i64| margin + (x - x_lo) * ux;
    let py = |row2: i64| margin + (geom.grid.params.ell_max as i64 + 1) * 6 + row2 * uy / 2;

    let mut out = String::new();
    out.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"{width}\" height=\"{height}\" viewBox=\"0 0 {width} {height}\">\n"
    ));
    out.push_str("  <defs>\n    <pattern id=\"hatch\" width=\"6\" height=\"6\" patternTransform=\"rotate(45)\" patternUnits=\"userSpaceOnUse\">\n      <line x1=\"0\" y1=\"0\" x2=\"0\" y2=\"6\" stroke=\"#3465a4\" stroke-width=\"2\"/>\n    </pattern>\n  </defs>\n");
    out.push_str("  <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");

    // green cell boundaries, one guide band per level
    for level in 0..=geom.grid.params.ell_max {
        let y0 = margin + level as i64 * 6;
        for index in 0..geom.grid.n_cells(level) {
            let c = CellId { level, index };
            let (b, e) = (geom.grid.beg(c), geom.grid.end(c));
            if e < x_lo || b > x_hi {
                continue;
            }
            out.push_str(&format!(
                "  <line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"#4e9a06\" stroke-width=\"1\"/>\n",
                px(b.max(x_lo)),
                y0 + 3,
                px(e.min(x_hi)),
                y0 + 3
            ));
            out.push_str(&format!(
                "  <line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"#4e9a06\" stroke-width=\"1\"/>\n",
                px(b.max(x_lo)),
                y0,
                px(b.max(x_lo)),
                py(2 * rows + 2)
            ));
        }
    }

    // rectangles, row by row
    for (rid, rect) in geom.rects.iter().enumerate() {
        let fill = match sel {
            Some(s) if s.contains(&rid) => "url(#hatch)",
            _ => "none",
        };
        out.push_str(&format!(
            "  <rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"{}\" stroke=\"black\" stroke-width=\"1\"/>\n",
            px(rect.seg.0),
            py(2 * rect.row as i64),
            (rect.seg.1 - rect.seg.0) * ux,
            uy,
            fill
        ));
    }

    // red rays: from just above the first covered row downward past the last row
    for ray in &geom.rays {
        let x2 = px(ray.t) + ux / 2;
        let y_top = py(2 * ray.row_min as i64 + 1);
        let y_bot = py(2 * rows + 2);
        out.push_str(&format!(
            "  <line x1=\"{x2}\" y1=\"{y_top}\" x2=\"{x2}\" y2=\"{y_bot}\" stroke=\"#cc0000\" stroke-width=\"2\"/>\n"
        ));
        out.push_str(&format!(
            "  <path d=\"M {} {} L {} {} L {} {} Z\" fill=\"#cc0000\"/>\n",
            x2 - 4,
            y_bot,
            x2 + 4,
            y_bot,
            x2,
            y_bot + 6
        ));
    }

    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridParams;
    use crate::oracle::{ip_check, ip_cost, opt_schedule, IpReport, OracleGuard};

    pub(crate) fn fixture() -> (Instance, Geometry) {
        let i = Instance::new(vec![(0, 2, 1), (1, 1, 2)], 1).unwrap();
        let g = Grid::build(4, GridParams::new(1, 4, 0, 1).unwrap()).unwrap();
        let geom = build_geometry(&i, &g).unwrap();
        (i, geom)
    }

    fn find_rect(geom: &Geometry, row: usize, seg: (i64, i64)) -> RectId {
        geom.rects
            .iter()
            .position(|r| r.row == row && r.seg == seg)
            .unwrap()
    }

    fn fixture_opt_selection(geom: &Geometry) -> Selection {
        [
            find_rect(geom, 1, (0, 1)),
            find_rect(geom, 1, (1, 2)),
            find_rect(geom, 1, (2, 3)),
            find_rect(geom, 2, (1, 2)),
        ]
        .into_iter()
        .collect()
    }

    #[test]
    fn fixture_rect_costs() {
        let (_, geom) = fixture();
        let costs: Vec<(usize, (i64, i64), i64)> = geom
            .rects
            .iter()
            .map(|r| (r.row, r.seg, r.cost))
            .collect();
        assert!(costs.contains(&(1, (0, 1), 1)));
        assert!(costs.contains(&(1, (1, 2), 2)));
        assert!(costs.contains(&(1, (2, 3), 3)));
        assert!(costs.contains(&(1, (3, 4), 1)));
        assert!(costs.contains(&(2, (1, 2), 2)));
        assert!(costs.contains(&(2, (2, 3), 4)));
        assert!(costs.contains(&(2, (3, 4), 2)));
        assert_eq!(geom.rects.len(), 7);
    }

    #[test]
    fn fixture_rays() {
        let (_, geom) = fixture();
        let rays: Vec<(i64, i64, i64)> = geom.rays.iter().map(|r| (r.s, r.t, r.demand)).collect();
        assert_eq!(rays, vec![(0, 0, 2), (0, 1, 2), (0, 2, 1), (1, 1, 1)]);
    }

    #[test]
    fn empty_instance_empty_geometry() {
        let i = Instance::new(vec![], 1).unwrap();
        let g = Grid::build(4, GridParams::new(1, 4, 0, 1).unwrap()).unwrap();
        let geom = build_geometry(&i, &g).unwrap();
        assert!(geom.rects.is_empty());
        assert!(geom.rays.is_empty());
    }

    #[test]
    fn intersect_examples() {
        let (_, geom) = fixture();
        let ray02 = geom.rays.iter().find(|r| (r.s, r.t) == (0, 2)).unwrap();
        let r1 = find_rect(&geom, 1, (2, 3));
        assert!(intersects(ray02, &geom.rects[r1]));
        let ray11 = geom.rays.iter().find(|r| (r.s, r.t) == (1, 1)).unwrap();
        let r2 = find_rect(&geom, 1, (1, 2));
        assert!(!intersects(ray11, &geom.rects[r2]));
        // a ray beyond all rects meets nothing
        let far = Ray { s: 0, t: 99, row_min: 1, demand: 1 };
        assert!(geom.rects.iter().all(|r| !intersects(&far, r)));
    }

    #[test]
    fn intersect_matches_algebra() {
        let (i, geom) = fixture();
        for ray in &geom.rays {
            for rect in &geom.rects {
                let job = i.jobs()[rect.row - 1];
                let algebraic = ray.s <= job.release
                    && job.release <= ray.t
                    && rect.seg.0 <= ray.t
                    && ray.t < rect.seg.1;
                assert_eq!(intersects(ray, rect), algebraic);
            }
        }
    }

    #[test]
    fn ip2_check_examples() {
        let (_, geom) = fixture();
        let sel = fixture_opt_selection(&geom);
        assert_eq!(ip2_check(&geom, &sel), Ip2Report::Feasible);
        assert_eq!(geom.cost(&sel), 8);

        let mut missing = sel.clone();
        missing.remove(&find_rect(&geom, 2, (1, 2)));
        match ip2_check(&geom, &missing) {
            Ip2Report::Uncovered { ray_index, .. } => {
                assert_eq!((geom.rays[ray_index].s, geom.rays[ray_index].t), (1, 1));
            }
            other => panic!("expected uncovered ray, got {other:?}"),
        }

        // second rect of a chain without the first
        let mut bad = Selection::new();
        bad.insert(find_rect(&geom, 1, (3, 4)));
        assert!(matches!(
            ip2_check(&geom, &bad),
            Ip2Report::PrefixViolation { .. }
        ));
    }

    #[test]
    fn brute_force_fixture() {
        let (_, geom) = fixture();
        let (cost, sel) = ip2_opt_bruteforce(&geom, 24).unwrap().unwrap();
        assert_eq!(cost, 8);
        assert_eq!(sel, fixture_opt_selection(&geom));
    }

    #[test]
    fn brute_force_no_rays() {
        let i = Instance::new(vec![(0, 1, 1)], 1).unwrap();
        let g = Grid::build(1, GridParams::new(1, 1, 0, 1).unwrap()).unwrap();
        let mut geom = build_geometry(&i, &g).unwrap();
        geom.rays.clear();
        let (cost, sel) = ip2_opt_bruteforce(&geom, 24).unwrap().unwrap();
        assert_eq!(cost, 0);
        assert!(sel.is_empty());
    }

    #[test]
    fn brute_force_infeasible_when_demand_doctored() {
        let (_, geom) = fixture();
        let mut doctored = geom.clone();
        doctored.rays[0].demand = 100;
        assert_eq!(ip2_opt_bruteforce(&doctored, 24).unwrap(), None);
        assert_eq!(ip2_opt(&doctored).unwrap(), None);
    }

    #[test]
    fn brute_force_guard() {
        let (_, geom) = fixture();
        assert!(matches!(
            ip2_opt_bruteforce(&geom, 3),
            Err(Error::BruteForceGuard(_))
        ));
    }

    #[test]
    fn fast_solver_matches_brute_force() {
        for seed in 0..25u64 {
            let i = Instance::gen_random(seed, 3, 3, 3, 3, 1).unwrap();
            let t = i.horizon().unwrap();
            let (ys, xs) = crate::grid::offsets_domain(1, t).unwrap();
            let picks = [*xs.start(), 0, *xs.start() / 2];
            for &x in &picks {
                let g = Grid::build(t, GridParams::new(1, t, x, ys[0]).unwrap()).unwrap();
                let geom = build_geometry(&i, &g).unwrap();
                let fast = ip2_opt(&geom).unwrap().unwrap();
                let brute = ip2_opt_bruteforce(&geom, 40).unwrap().unwrap();
                assert_eq!(fast.0, brute.0, "seed {seed} off_x {x}");
                assert_eq!(ip2_check(&geom, &fast.1), Ip2Report::Feasible);
            }
        }
    }

    #[test]
    fn beyond_horizon_rects_meet_no_ray() {
        let (_, geom) = fixture();
        for rect in &geom.rects {
            if rect.seg.0 >= geom.t_hi {
                assert!(geom.rays.iter().all(|ray| !intersects(ray, rect)));
            }
        }
    }

    #[test]
    fn ip2_to_ip_examples() {
        let (i, geom) = fixture();
        let sel = fixture_opt_selection(&geom);
        let x = ip2_to_ip(&i, &geom, &sel);
        assert_eq!(x.finish, vec![3, 2]);
        assert_eq!(ip_cost(&i, &x), 5);
        assert_eq!(ip_check(&i, &x).unwrap(), IpReport::Feasible);
        assert!(ip_cost(&i, &x) <= geom.cost(&sel));

        let empty = Selection::new();
        let x0 = ip2_to_ip(&i, &geom, &empty);
        assert_eq!(ip_cost(&i, &x0), 0);

        let all: Selection = (0..geom.rects.len()).collect();
        let xall = ip2_to_ip(&i, &geom, &all);
        assert_eq!(xall.finish, vec![4, 4]);
    }

    #[test]
    fn chain_prefix_costs_telescope() {
        let (i, geom) = fixture();
        for chain in &geom.chains {
            let job = i.jobs()[chain.row - 1];
            let mut acc = 0;
            for &r in &chain.rects {
                acc += geom.rects[r].cost;
                assert_eq!(acc, job.weight * (geom.rects[r].seg.1 - job.release));
            }
        }
    }

    #[test]
    fn witness_fixture() {
        let (i, geom) = fixture();
        let (_, sched) = opt_schedule(&i, OracleGuard::default()).unwrap();
        let completions = sched.completions(&i).unwrap();
        let flows: Vec<i64> = i
            .jobs()
            .iter()
            .zip(&completions)
            .map(|(j, &c)| c - j.release)
            .collect();
        assert_eq!(flows, vec![3, 1]);
        let sel = opt_to_ip2_witness(&i, &geom, &flows).unwrap();
        assert_eq!(sel, fixture_opt_selection(&geom));
        assert_eq!(geom.cost(&sel), 8);
    }

    #[test]
    fn witness_single_job_window() {
        let i = Instance::new(vec![(0, 2, 1)], 1).unwrap();
        let t = i.horizon().unwrap();
        let g = Grid::build(t, GridParams::new(1, t, 0, 1).unwrap()).unwrap();
        let geom = build_geometry(&i, &g).unwrap();
        let sel = opt_to_ip2_witness(&i, &geom, &[2]).unwrap();
        for &r in &sel {
            let rect = &geom.rects[r];
            assert!(rect.seg.0 < 2 && rect.seg.1 > 0);
        }
    }

    #[test]
    fn selection_json_round_trip() {
        let (_, geom) = fixture();
        let sel = fixture_opt_selection(&geom);
        let text = selection_to_json(&geom, &sel);
        let back = selection_from_json(&geom, &text).unwrap();
        assert_eq!(back, sel);
        assert_eq!(selection_to_json(&geom, &back), text);
    }

    #[test]
    fn svg_deterministic_and_counts() {
        let (_, geom) = fixture();
        let sel = fixture_opt_selection(&geom);
        let a = render_svg(&geom, Some(&sel));
        let b = render_svg(&geom, Some(&sel));
        assert_eq!(a, b);
        // one <rect> element per rectangle plus the background
        let rect_count = a.matches("<rect ").count();
        assert_eq!(rect_count, geom.rects.len() + 1);
        let hatched = a.matches("url(#hatch)").count();
        assert_eq!(hatched, sel.len());

        let i = Instance::new(vec![], 1).unwrap();
        let g = Grid::build(4, GridParams::new(1, 4, 0, 1).unwrap()).unwrap();
        let empty = build_geometry(&i, &g).unwrap();
        let svg = render_svg(&empty, None);
        assert!(svg.starts_with("<svg"));
        assert!(svg.ends_with("</svg>\n"));
    }
}
