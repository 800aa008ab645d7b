//! Offset-parameterized hierarchical grid and per-job segment
//! construction, with validators for the segment structure.

use crate::instance::{Instance, Job};
use crate::oracle::{opt_schedule, OracleGuard};
use crate::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::ops::RangeInclusive;

/// Grid parameters: branching factor K = (2/eps)^(1/eps), depth, and the
/// two offsets (horizontal shift and root-size factor).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GridParams {
    pub epsilon_inv: i64,
    pub k: i64,
    pub ell_max: u32,
    pub off_x: i64,
    pub off_y: i64,
}

fn checked_pow(base: i64, exp: u32, what: &str) -> Result<i64> {
    base.checked_pow(exp)
        .ok_or_else(|| Error::GridParam(format!("{what}: {base}^{exp} overflows")))
}

/// Branching factor K = (2*epsilon_inv)^epsilon_inv.
pub fn branching_factor(epsilon_inv: i64) -> Result<i64> {
    if epsilon_inv < 1 {
        return Err(Error::GridParam("epsilon_inv must be >= 1".into()));
    }
    let e = u32::try_from(epsilon_inv)
        .map_err(|_| Error::GridParam("epsilon_inv too large".into()))?;
    checked_pow(2 * epsilon_inv, e, "branching factor")
}

/// Minimal depth k with K^(k-2) >= T.
pub fn depth_for(k: i64, t_hi: i64) -> Result<u32> {
    let mut ell: u32 = 2;
    let mut cur: i64 = 1;
    while cur < t_hi {
        cur = cur
            .checked_mul(k)
            .ok_or_else(|| Error::GridParam("depth computation overflows".into()))?;
        ell += 1;
    }
    Ok(ell)
}

/// Exact offset domains for a horizon: the root-size factors
/// (2*epsilon_inv)^j for j in [0, epsilon_inv) and the horizontal shifts
/// (-K^(ell_max-1), 0].
pub fn offsets_domain(epsilon_inv: i64, t_hi: i64) -> Result<(Vec<i64>, RangeInclusive<i64>)> {
    if t_hi < 1 {
        return Err(Error::GridParam("horizon must be >= 1".into()));
    }
    let k = branching_factor(epsilon_inv)?;
    let ell_max = depth_for(k, t_hi)?;
    let mut off_y = Vec::new();
    let mut v = 1i64;
    for _ in 0..epsilon_inv {
        off_y.push(v);
        v = v
            .checked_mul(2 * epsilon_inv)
            .ok_or_else(|| Error::GridParam("off_y domain overflows".into()))?;
    }
    let span = checked_pow(k, ell_max - 1, "off_x domain")?;
    Ok((off_y, (-span + 1)..=0))
}

impl GridParams {
    pub fn new(epsilon_inv: i64, t_hi: i64, off_x: i64, off_y: i64) -> Result<GridParams> {
        let (ys, xs) = offsets_domain(epsilon_inv, t_hi)?;
        if !ys.contains(&off_y) {
            return Err(Error::GridParam(format!("off_y {off_y} not in {ys:?}")));
        }
        if !xs.contains(&off_x) {
            return Err(Error::GridParam(format!("off_x {off_x} not in {xs:?}")));
        }
        let k = branching_factor(epsilon_inv)?;
        let ell_max = depth_for(k, t_hi)?;
        Ok(GridParams { epsilon_inv, k, ell_max, off_x, off_y })
    }
}

/// A grid cell, identified by level and index; geometry is arithmetic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CellId {
    pub level: u32,
    pub index: i64,
}

/// The full hierarchy over [off_x, off_x + off_y*K^ell_max).
#[derive(Debug, Clone)]
pub struct Grid {
    pub params: GridParams,
    pub t_hi: i64,
}

impl Grid {
    pub fn build(t_hi: i64, params: GridParams) -> Result<Grid> {
        let expected = GridParams::new(params.epsilon_inv, t_hi, params.off_x, params.off_y)?;
        if expected != params {
            return Err(Error::GridParam(format!(
                "params {params:?} disagree with derived {expected:?}"
            )));
        }
        let g = Grid { params, t_hi };
        let root = g.root();
        if g.beg(root) > 0 || g.end(root) < t_hi {
            return Err(Error::GridParam("root does not contain [0,T)".into()));
        }
        Ok(g)
    }

    pub fn root(&self) -> CellId {
        CellId { level: 0, index: 0 }
    }

    pub fn len_at(&self, level: u32) -> i64 {
        self.params.off_y * self.params.k.pow(self.params.ell_max - level)
    }

    pub fn beg(&self, c: CellId) -> i64 {
        self.params.off_x + c.index * self.len_at(c.level)
    }

    pub fn end(&self, c: CellId) -> i64 {
        self.beg(c) + self.len_at(c.level)
    }

    pub fn n_cells(&self, level: u32) -> i64 {
        self.params.k.pow(level)
    }

    pub fn parent(&self, c: CellId) -> Option<CellId> {
        if c.level == 0 {
            None
        } else {
            Some(CellId { level: c.level - 1, index: c.index.div_euclid(self.params.k) })
        }
    }

    pub fn children(&self, c: CellId) -> Vec<CellId> {
        if c.level == self.params.ell_max {
            return vec![];
        }
        (0..self.params.k)
            .map(|i| CellId { level: c.level + 1, index: c.index * self.params.k + i })
            .collect()
    }

    /// The level-`level` cell containing time point x.
    pub fn cell_containing(&self, level: u32, x: i64) -> Result<CellId> {
        let len = self.len_at(level);
        let index = (x - self.params.off_x).div_euclid(len);
        if index < 0 || index >= self.n_cells(level) {
            return Err(Error::GridParam(format!(
                "point {x} outside the grid at level {level}"
            )));
        }
        Ok(CellId { level, index })
    }

    pub fn contains(&self, c: CellId, x: i64) -> bool {
        self.beg(c) <= x && x < self.end(c)
    }

    /// Every cell, level by level. Intended for desk-scale grids.
    pub fn all_cells(&self) -> Vec<CellId> {
        let mut out = Vec::new();
        for level in 0..=self.params.ell_max {
            for index in 0..self.n_cells(level) {
                out.push(CellId { level, index });
            }
        }
        out
    }

    pub fn total_cells(&self) -> i64 {
        (0..=self.params.ell_max).map(|l| self.n_cells(l)).sum()
    }

    /// Debug dump of the cell tree as a JSON document.
    pub fn to_debug_json(&self) -> Result<String> {
        if self.total_cells() > 100_000 {
            return Err(Error::GridParam("grid too large to dump".into()));
        }
        fn node(g: &Grid, c: CellId) -> serde_json::Value {
            let children: Vec<_> = g.children(c).into_iter().map(|ch| node(g, ch)).collect();
            serde_json::json!({
                "level": c.level,
                "beg": g.beg(c),
                "end": g.end(c),
                "children": children,
            })
        }
        Ok(serde_json::to_string_pretty(&node(self, self.root())).unwrap() + "\n")
    }
}

/// Segments of one job: per chain cell (deepest first), the consecutive
/// intervals assigned to that cell.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegmentSet {
    pub job_row: usize,
    /// (cell, segments left to right); chain cells appear left to right.
    pub per_cell: Vec<(CellId, Vec<(i64, i64)>)>,
}

impl SegmentSet {
    pub fn all_segments(&self) -> impl Iterator<Item = (CellId, (i64, i64))> + '_ {
        self.per_cell
            .iter()
            .flat_map(|(c, segs)| segs.iter().map(move |&s| (*c, s)))
    }
}

/// Builds the segment partition for one job: walk the cell chain from the
/// deepest cell containing the release upward, stopping at the first cell
/// whose end reaches the horizon, and subdivide each chain step two grid
/// levels finer (unit length at the two deepest levels).
pub fn build_segments(grid: &Grid, job: &Job, row: usize, t_hi: i64) -> Result<SegmentSet> {
    if job.release < 0 || job.release >= t_hi {
        return Err(Error::ReleaseOutOfRange(job.id));
    }
    let ell_max = grid.params.ell_max;
    let mut chain = vec![grid.cell_containing(ell_max, job.release)?];
    while grid.end(*chain.last().unwrap()) < t_hi {
        let cur = *chain.last().unwrap();
        if cur.level == 0 {
            return Err(Error::BugTrap("chain escaped the root".into()));
        }
        chain.push(grid.cell_containing(cur.level - 1, grid.end(cur))?);
    }
    let mut per_cell = Vec::with_capacity(chain.len());
    let mut lo = job.release;
    for cell in &chain {
        let hi = grid.end(*cell);
        let seg_len = if cell.level + 2 <= ell_max {
            grid.len_at(cell.level + 2)
        } else {
            1
        };
        debug_assert_eq!((hi - lo).rem_euclid(seg_len), 0, "segment run must tile evenly");
        let mut segs = Vec::new();
        let mut b = lo;
        while b < hi {
            segs.push((b, b + seg_len));
            b += seg_len;
        }
        per_cell.push((*cell, segs));
        lo = hi;
    }
    Ok(SegmentSet { job_row: row, per_cell })
}

pub fn build_all_segments(grid: &Grid, instance: &Instance, t_hi: i64) -> Result<Vec<SegmentSet>> {
    instance
        .jobs()
        .iter()
        .enumerate()
        .map(|(row, j)| build_segments(grid, j, row, t_hi))
        .collect()
}

/// Outcome of the structural validation of segment sets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SegReport {
    Ok,
    Violation { property: u8, detail: String },
}

/// Validates the five structural properties of per-job segments plus the
/// cross-job nesting property.
pub fn check_segment_properties(instance: &Instance, grid: &Grid) -> Result<SegReport> {
    let t_hi = instance.horizon()?;
    let sets = build_all_segments(grid, instance, t_hi)?;
    let k = grid.params.k;
    let ell_max = grid.params.ell_max;
    for (set, job) in sets.iter().zip(instance.jobs()) {
        // property 1: contiguous cover of [r_j, T) starting at the release
        let segs: Vec<(CellId, (i64, i64))> = set.all_segments().collect();
        if segs.is_empty() || segs[0].1 .0 != job.release {
            return Ok(SegReport::Violation {
                property: 1,
                detail: format!("job {}: first segment does not start at release", job.id),
            });
        }
        for w in segs.windows(2) {
            if w[0].1 .1 != w[1].1 .0 {
                return Ok(SegReport::Violation {
                    property: 1,
                    detail: format!("job {}: gap between {:?} and {:?}", job.id, w[0].1, w[1].1),
                });
            }
        }
        if segs.last().unwrap().1 .1 < t_hi {
            return Ok(SegReport::Violation {
                property: 1,
                detail: format!("job {}: segments stop before the horizon", job.id),
            });
        }
        // property 2: containment and alignment
        for (cell, (b, e)) in &segs {
            if *b < grid.beg(*cell) || *e > grid.end(*cell) {
                return Ok(SegReport::Violation {
                    property: 2,
                    detail: format!("job {}: segment [{b},{e}) leaves its cell", job.id),
                });
            }
            if cell.level + 2 <= ell_max {
                let sub = grid.cell_containing(cell.level + 2, *b)?;
                if grid.beg(sub) != *b || grid.end(sub) != *e {
                    return Ok(SegReport::Violation {
                        property: 2,
                        detail: format!(
                            "job {}: [{b},{e}) is not a level-{} cell",
                            job.id,
                            cell.level + 2
                        ),
                    });
                }
            } else if e - b != 1 {
                return Ok(SegReport::Violation {
                    property: 2,
                    detail: format!("job {}: deep segment [{b},{e}) is not unit", job.id),
                });
            }
        }
        // property 3: right alignment, count, equal lengths per cell
        for (idx, (cell, cell_segs)) in set.per_cell.iter().enumerate() {
            let last_end = cell_segs.last().unwrap().1;
            if last_end != grid.end(*cell) {
                return Ok(SegReport::Violation {
                    property: 3,
                    detail: format!("job {}: cell run not right-aligned", job.id),
                });
            }
            if last_end > t_hi && idx + 1 != set.per_cell.len() {
                return Ok(SegReport::Violation {
                    property: 3,
                    detail: format!("job {}: non-final cell crosses the horizon", job.id),
                });
            }
            if cell_segs.len() as i64 > k * k {
                return Ok(SegReport::Violation {
                    property: 3,
                    detail: format!("job {}: {} segments in one cell", job.id, cell_segs.len()),
                });
            }
            let l0 = cell_segs[0].1 - cell_segs[0].0;
            if cell_segs.iter().any(|(b, e)| e - b != l0) {
                return Ok(SegReport::Violation {
                    property: 3,
                    detail: format!("job {}: unequal segment lengths in a cell", job.id),
                });
            }
        }
        // property 4: lengths across cells stay 1 or jump by powers of K
        for w in set.per_cell.windows(2) {
            let a = w[0].1[0].1 - w[0].1[0].0;
            let b = w[1].1[0].1 - w[1].1[0].0;
            if a == b {
                if a != 1 {
                    return Ok(SegReport::Violation {
                        property: 4,
                        detail: format!("job {}: equal non-unit lengths {a}", job.id),
                    });
                }
            } else {
                if b % a != 0 {
                    return Ok(SegReport::Violation {
                        property: 4,
                        detail: format!("job {}: length {b} not a multiple of {a}", job.id),
                    });
                }
                let mut q = b / a;
                while q > 1 && q % k == 0 {
                    q /= k;
                }
                if q != 1 {
                    return Ok(SegReport::Violation {
                        property: 4,
                        detail: format!("job {}: {b}/{a} is not a power of K", job.id),
                    });
                }
            }
        }
    }
    // nesting: segments of later-released jobs refine earlier ones
    for a in &sets {
        for b in &sets {
            let (ja, jb) = (instance.jobs()[a.job_row], instance.jobs()[b.job_row]);
            if ja.release > jb.release {
                continue;
            }
            for (_, (sb, se)) in b.all_segments() {
                let inside = a
                    .all_segments()
                    .any(|(_, (ab, ae))| ab <= sb && se <= ae);
                if !inside {
                    return Ok(SegReport::Violation {
                        property: 6,
                        detail: format!(
                            "job {} segment [{sb},{se}) not nested in job {}",
                            jb.id, ja.id
                        ),
                    });
                }
            }
        }
    }
    Ok(SegReport::Ok)
}

/// Per-job empirical frequency of the event that the optimal flow time
/// reaches a 1/(eps*K) fraction of its landing cell's length, over
/// sampled or enumerated offsets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FlowCellStats {
    pub samples: u64,
    /// (job id, number of sampled offsets where the event held)
    pub per_job: Vec<(u32, u64)>,
}

pub fn flow_cell_statistics(
    instance: &Instance,
    epsilon_inv: i64,
    trials: u64,
    seed: u64,
) -> Result<FlowCellStats> {
    if trials == 0 {
        return Ok(FlowCellStats { samples: 0, per_job: vec![] });
    }
    let t_hi = instance.horizon()?;
    let (_, sched) = opt_schedule(instance, OracleGuard::default())?;
    let completions = sched.completions(instance)?;
    let flows: Vec<i64> = instance
        .jobs()
        .iter()
        .zip(&completions)
        .map(|(j, &c)| c - j.release)
        .collect();
    let (ys, xs) = offsets_domain(epsilon_inv, t_hi)?;
    let domain_size = ys.len() as u64 * ((xs.end() - xs.start() + 1) as u64);
    let pairs: Vec<(i64, i64)> = if trials >= domain_size {
        ys.iter()
            .flat_map(|&y| xs.clone().map(move |x| (x, y)))
            .collect()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..trials)
            .map(|_| {
                let y = ys[rng.gen_range(0..ys.len())];
                let x = rng.gen_range(*xs.start()..=*xs.end());
                (x, y)
            })
            .collect()
    };
    let mut hits = vec![0u64; instance.len()];
    for &(off_x, off_y) in &pairs {
        let params = GridParams::new(epsilon_inv, t_hi, off_x, off_y)?;
        let grid = Grid::build(t_hi, params)?;
        for (row, job) in instance.jobs().iter().enumerate() {
            let set = build_segments(&grid, job, row, t_hi)?;
            let probe = job.release + flows[row] - 1;
            let cell = set
                .all_segments()
                .find(|(_, (b, e))| *b <= probe && probe < *e)
                .map(|(c, _)| c)
                .ok_or_else(|| Error::BugTrap("flow point not covered by segments".into()))?;
            // event: F* >= len(C*) / (eps*K), exactly in integers
            if flows[row] * grid.params.k >= grid.len_at(cell.level) * epsilon_inv {
                hits[row] += 1;
            }
        }
    }
    Ok(FlowCellStats {
        samples: pairs.len() as u64,
        per_job: instance
            .jobs()
            .iter()
            .zip(hits)
            .map(|(j, h)| (j.id, h))
            .collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture() -> Instance {
        Instance::new(vec![(0, 2, 1), (1, 1, 2)], 1).unwrap()
    }

    fn fixture_grid() -> Grid {
        let params = GridParams::new(1, 4, 0, 1).unwrap();
        Grid::build(4, params).unwrap()
    }

    #[test]
    fn offsets_domain_examples() {
        let (ys, xs) = offsets_domain(1, 4).unwrap();
        assert_eq!(ys, vec![1]);
        assert_eq!(xs, -7..=0);
        let (ys, xs) = offsets_domain(2, 1).unwrap();
        assert_eq!(ys, vec![1, 4]);
        assert_eq!(xs, -15..=0);
        let (_, xs) = offsets_domain(1, 1).unwrap();
        assert_eq!(xs, -1..=0);
    }

    #[test]
    fn grid_shape() {
        let g = fixture_grid();
        assert_eq!(g.beg(g.root()), 0);
        assert_eq!(g.end(g.root()), 16);
        assert_eq!(g.len_at(4), 1);
        assert_eq!(g.total_cells(), 31);
        // shifted root still contains [0, T)
        let g2 = Grid::build(4, GridParams::new(1, 4, -7, 1).unwrap()).unwrap();
        assert_eq!(g2.beg(g2.root()), -7);
        assert_eq!(g2.end(g2.root()), 9);
        // children tile their parent, at every level
        for c in g.all_cells() {
            let kids = g.children(c);
            if c.level < g.params.ell_max {
                assert_eq!(kids.len() as i64, g.params.k);
                assert_eq!(g.beg(kids[0]), g.beg(c));
                assert_eq!(g.end(*kids.last().unwrap()), g.end(c));
                for w in kids.windows(2) {
                    assert_eq!(g.end(w[0]), g.beg(w[1]));
                }
            } else {
                assert!(kids.is_empty());
            }
        }
    }

    #[test]
    fn bad_params_rejected() {
        assert!(GridParams::new(1, 4, 1, 1).is_err());
        assert!(GridParams::new(1, 4, -8, 1).is_err());
        assert!(GridParams::new(1, 4, 0, 2).is_err());
        assert!(GridParams::new(2, 1, 0, 2).is_err());
    }

    #[test]
    fn segments_fixture_job0() {
        let g = fixture_grid();
        let i = fixture();
        let set = build_segments(&g, &i.jobs()[0], 0, 4).unwrap();
        let cells: Vec<(u32, Vec<(i64, i64)>)> = set
            .per_cell
            .iter()
            .map(|(c, s)| (c.level, s.clone()))
            .collect();
        assert_eq!(
            cells,
            vec![
                (4, vec![(0, 1)]),
                (3, vec![(1, 2)]),
                (2, vec![(2, 3), (3, 4)]),
            ]
        );
    }

    #[test]
    fn segments_fixture_job1() {
        let g = fixture_grid();
        let i = fixture();
        let set = build_segments(&g, &i.jobs()[1], 1, 4).unwrap();
        let cells: Vec<(u32, i64, Vec<(i64, i64)>)> = set
            .per_cell
            .iter()
            .map(|(c, s)| (c.level, g.beg(*c), s.clone()))
            .collect();
        assert_eq!(
            cells,
            vec![(4, 1, vec![(1, 2)]), (3, 2, vec![(2, 3), (3, 4)])]
        );
    }

    #[test]
    fn release_out_of_range() {
        let g = fixture_grid();
        let job = Job { id: 9, release: 4, proc: 1, weight: 1 };
        assert!(matches!(
            build_segments(&g, &job, 0, 4),
            Err(Error::ReleaseOutOfRange(9))
        ));
    }

    #[test]
    fn properties_pass_on_fixture() {
        let g = fixture_grid();
        let i = fixture();
        assert_eq!(check_segment_properties(&i, &g).unwrap(), SegReport::Ok);
    }

    #[test]
    fn properties_pass_across_offsets() {
        let i = Instance::new(vec![(0, 2, 1), (1, 1, 2), (3, 2, 1)], 1).unwrap();
        let t = i.horizon().unwrap();
        let (ys, xs) = offsets_domain(1, t).unwrap();
        for y in &ys {
            for x in xs.clone() {
                let g = Grid::build(t, GridParams::new(1, t, x, *y).unwrap()).unwrap();
                assert_eq!(check_segment_properties(&i, &g).unwrap(), SegReport::Ok);
            }
        }
    }

    #[test]
    fn perturbed_segments_fail_partition() {
        let g = fixture_grid();
        let i = fixture();
        let mut set = build_segments(&g, &i.jobs()[0], 0, 4).unwrap();
        // shift one segment to break contiguity, then re-run only the
        // partition logic through the public checker by rebuilding a fake
        // instance is overkill; check the contiguity predicate directly
        set.per_cell[1].1[0] = (2, 3);
        let segs: Vec<_> = set.all_segments().collect();
        let contiguous = segs.windows(2).all(|w| w[0].1 .1 == w[1].1 .0);
        assert!(!contiguous);
    }

    #[test]
    fn segment_lengths_monotone() {
        let i = Instance::new(vec![(0, 3, 1), (2, 2, 1), (5, 1, 2)], 1).unwrap();
        let t = i.horizon().unwrap();
        let (ys, xs) = offsets_domain(1, t).unwrap();
        for y in &ys {
            for x in xs.clone() {
                let g = Grid::build(t, GridParams::new(1, t, x, *y).unwrap()).unwrap();
                for (row, j) in i.jobs().iter().enumerate() {
                    let set = build_segments(&g, j, row, t).unwrap();
                    let lens: Vec<i64> =
                        set.all_segments().map(|(_, (b, e))| e - b).collect();
                    assert!(lens.windows(2).all(|w| w[0] <= w[1]));
                }
            }
        }
    }

    #[test]
    fn flow_stats_deterministic() {
        let i = Instance::new(vec![(0, 1, 1)], 1).unwrap();
        let a = flow_cell_statistics(&i, 1, 100, 7).unwrap();
        let b = flow_cell_statistics(&i, 1, 100, 7).unwrap();
        assert_eq!(a, b);
        // domain is 1 * 2 = 2 pairs; 100 trials enumerates them all
        assert_eq!(a.samples, 2);
        assert!(a.per_job[0].1 <= a.samples);
        let empty = flow_cell_statistics(&i, 1, 0, 7).unwrap();
        assert_eq!(empty.samples, 0);
        assert!(empty.per_job.is_empty());
    }

    #[test]
    fn debug_dump_contains_root() {
        let g = fixture_grid();
        let dump = g.to_debug_json().unwrap();
        assert!(dump.contains("\"level\": 0"));
        assert!(dump.contains("\"end\": 16"));
    }
}
