//! Ground truth: exact optimal preemptive schedules by memoized search,
//! the covering integer program over unfinished-job indicators, and the
//! translations between schedules and program solutions.

use crate::instance::Instance;
use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;

/// Unit-slot schedule over [0, T); each slot holds a job id or idles.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Schedule {
    pub slots: Vec<Option<u32>>,
}

#[derive(Serialize, Deserialize)]
struct ScheduleFile {
    slots: Vec<Option<u32>>,
}

impl Schedule {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&ScheduleFile { slots: self.slots.clone() }).unwrap() + "\n"
    }

    pub fn from_json(text: &str) -> Result<Schedule> {
        let f: ScheduleFile = serde_json::from_str(text)?;
        Ok(Schedule { slots: f.slots })
    }

    /// Completion time (end of last slot) per row, in instance order.
    pub fn completions(&self, instance: &Instance) -> Result<Vec<i64>> {
        let mut done = vec![0i64; instance.len()];
        let mut last = vec![0i64; instance.len()];
        let row_of: HashMap<u32, usize> =
            instance.jobs().iter().enumerate().map(|(i, j)| (j.id, i)).collect();
        for (t, slot) in self.slots.iter().enumerate() {
            if let Some(id) = slot {
                let &row = row_of
                    .get(id)
                    .ok_or_else(|| Error::InvalidSchedule(format!("unknown job id {id}")))?;
                let job = instance.jobs()[row];
                if (t as i64) < job.release {
                    return Err(Error::InvalidSchedule(format!(
                        "job {id} scheduled at slot {t} before release {}",
                        job.release
                    )));
                }
                done[row] += 1;
                last[row] = t as i64 + 1;
            }
        }
        for (row, job) in instance.jobs().iter().enumerate() {
            if done[row] != job.proc {
                return Err(Error::InvalidSchedule(format!(
                    "job {} received {} slots, needs {}",
                    job.id, done[row], job.proc
                )));
            }
        }
        Ok(last)
    }
}

/// Total weighted flow time of a valid schedule.
pub fn schedule_cost(instance: &Instance, schedule: &Schedule) -> Result<i64> {
    let completions = schedule.completions(instance)?;
    Ok(instance
        .jobs()
        .iter()
        .zip(&completions)
        .map(|(j, &c)| j.weight * (c - j.release))
        .sum())
}

/// Solution of the covering program: per row, the first time with
/// indicator zero. `finish[row] = d` encodes indicator 1 exactly on
/// [release, d).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IpSolution {
    pub finish: Vec<i64>,
}

#[derive(Serialize, Deserialize)]
struct IpFile {
    finish: Vec<i64>,
}

impl IpSolution {
    /// Reconstructs from explicit per-row indicator vectors, rejecting
    /// non-monotone prefixes. Row r's vector covers t in [release_r, T].
    pub fn from_raw(instance: &Instance, t_hi: i64, raw: &[Vec<bool>]) -> Result<IpSolution> {
        let mut finish = Vec::with_capacity(raw.len());
        for (row, bits) in raw.iter().enumerate() {
            let job = instance.jobs()[row];
            let mut seen_zero_at: Option<i64> = None;
            for (k, &b) in bits.iter().enumerate() {
                let t = job.release + k as i64;
                if t > t_hi {
                    break;
                }
                match (seen_zero_at, b) {
                    (Some(_), true) => {
                        return Err(Error::PrefixViolation { job: job.id, t });
                    }
                    (None, false) => seen_zero_at = Some(t),
                    _ => {}
                }
            }
            finish.push(seen_zero_at.unwrap_or(t_hi + 1));
        }
        Ok(IpSolution { finish })
    }

    pub fn indicator(&self, instance: &Instance, row: usize, t: i64) -> bool {
        t >= instance.jobs()[row].release && t < self.finish[row]
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&IpFile { finish: self.finish.clone() }).unwrap() + "\n"
    }

    pub fn from_json(text: &str) -> Result<IpSolution> {
        let f: IpFile = serde_json::from_str(text)?;
        Ok(IpSolution { finish: f.finish })
    }
}

/// Objective value: sum over rows of weight times number of 1-indicators.
pub fn ip_cost(instance: &Instance, x: &IpSolution) -> i64 {
    instance
        .jobs()
        .iter()
        .zip(&x.finish)
        .map(|(j, &d)| j.weight * (d - j.release).max(0))
        .sum()
}

/// Feasibility report for the covering constraints.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum IpReport {
    Feasible,
    Violated { s: i64, t: i64, have: i64, need: i64 },
}

/// Checks every window [s, t] with s a release date and t in [0, T]:
/// the in-window capacity of still-unfinished jobs must cover the
/// in-window work minus the window length.
pub fn ip_check(instance: &Instance, x: &IpSolution) -> Result<IpReport> {
    let t_hi = instance.horizon()?;
    let mut releases: Vec<i64> = instance.jobs().iter().map(|j| j.release).collect();
    releases.sort_unstable();
    releases.dedup();
    for t in 0..=t_hi {
        for &s in releases.iter().take_while(|&&s| s <= t) {
            let mut have = 0i64;
            let mut work = 0i64;
            for (row, job) in instance.jobs().iter().enumerate() {
                if s <= job.release && job.release <= t {
                    work += job.proc;
                    if x.indicator(instance, row, t) {
                        have += job.proc;
                    }
                }
            }
            let need = work - (t - s);
            if have < need {
                return Ok(IpReport::Violated { s, t, have, need });
            }
        }
    }
    Ok(IpReport::Feasible)
}

/// Indicator solution implied by a schedule: 1 until the job's completion.
pub fn ip_from_schedule(instance: &Instance, schedule: &Schedule) -> Result<IpSolution> {
    let completions = schedule.completions(instance)?;
    Ok(IpSolution { finish: completions })
}

/// Size guard for the exhaustive search.
#[derive(Debug, Clone, Copy)]
pub struct OracleGuard {
    pub max_n: usize,
    pub max_t: i64,
}

impl Default for OracleGuard {
    fn default() -> Self {
        OracleGuard { max_n: 8, max_t: 24 }
    }
}

/// Exact minimum weighted flow time by memoized search over unit-slot
/// decisions. Idling is allowed only when no released job is unfinished.
pub fn opt_schedule(instance: &Instance, guard: OracleGuard) -> Result<(i64, Schedule)> {
    let t_hi = instance.horizon()?;
    if instance.len() > guard.max_n || t_hi > guard.max_t {
        return Err(Error::OracleGuard(format!(
            "n={} T={} exceeds guard n<={} T<={}",
            instance.len(),
            t_hi,
            guard.max_n,
            guard.max_t
        )));
    }
    let releases: Vec<i64> = instance.jobs().iter().map(|j| j.release).collect();
    let weights: Vec<i64> = instance.jobs().iter().map(|j| j.weight).collect();
    let procs: Vec<i64> = instance.jobs().iter().map(|j| j.proc).collect();
    let mut memo: HashMap<(i64, Vec<i64>), i64> = HashMap::new();

    fn go(
        t: i64,
        rem: &mut Vec<i64>,
        releases: &[i64],
        weights: &[i64],
        procs: &[i64],
        memo: &mut HashMap<(i64, Vec<i64>), i64>,
    ) -> i64 {
        if rem.iter().all(|&r| r == 0) {
            return 0;
        }
        // idle jump: no released unfinished job means the machine sleeps
        // until the next release among unfinished jobs
        let ready: Vec<usize> = (0..rem.len())
            .filter(|&i| rem[i] > 0 && releases[i] <= t)
            .collect();
        if ready.is_empty() {
            let t_next = (0..rem.len())
                .filter(|&i| rem[i] > 0)
                .map(|i| releases[i])
                .min()
                .unwrap();
            return go(t_next, rem, releases, weights, procs, memo);
        }
        if let Some(&c) = memo.get(&(t, rem.clone())) {
            return c;
        }
        let mut best = i64::MAX;
        for &i in &ready {
            rem[i] -= 1;
            let finish_cost = if rem[i] == 0 {
                weights[i] * (t + 1 - releases[i])
            } else {
                0
            };
            let sub = go(t + 1, rem, releases, weights, procs, memo);
            rem[i] += 1;
            best = best.min(finish_cost + sub);
        }
        memo.insert((t, rem.clone()), best);
        best
    }

    let mut rem = procs.clone();
    let total = go(0, &mut rem, &releases, &weights, &procs, &mut memo);

    // replay the optimal decisions to materialize the schedule
    let mut slots = vec![None; t_hi as usize];
    let mut rem = procs.clone();
    let mut t = 0i64;
    let mut cost_left = total;
    while rem.iter().any(|&r| r > 0) {
        let ready: Vec<usize> = (0..rem.len())
            .filter(|&i| rem[i] > 0 && releases[i] <= t)
            .collect();
        if ready.is_empty() {
            t = (0..rem.len())
                .filter(|&i| rem[i] > 0)
                .map(|i| releases[i])
                .min()
                .unwrap();
            continue;
        }
        let mut chosen = None;
        for &i in &ready {
            rem[i] -= 1;
            let finish_cost = if rem[i] == 0 {
                weights[i] * (t + 1 - releases[i])
            } else {
                0
            };
            let sub = go(t + 1, &mut rem, &releases, &weights, &procs, &mut memo);
            rem[i] += 1;
            if finish_cost + sub == cost_left {
                chosen = Some((i, finish_cost));
                break;
            }
        }
        let (i, finish_cost) =
            chosen.ok_or_else(|| Error::BugTrap("schedule replay lost the optimum".into()))?;
        slots[t as usize] = Some(instance.jobs()[i].id);
        rem[i] -= 1;
        cost_left -= finish_cost;
        t += 1;
    }
    Ok((total, Schedule { slots }))
}

/// Realizes a feasible indicator solution as a schedule via
/// earliest-deadline-first over unit slots; the implied deadline of row r
/// is `finish[r]`. Ties break by row order.
pub fn schedule_from_ip(instance: &Instance, x: &IpSolution) -> Result<Schedule> {
    let t_hi = instance.horizon()?;
    let mut rem: Vec<i64> = instance.jobs().iter().map(|j| j.proc).collect();
    let mut slots = vec![None; t_hi as usize];
    for t in 0..t_hi {
        let pick = (0..rem.len())
            .filter(|&i| rem[i] > 0 && instance.jobs()[i].release <= t)
            .min_by_key(|&i| (x.finish[i], i));
        if let Some(i) = pick {
            slots[t as usize] = Some(instance.jobs()[i].id);
            rem[i] -= 1;
            if rem[i] == 0 && t + 1 > x.finish[i] {
                return Err(Error::WitnessFailed(format!(
                    "job {} completes at {} after implied deadline {}",
                    instance.jobs()[i].id,
                    t + 1,
                    x.finish[i]
                )));
            }
        }
    }
    if rem.iter().any(|&r| r > 0) {
        return Err(Error::WitnessFailed("work left after horizon".into()));
    }
    Ok(Schedule { slots })
}

/// Minimum objective over all feasible indicator solutions, by direct
/// enumeration of per-row finish times. Exponential; test-scale only.
pub fn min_ip_cost_exhaustive(instance: &Instance) -> Result<i64> {
    let t_hi = instance.horizon()?;
    let n = instance.len();
    let mut finish: Vec<i64> = instance.jobs().iter().map(|j| j.release).collect();
    let mut best: Option<i64> = None;
    loop {
        let x = IpSolution { finish: finish.clone() };
        if ip_check(instance, &x)? == IpReport::Feasible {
            let c = ip_cost(instance, &x);
            best = Some(best.map_or(c, |b: i64| b.min(c)));
        }
        // odometer over finish[row] in [release, T+1]
        let mut row = 0;
        loop {
            if row == n {
                return best.ok_or_else(|| Error::BugTrap("no feasible indicator solution".into()));
            }
            finish[row] += 1;
            if finish[row] <= t_hi + 1 {
                break;
            }
            finish[row] = instance.jobs()[row].release;
            row += 1;
        }
    }
}
