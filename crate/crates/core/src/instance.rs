//! Job and instance model, preprocessing transformations, and instance
//! generation.

use crate::{Error, Result};
use num::BigRational;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// A job with integer release time, processing time, and weight.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Job {
    pub id: u32,
    pub release: i64,
    pub proc: i64,
    pub weight: i64,
}

/// A scheduling instance. Jobs are kept sorted by the fixed order:
/// nondecreasing release time, ties broken by ascending id. The 1-based
/// position of a job in this order is its row coordinate in the geometry.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Instance {
    jobs: Vec<Job>,
    pub epsilon_inv: i64,
}

#[derive(Serialize, Deserialize)]
struct JobFile {
    r: i64,
    p: i64,
    w: i64,
}

#[derive(Serialize, Deserialize)]
struct InstanceFile {
    epsilon_inv: i64,
    jobs: Vec<JobFile>,
}

impl Instance {
    /// Builds an instance from raw jobs; ids are assigned by position and
    /// the list is sorted into the fixed order.
    pub fn new(jobs: Vec<(i64, i64, i64)>, epsilon_inv: i64) -> Result<Instance> {
        if epsilon_inv < 1 {
            return Err(Error::InvalidBounds("epsilon_inv must be >= 1".into()));
        }
        let mut js = Vec::with_capacity(jobs.len());
        for (id, &(r, p, w)) in jobs.iter().enumerate() {
            if p < 1 {
                return Err(Error::InvalidBounds(format!("job {id}: proc must be >= 1")));
            }
            if w < 1 {
                return Err(Error::InvalidBounds(format!("job {id}: weight must be >= 1")));
            }
            if r < 0 {
                return Err(Error::InvalidBounds(format!("job {id}: release must be >= 0")));
            }
            js.push(Job { id: id as u32, release: r, proc: p, weight: w });
        }
        js.sort_by_key(|j| (j.release, j.id));
        Ok(Instance { jobs: js, epsilon_inv })
    }

    /// Jobs in the fixed order (row i+1 holds `jobs()[i]`).
    pub fn jobs(&self) -> &[Job] {
        &self.jobs
    }

    pub fn len(&self) -> usize {
        self.jobs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.jobs.is_empty()
    }

    /// Horizon T = max release + total processing.
    pub fn horizon(&self) -> Result<i64> {
        if self.jobs.is_empty() {
            return Err(Error::EmptyInstance);
        }
        let max_r = self.jobs.iter().map(|j| j.release).max().unwrap();
        let sum_p: i64 = self.jobs.iter().map(|j| j.proc).sum();
        Ok(max_r + sum_p)
    }

    /// Ratio of largest to smallest processing time.
    pub fn proc_ratio(&self) -> Result<BigRational> {
        if self.jobs.is_empty() {
            return Err(Error::EmptyInstance);
        }
        let max_p = self.jobs.iter().map(|j| j.proc).max().unwrap();
        let min_p = self.jobs.iter().map(|j| j.proc).min().unwrap();
        Ok(crate::rat::ratio(max_p, min_p))
    }

    /// Shifts all releases down by the minimum release.
    pub fn shift_releases(&self) -> Instance {
        let min_r = self.jobs.iter().map(|j| j.release).min().unwrap_or(0);
        let mut out = self.clone();
        for j in &mut out.jobs {
            j.release -= min_r;
        }
        out
    }

    /// Splits the instance into independent subinstances at idle break
    /// points: any t* where all earlier-released work fits into [0, t*)
    /// and the remaining jobs are released no earlier than t*. Each part
    /// has its releases re-shifted to start at 0.
    pub fn split_at_idle(&self) -> Vec<Instance> {
        if self.jobs.is_empty() {
            return vec![];
        }
        let mut parts: Vec<Instance> = Vec::new();
        let mut current: Vec<Job> = Vec::new();
        // total work of all jobs released so far; a break at t* = work is
        // valid only when it does not pass the next release
        let mut work: i64 = 0;
        for (idx, j) in self.jobs.iter().enumerate() {
            if idx > 0 && self.jobs[idx - 1].release < j.release && work <= j.release {
                parts.push(Self::reshift(&current, self.epsilon_inv));
                current.clear();
            }
            current.push(*j);
            work += j.proc;
        }
        if !current.is_empty() {
            parts.push(Self::reshift(&current, self.epsilon_inv));
        }
        parts
    }

    fn reshift(jobs: &[Job], epsilon_inv: i64) -> Instance {
        let min_r = jobs.iter().map(|j| j.release).min().unwrap_or(0);
        let js = jobs
            .iter()
            .map(|j| (j.release - min_r, j.proc, j.weight))
            .collect();
        Instance::new(js, epsilon_inv).expect("reshifted jobs stay valid")
    }

    /// Weight normalization: scale weights so the maximum becomes
    /// 4*epsilon_inv^2*n^2*P, drop jobs whose scaled weight falls below
    /// epsilon_inv (returned separately for tail scheduling in [T,2T]),
    /// round remaining weights up, and append a unit-processing dummy job
    /// of weight `dummy_weight` when the minimum processing time exceeds 1.
    pub fn normalize_weights(&self, dummy_weight: i64) -> Result<(Instance, Vec<Job>)> {
        if self.jobs.is_empty() {
            return Err(Error::EmptyInstance);
        }
        let n = self.jobs.len() as i64;
        let max_p = self.jobs.iter().map(|j| j.proc).max().unwrap();
        let min_p = self.jobs.iter().map(|j| j.proc).min().unwrap();
        let max_w = self.jobs.iter().map(|j| j.weight).max().unwrap();
        // target max weight: 4 * (1/eps)^2 * n^2 * P with P = max_p/min_p
        let target = crate::rat::rat(4 * self.epsilon_inv * self.epsilon_inv * n * n)
            * crate::rat::ratio(max_p, min_p);
        let scale = target / crate::rat::rat(max_w);
        let mut kept: Vec<(i64, i64, i64)> = Vec::new();
        let mut dropped: Vec<Job> = Vec::new();
        let threshold = crate::rat::rat(self.epsilon_inv);
        for j in &self.jobs {
            let scaled = crate::rat::rat(j.weight) * &scale;
            if scaled < threshold {
                dropped.push(*j);
            } else {
                let rounded = scaled.ceil().to_integer();
                let w: i64 = i64::try_from(&rounded)
                    .map_err(|_| Error::InvalidBounds("normalized weight overflows i64".into()))?;
                kept.push((j.release, j.proc, w));
            }
        }
        if min_p > 1 {
            kept.push((0, 1, dummy_weight));
        }
        Ok((Instance::new(kept, self.epsilon_inv)?, dropped))
    }

    /// Deterministic pseudorandom instance: releases in [0,rmax], procs in
    /// [1,pmax], weights in [1,wmax], shifted so the minimum release is 0.
    pub fn gen_random(seed: u64, n: usize, pmax: i64, wmax: i64, rmax: i64, epsilon_inv: i64) -> Result<Instance> {
        if n < 1 {
            return Err(Error::InvalidBounds("n must be >= 1".into()));
        }
        if pmax < 1 || wmax < 1 || rmax < 0 {
            return Err(Error::InvalidBounds("need pmax >= 1, wmax >= 1, rmax >= 0".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut jobs = Vec::with_capacity(n);
        for _ in 0..n {
            let r = rng.gen_range(0..=rmax);
            let p = rng.gen_range(1..=pmax);
            let w = rng.gen_range(1..=wmax);
            jobs.push((r, p, w));
        }
        let min_r = jobs.iter().map(|&(r, _, _)| r).min().unwrap();
        for j in &mut jobs {
            j.0 -= min_r;
        }
        Instance::new(jobs, epsilon_inv)
    }

    /// Canonical JSON: jobs listed by id (the original file order).
    pub fn to_json(&self) -> String {
        let mut by_id = self.jobs.clone();
        by_id.sort_by_key(|j| j.id);
        let file = InstanceFile {
            epsilon_inv: self.epsilon_inv,
            jobs: by_id
                .iter()
                .map(|j| JobFile { r: j.release, p: j.proc, w: j.weight })
                .collect(),
        };
        serde_json::to_string_pretty(&file).expect("instance serializes") + "\n"
    }

    pub fn from_json(text: &str) -> Result<Instance> {
        let file: InstanceFile = serde_json::from_str(text)?;
        Instance::new(
            file.jobs.iter().map(|j| (j.r, j.p, j.w)).collect(),
            file.epsilon_inv,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn inst(jobs: &[(i64, i64, i64)]) -> Instance {
        Instance::new(jobs.to_vec(), 1).unwrap()
    }

    #[test]
    fn horizon_examples() {
        assert_eq!(inst(&[(0, 2, 1), (1, 1, 2)]).horizon().unwrap(), 4);
        assert_eq!(inst(&[(0, 1, 1)]).horizon().unwrap(), 1);
        assert_eq!(inst(&[(5, 3, 1), (0, 2, 1)]).horizon().unwrap(), 10);
        assert!(matches!(
            Instance::new(vec![], 1).unwrap().horizon(),
            Err(Error::EmptyInstance)
        ));
    }

    #[test]
    fn horizon_dominates_work_and_release() {
        let i = inst(&[(3, 2, 1), (0, 4, 1), (7, 1, 5)]);
        let t = i.horizon().unwrap();
        let sum_p: i64 = i.jobs().iter().map(|j| j.proc).sum();
        let max_r = i.jobs().iter().map(|j| j.release).max().unwrap();
        let min_p = i.jobs().iter().map(|j| j.proc).min().unwrap();
        assert!(t >= sum_p);
        assert!(t >= max_r + min_p);
    }

    #[test]
    fn shift_examples() {
        let shifted = inst(&[(3, 1, 1), (4, 1, 1)]).shift_releases();
        assert_eq!(
            shifted.jobs().iter().map(|j| j.release).collect::<Vec<_>>(),
            vec![0, 1]
        );
        let same = inst(&[(0, 1, 1), (1, 1, 1)]);
        assert_eq!(same.shift_releases(), same);
        let s = inst(&[(7, 1, 1), (7, 1, 1), (9, 1, 1)]).shift_releases();
        assert_eq!(
            s.jobs().iter().map(|j| j.release).collect::<Vec<_>>(),
            vec![0, 0, 2]
        );
    }

    #[test]
    fn split_examples() {
        let parts = inst(&[(0, 1, 1), (10, 1, 1)]).split_at_idle();
        assert_eq!(parts.len(), 2);
        assert_eq!(parts[0].len(), 1);
        assert_eq!(parts[1].jobs()[0].release, 0);

        let parts = inst(&[(0, 2, 1), (1, 1, 1)]).split_at_idle();
        assert_eq!(parts.len(), 1);

        // work 3+1 done by t=4 <= 8: split between the first two and the third
        let parts = inst(&[(0, 3, 1), (2, 1, 1), (8, 2, 1)]).split_at_idle();
        assert_eq!(parts.len(), 2);
        assert_eq!(parts[0].len(), 2);
        assert_eq!(parts[1].len(), 1);
    }

    #[test]
    fn order_is_release_then_id() {
        let i = inst(&[(1, 1, 1), (0, 2, 1), (1, 3, 1)]);
        let ids: Vec<u32> = i.jobs().iter().map(|j| j.id).collect();
        assert_eq!(ids, vec![1, 0, 2]);
    }

    #[test]
    fn normalize_identity_case() {
        // already satisfies min p = 1; weights scale uniformly
        let i = inst(&[(0, 1, 1), (0, 1, 2)]);
        let (norm, dropped) = i.normalize_weights(1).unwrap();
        assert!(dropped.is_empty());
        // target max = 4*1*4*1 = 16, scale = 8 -> weights {8, 16}
        let ws: Vec<i64> = norm.jobs().iter().map(|j| j.weight).collect();
        assert_eq!(ws, vec![8, 16]);
    }

    #[test]
    fn normalize_drops_tiny_weights() {
        let i = Instance::new(vec![(0, 1, 1), (0, 1, 100_000)], 2).unwrap();
        // target max = 4*4*4*1 = 64; job 0 scales to 64/100000 < 2
        let (norm, dropped) = i.normalize_weights(1).unwrap();
        assert_eq!(dropped.len(), 1);
        assert_eq!(dropped[0].id, 0);
        assert_eq!(norm.len(), 1);
        assert_eq!(norm.jobs()[0].weight, 64);
    }

    #[test]
    fn normalize_appends_dummy() {
        let i = inst(&[(0, 2, 1), (0, 4, 1)]);
        let (norm, _) = i.normalize_weights(1).unwrap();
        assert_eq!(norm.jobs().iter().map(|j| j.proc).min().unwrap(), 1);
        assert!(norm.jobs().iter().any(|j| j.proc == 1 && j.weight == 1));
    }

    #[test]
    fn gen_deterministic() {
        let a = Instance::gen_random(7, 3, 3, 3, 3, 1).unwrap();
        let b = Instance::gen_random(7, 3, 3, 3, 3, 1).unwrap();
        assert_eq!(a.to_json(), b.to_json());
        let unique = Instance::gen_random(1, 1, 1, 1, 0, 1).unwrap();
        assert_eq!(unique.jobs()[0], Job { id: 0, release: 0, proc: 1, weight: 1 });
    }

    #[test]
    fn gen_seeds_differ() {
        let mut distinct = 0;
        for seed in 0..100u64 {
            let a = Instance::gen_random(seed, 3, 4, 4, 4, 1).unwrap();
            let b = Instance::gen_random(seed + 1, 3, 4, 4, 4, 1).unwrap();
            if a != b {
                distinct += 1;
            }
        }
        assert!(distinct > 90, "only {distinct}/100 adjacent seeds differ");
    }

    #[test]
    fn gen_min_release_zero() {
        for seed in 0..20u64 {
            let i = Instance::gen_random(seed, 4, 3, 3, 9, 1).unwrap();
            assert_eq!(i.jobs().iter().map(|j| j.release).min().unwrap(), 0);
        }
    }

    #[test]
    fn json_round_trip_bit_exact() {
        let i = inst(&[(1, 2, 3), (0, 1, 1), (1, 1, 4)]);
        let text = i.to_json();
        let parsed = Instance::from_json(&text).unwrap();
        assert_eq!(parsed, i);
        assert_eq!(parsed.to_json(), text);
    }

    #[test]
    fn invalid_inputs_rejected() {
        assert!(Instance::new(vec![(0, 0, 1)], 1).is_err());
        assert!(Instance::new(vec![(0, 1, 0)], 1).is_err());
        assert!(Instance::new(vec![(-1, 1, 1)], 1).is_err());
        assert!(Instance::gen_random(0, 0, 1, 1, 1, 1).is_err());
        assert!(Instance::gen_random(0, 1, 0, 1, 1, 1).is_err());
    }
}
