//! Asymmetric TSP: instances, generators, the tour-construction environment,
//! classical heuristics, the exact Held-Karp oracle and the MTZ model.

mod exact;
mod heuristics;
mod mip;

pub use exact::{brute_force, held_karp, HELD_KARP_MAX};
pub use heuristics::{farthest_insertion, nearest_insertion, nearest_neighbor};
pub use mip::{mtz_assignment, mtz_model};

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use rand::Rng;

use crate::decoder::DecodeMode;
use crate::encoder::DataMatrix;
use crate::error::{Error, Result};

/// Distances of tmat instances are divided by this before entering the
/// network, and tour lengths before becoming rewards.
pub const TMAT_SCALE: f64 = 1e6;

#[derive(Clone, Debug, PartialEq)]
pub struct AtspInstance {
    n: usize,
    dist: Vec<f64>,
}

impl AtspInstance {
    /// Row-major `n x n` distances; the diagonal must be zero and entries
    /// finite and non-negative.
    pub fn new(n: usize, dist: Vec<f64>) -> Result<Self> {
        if n < 2 {
            return Err(Error::Invalid(format!("ATSP needs at least 2 cities, got {n}")));
        }
        if dist.len() != n * n {
            return Err(Error::Invalid(format!("{} distances for {n} cities", dist.len())));
        }
        for i in 0..n {
            if dist[i * n + i] != 0.0 {
                return Err(Error::Invalid(format!("d({i},{i}) must be 0")));
            }
        }
        if let Some(v) = dist.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(Error::Invalid(format!("distance {v} is not a finite non-negative number")));
        }
        Ok(AtspInstance { n, dist })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn d(&self, i: usize, j: usize) -> f64 {
        self.dist[i * self.n + j]
    }

    pub fn dist(&self) -> &[f64] {
        &self.dist
    }

    /// Network input: distances divided by `scale`.
    pub fn data_matrix(&self, scale: f64) -> Result<DataMatrix> {
        DataMatrix::single(self.n, self.n, self.dist.iter().map(|v| v / scale).collect())
    }

    /// Triples `(i, j, k)` with `d(i,j) > d(i,k) + d(k,j)`.
    pub fn triangle_violations(&self) -> usize {
        let n = self.n;
        let mut count = 0;
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    if self.d(i, j) > self.d(i, k) + self.d(k, j) {
                        count += 1;
                    }
                }
            }
        }
        count
    }
}

/// One synchronous min-plus pass `d'(i,j) = min_k d(i,k) + d(k,j)`.
/// Returns whether anything changed.
pub fn min_plus_pass(n: usize, dist: &mut [f64]) -> bool {
    let old = dist.to_vec();
    let mut changed = false;
    for i in 0..n {
        for j in 0..n {
            let mut best = old[i * n + j];
            for k in 0..n {
                let via = old[i * n + k] + old[k * n + j];
                if via < best {
                    best = via;
                }
            }
            if best != dist[i * n + j] {
                dist[i * n + j] = best;
                changed = true;
            }
        }
    }
    changed
}

/// Repeats [`min_plus_pass`] until nothing changes.
pub fn triangle_closure(n: usize, dist: &mut [f64]) {
    while min_plus_pass(n, dist) {}
}

/// tmat-class instance: independent integers in `[min_val, max_val]` off the
/// diagonal, then closed under the triangle inequality.
pub fn generate_tmat_range<R: Rng>(n: usize, min_val: u32, max_val: u32, rng: &mut R) -> Result<AtspInstance> {
    if n < 2 {
        return Err(Error::Invalid(format!("ATSP needs at least 2 cities, got {n}")));
    }
    let mut dist = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            let v = rng.gen_range(min_val..=max_val);
            if i != j {
                dist[i * n + j] = v as f64;
            }
        }
    }
    triangle_closure(n, &mut dist);
    AtspInstance::new(n, dist)
}

pub fn generate_tmat<R: Rng>(n: usize, rng: &mut R) -> Result<AtspInstance> {
    generate_tmat_range(n, 1, 1_000_000, rng)
}

/// Symmetric instance from points drawn uniformly on the unit square.
pub fn generate_euclidean<R: Rng>(n: usize, rng: &mut R) -> Result<AtspInstance> {
    let pts: Vec<(f64, f64)> = (0..n).map(|_| (rng.gen::<f64>(), rng.gen::<f64>())).collect();
    euclidean_from_points(&pts)
}

pub fn euclidean_from_points(pts: &[(f64, f64)]) -> Result<AtspInstance> {
    let n = pts.len();
    let mut dist = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            let (dx, dy) = (pts[i].0 - pts[j].0, pts[i].1 - pts[j].1);
            dist[i * n + j] = libm::sqrt(dx * dx + dy * dy);
        }
    }
    AtspInstance::new(n, dist)
}

fn check_perm(n: usize, perm: &[usize]) -> Result<()> {
    if perm.len() != n {
        return Err(Error::Invalid(format!("tour has {} cities, instance has {n}", perm.len())));
    }
    let mut seen = vec![false; n];
    for &c in perm {
        if c >= n || seen[c] {
            return Err(Error::Invalid(format!("tour is not a permutation of 0..{n}")));
        }
        seen[c] = true;
    }
    Ok(())
}

/// Round-trip length including the closing arc.
pub fn tour_length(inst: &AtspInstance, perm: &[usize]) -> Result<f64> {
    check_perm(inst.n, perm)?;
    Ok(cycle_length(inst, perm))
}

fn cycle_length(inst: &AtspInstance, perm: &[usize]) -> f64 {
    let n = perm.len();
    (0..n).map(|t| inst.d(perm[t], perm[(t + 1) % n])).sum()
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tour {
    pub perm: Vec<usize>,
    pub length: f64,
}

impl Tour {
    pub fn new(inst: &AtspInstance, perm: Vec<usize>) -> Result<Self> {
        let length = tour_length(inst, &perm)?;
        Ok(Tour { perm, length })
    }

    /// Same cycle, rotated so that `city` comes first.
    pub fn rotated_to(&self, city: usize) -> Vec<usize> {
        let p = self.perm.iter().position(|&c| c == city).unwrap_or(0);
        self.perm[p..].iter().chain(&self.perm[..p]).copied().collect()
    }
}

/// Partial tour under construction; the mask marks visited cities.
#[derive(Clone, Debug, PartialEq)]
pub struct AtspEnv {
    first: usize,
    current: usize,
    visited: Vec<bool>,
    tour: Vec<usize>,
}

impl AtspEnv {
    pub fn new(n: usize, start: usize) -> Self {
        let mut visited = vec![false; n];
        visited[start] = true;
        AtspEnv {
            first: start,
            current: start,
            visited,
            tour: vec![start],
        }
    }

    pub fn first(&self) -> usize {
        self.first
    }

    pub fn current(&self) -> usize {
        self.current
    }

    /// `true` for cities that may no longer be chosen.
    pub fn mask(&self) -> &[bool] {
        &self.visited
    }

    pub fn tour(&self) -> &[usize] {
        &self.tour
    }

    pub fn done(&self) -> bool {
        self.tour.len() == self.visited.len()
    }

    pub fn step(&mut self, city: usize) -> Result<()> {
        if city >= self.visited.len() || self.visited[city] {
            return Err(Error::Invalid(format!("city {city} is not available")));
        }
        self.visited[city] = true;
        self.current = city;
        self.tour.push(city);
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub perm: Vec<usize>,
    pub log_probs: Vec<f64>,
    pub length: f64,
}

/// Builds one tour from `start` with `policy` giving probabilities over all
/// cities (visited ones must get 0) for the current state.
pub fn env_rollout<R: Rng, P>(inst: &AtspInstance, mut policy: P, start: usize, mode: DecodeMode, rng: &mut R) -> Result<Trajectory>
where
    P: FnMut(&AtspEnv) -> Result<Vec<f64>>,
{
    let mut env = AtspEnv::new(inst.n, start);
    let mut log_probs = Vec::with_capacity(inst.n - 1);
    while !env.done() {
        let probs = policy(&env)?;
        if probs.len() != inst.n {
            return Err(Error::Invalid(format!("policy returned {} probabilities", probs.len())));
        }
        let c = mode.pick(&probs, rng);
        log_probs.push(libm::log(probs[c]));
        env.step(c)?;
    }
    let length = cycle_length(inst, env.tour());
    Ok(Trajectory {
        perm: env.tour,
        log_probs,
        length,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    #[test]
    fn two_city_tmat_is_already_closed() {
        let mut r = rng::from_seed(1);
        for _ in 0..20 {
            let inst = generate_tmat(2, &mut r).unwrap();
            let mut d = inst.dist().to_vec();
            assert!(!min_plus_pass(2, &mut d));
        }
    }

    #[test]
    fn forced_relaxation() {
        let mut d = vec![0.0, 2.0, 9.0, 7.0, 0.0, 3.0, 4.0, 8.0, 0.0];
        triangle_closure(3, &mut d);
        assert_eq!(d[2], 5.0);
        assert_eq!(AtspInstance::new(3, d).unwrap().triangle_violations(), 0);
    }

    #[test]
    fn closure_is_fixpoint_and_triangle_valid() {
        let mut r = rng::from_seed(2);
        for _ in 0..50 {
            let inst = generate_tmat(12, &mut r).unwrap();
            assert_eq!(inst.triangle_violations(), 0);
            let mut d = inst.dist().to_vec();
            assert!(!min_plus_pass(12, &mut d));
            assert!(inst.dist().iter().all(|v| *v == v.trunc() && *v <= 1e6));
        }
    }

    #[test]
    fn euclidean_is_symmetric_metric() {
        let mut r = rng::from_seed(3);
        let inst = generate_euclidean(15, &mut r).unwrap();
        for i in 0..15 {
            for j in 0..15 {
                assert_eq!(inst.d(i, j), inst.d(j, i));
            }
        }
        // collinear points
        let line = euclidean_from_points(&[(0.0, 0.0), (0.5, 0.0), (1.0, 0.0)]).unwrap();
        assert_eq!(line.d(0, 2), line.d(0, 1) + line.d(1, 2));
        assert!(inst.dist().iter().all(|v| *v >= 0.0));
        let mut worst: f64 = 0.0;
        for i in 0..15 {
            for j in 0..15 {
                for k in 0..15 {
                    worst = worst.max(inst.d(i, j) - inst.d(i, k) - inst.d(k, j));
                }
            }
        }
        assert!(worst <= 1e-15);
    }

    #[test]
    fn tour_length_rules() {
        let inst = AtspInstance::new(2, vec![0.0, 3.0, 5.0, 0.0]).unwrap();
        assert_eq!(tour_length(&inst, &[0, 1]).unwrap(), 8.0);
        assert_eq!(tour_length(&inst, &[1, 0]).unwrap(), 8.0);
        assert!(tour_length(&inst, &[0, 0]).is_err());
        assert!(tour_length(&inst, &[0]).is_err());

        let mut r = rng::from_seed(4);
        let inst = generate_tmat(6, &mut r).unwrap();
        let perm = [3, 1, 5, 0, 2, 4];
        let mut naive = 0.0;
        naive += inst.d(3, 1);
        naive += inst.d(1, 5);
        naive += inst.d(5, 0);
        naive += inst.d(0, 2);
        naive += inst.d(2, 4);
        naive += inst.d(4, 3);
        assert_eq!(tour_length(&inst, &perm).unwrap(), naive);
        let rot = [0, 2, 4, 3, 1, 5];
        assert_eq!(tour_length(&inst, &rot).unwrap(), naive);
    }

    #[test]
    fn rollout_with_uniform_policy() {
        let mut r = rng::from_seed(5);
        let uniform = |env: &AtspEnv| {
            let free = env.mask().iter().filter(|m| !**m).count() as f64;
            Ok(env.mask().iter().map(|m| if *m { 0.0 } else { 1.0 / free }).collect())
        };
        let two = AtspInstance::new(2, vec![0.0, 1.0, 2.0, 0.0]).unwrap();
        let t = env_rollout(&two, uniform, 1, DecodeMode::Sample, &mut r).unwrap();
        assert_eq!(t.perm, vec![1, 0]);
        assert_eq!(t.log_probs, vec![0.0]);
        for _ in 0..200 {
            let inst = generate_tmat(7, &mut r).unwrap();
            let start = r.gen_range(0..7);
            let t = env_rollout(&inst, uniform, start, DecodeMode::Sample, &mut r).unwrap();
            assert_eq!(t.perm[0], start);
            assert_eq!(t.length, tour_length(&inst, &t.perm).unwrap());
        }
        let inst = generate_tmat(7, &mut r).unwrap();
        let a = env_rollout(&inst, uniform, 0, DecodeMode::Greedy, &mut r).unwrap();
        let b = env_rollout(&inst, uniform, 0, DecodeMode::Greedy, &mut r).unwrap();
        assert_eq!(a, b);
    }
}
