use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::{AtspInstance, Tour};
use crate::error::{Error, Result};

/// Largest instance the bitmask DP accepts.
pub const HELD_KARP_MAX: usize = 16;

/// Optimal tour by dynamic programming over subsets of cities `1..n`, with
/// city 0 as the fixed start.
pub fn held_karp(inst: &AtspInstance) -> Result<Tour> {
    let n = inst.n();
    if n > HELD_KARP_MAX {
        return Err(Error::Capacity {
            what: "held-karp cities",
            requested: n,
            limit: HELD_KARP_MAX,
        });
    }
    let m = n - 1;
    let full = 1usize << m;
    // cost[mask * m + j]: shortest path 0 -> ... -> (j+1) visiting exactly mask
    let mut cost = vec![f64::INFINITY; full * m];
    let mut parent = vec![u8::MAX; full * m];
    for j in 0..m {
        cost[(1 << j) * m + j] = inst.d(0, j + 1);
    }
    for mask in 1..full {
        for j in 0..m {
            if mask & (1 << j) == 0 {
                continue;
            }
            let base = cost[mask * m + j];
            if !base.is_finite() {
                continue;
            }
            for k in 0..m {
                if mask & (1 << k) != 0 {
                    continue;
                }
                let next = mask | (1 << k);
                let c = base + inst.d(j + 1, k + 1);
                if c < cost[next * m + k] {
                    cost[next * m + k] = c;
                    parent[next * m + k] = j as u8;
                }
            }
        }
    }
    let last_mask = full - 1;
    let mut best = f64::INFINITY;
    let mut last = 0;
    for j in 0..m {
        let c = cost[last_mask * m + j] + inst.d(j + 1, 0);
        if c < best {
            best = c;
            last = j;
        }
    }
    let mut perm = Vec::with_capacity(n);
    let (mut mask, mut j) = (last_mask, last);
    loop {
        perm.push(j + 1);
        let p = parent[mask * m + j];
        mask &= !(1 << j);
        if p == u8::MAX {
            break;
        }
        j = p as usize;
    }
    perm.push(0);
    perm.reverse();
    Ok(Tour { perm, length: best })
}

/// Exhaustive search over the `(n-1)!` tours starting at city 0.
pub fn brute_force(inst: &AtspInstance) -> Result<Tour> {
    let n = inst.n();
    if n > 11 {
        return Err(Error::Capacity {
            what: "brute-force cities",
            requested: n,
            limit: 11,
        });
    }
    let mut rest: Vec<usize> = (1..n).collect();
    let mut best = Tour {
        perm: Vec::new(),
        length: f64::INFINITY,
    };
    permute(&mut rest, 0, &mut |p| {
        let mut len = inst.d(0, p[0]) + inst.d(p[p.len() - 1], 0);
        for w in p.windows(2) {
            len += inst.d(w[0], w[1]);
        }
        if len < best.length {
            best.length = len;
            best.perm = core::iter::once(0).chain(p.iter().copied()).collect();
        }
    });
    if best.perm.is_empty() {
        return Err(Error::Invalid(format!("no tour for {n} cities")));
    }
    Ok(best)
}

fn permute(v: &mut [usize], k: usize, f: &mut impl FnMut(&[usize])) {
    if k == v.len() {
        f(v);
        return;
    }
    for i in k..v.len() {
        v.swap(k, i);
        permute(v, k + 1, f);
        v.swap(k, i);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::atsp::{farthest_insertion, generate_tmat, nearest_insertion, nearest_neighbor, tour_length};
    use crate::rng;

    #[test]
    fn three_cities_pick_better_direction() {
        let inst = AtspInstance::new(3, vec![0., 1., 10., 10., 0., 1., 1., 10., 0.]).unwrap();
        // 0->1->2->0 = 3, 0->2->1->0 = 30
        let t = held_karp(&inst).unwrap();
        assert_eq!(t.length, 3.0);
        assert_eq!(t.perm, vec![0, 1, 2]);
    }

    #[test]
    fn matches_factorial_enumeration() {
        let mut r = rng::from_seed(7);
        for _ in 0..10 {
            let inst = generate_tmat(8, &mut r).unwrap();
            let hk = held_karp(&inst).unwrap();
            assert_eq!(hk.length, brute_force(&inst).unwrap().length);
            assert_eq!(tour_length(&inst, &hk.perm).unwrap(), hk.length);
        }
    }

    #[test]
    fn never_worse_than_heuristics() {
        let mut r = rng::from_seed(8);
        for _ in 0..100 {
            let inst = generate_tmat(9, &mut r).unwrap();
            let opt = held_karp(&inst).unwrap().length;
            for t in [nearest_neighbor(&inst), nearest_insertion(&inst), farthest_insertion(&inst)] {
                assert!(opt <= t.length);
            }
        }
    }

    #[test]
    fn rejects_oversized() {
        let inst = AtspInstance::new(17, vec![0.0; 289]).unwrap();
        assert!(matches!(held_karp(&inst), Err(Error::Capacity { .. })));
    }
}
