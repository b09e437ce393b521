use alloc::vec;
use alloc::vec::Vec;

use super::{AtspInstance, Tour};

/// Greedy walk from city 0 to the closest unvisited city (lowest index on
/// ties).
pub fn nearest_neighbor(inst: &AtspInstance) -> Tour {
    let n = inst.n();
    let mut visited = vec![false; n];
    let mut perm = Vec::with_capacity(n);
    let mut cur = 0;
    visited[0] = true;
    perm.push(0);
    let mut length = 0.0;
    for _ in 1..n {
        let mut best = usize::MAX;
        for c in 0..n {
            if !visited[c] && (best == usize::MAX || inst.d(cur, c) < inst.d(cur, best)) {
                best = c;
            }
        }
        length += inst.d(cur, best);
        visited[best] = true;
        perm.push(best);
        cur = best;
    }
    length += inst.d(cur, 0);
    Tour { perm, length }
}

/// Cheapest position for every city not yet in the tour, kept up to date as
/// the tour grows. Position `p` means "between tour[p] and tour[p+1]".
fn insertion(inst: &AtspInstance, farthest: bool) -> Tour {
    let n = inst.n();
    let mut tour: Vec<usize> = vec![0];
    let mut inside = vec![false; n];
    inside[0] = true;
    let mut length = 0.0;
    while tour.len() < n {
        let k = tour.len();
        // (city, position, increment) of the chosen city
        let mut pick: Option<(usize, usize, f64)> = None;
        for c in 0..n {
            if inside[c] {
                continue;
            }
            let mut best_pos = 0;
            let mut best_inc = f64::INFINITY;
            for p in 0..k {
                let (a, b) = (tour[p], tour[(p + 1) % k]);
                let inc = inst.d(a, c) + inst.d(c, b) - inst.d(a, b);
                if inc < best_inc {
                    best_inc = inc;
                    best_pos = p;
                }
            }
            let better = match pick {
                None => true,
                Some((_, _, inc)) => {
                    if farthest {
                        best_inc > inc
                    } else {
                        best_inc < inc
                    }
                }
            };
            if better {
                pick = Some((c, best_pos, best_inc));
            }
        }
        let (c, p, inc) = pick.expect("an uninserted city exists");
        tour.insert(p + 1, c);
        inside[c] = true;
        length += inc;
    }
    Tour { perm: tour, length }
}

/// Inserts, at each step, the city whose cheapest insertion is smallest.
pub fn nearest_insertion(inst: &AtspInstance) -> Tour {
    insertion(inst, false)
}

/// Inserts, at each step, the city whose cheapest insertion is largest.
pub fn farthest_insertion(inst: &AtspInstance) -> Tour {
    insertion(inst, true)
}
