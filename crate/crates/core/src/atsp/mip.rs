use alloc::format;
use alloc::vec::Vec;

use super::{AtspInstance, Tour};
use crate::lp::{LinearModel, Sense};

/// Miller-Tucker-Zemlin model. Cities are numbered from 1 in variable and
/// row names: `x_i_j` (arc used), `u_i` (position of city i, i >= 2),
/// rows `in_j`, `out_i` and `mtz_i_j`.
pub fn mtz_model(inst: &AtspInstance) -> LinearModel {
    let n = inst.n();
    let mut m = LinearModel::new(&format!("ATSP MTZ model, {n} cities"));
    let mut x = alloc::vec![usize::MAX; n * n];
    for i in 0..n {
        for j in 0..n {
            if i != j {
                x[i * n + j] = m.binary(&format!("x_{}_{}", i + 1, j + 1));
            }
        }
    }
    let mut u = alloc::vec![usize::MAX; n];
    for (i, slot) in u.iter_mut().enumerate().skip(1) {
        *slot = m.continuous(&format!("u_{}", i + 1), 1.0, (n - 1) as f64);
    }
    m.objective = (0..n)
        .flat_map(|i| (0..n).map(move |j| (i, j)))
        .filter(|(i, j)| i != j)
        .map(|(i, j)| (x[i * n + j], inst.d(i, j)))
        .collect();
    for j in 0..n {
        let terms: Vec<(usize, f64)> = (0..n).filter(|&i| i != j).map(|i| (x[i * n + j], 1.0)).collect();
        m.add_constraint(&format!("in_{}", j + 1), terms, Sense::Eq, 1.0);
    }
    for i in 0..n {
        let terms: Vec<(usize, f64)> = (0..n).filter(|&j| j != i).map(|j| (x[i * n + j], 1.0)).collect();
        m.add_constraint(&format!("out_{}", i + 1), terms, Sense::Eq, 1.0);
    }
    for i in 1..n {
        for j in 1..n {
            if i == j {
                continue;
            }
            m.add_constraint(
                &format!("mtz_{}_{}", i + 1, j + 1),
                alloc::vec![(u[i], 1.0), (u[j], -1.0), (x[i * n + j], (n - 1) as f64)],
                Sense::Le,
                (n - 2) as f64,
            );
        }
    }
    m
}

/// Variable values encoding `tour`: `x` along its arcs and `u` equal to the
/// position after rotating city 0 to the front.
pub fn mtz_assignment(model: &LinearModel, tour: &Tour) -> crate::error::Result<Vec<f64>> {
    let perm = tour.rotated_to(0);
    let n = perm.len();
    let mut values: Vec<(alloc::string::String, f64)> = Vec::new();
    for t in 0..n {
        let (a, b) = (perm[t], perm[(t + 1) % n]);
        values.push((format!("x_{}_{}", a + 1, b + 1), 1.0));
        if t > 0 {
            values.push((format!("u_{}", perm[t] + 1), t as f64));
        }
    }
    model.assignment(values.iter().map(|(k, v)| (k.as_str(), *v)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::atsp::{generate_tmat, nearest_insertion};
    use crate::lp::{equivalent, parse_lp, VarKind};
    use crate::rng;

    #[test]
    fn three_city_counts() {
        let inst = AtspInstance::new(3, alloc::vec![0., 1., 2., 3., 0., 4., 5., 6., 0.]).unwrap();
        let m = mtz_model(&inst);
        assert_eq!(m.count(VarKind::Binary), 6);
        assert_eq!(m.count_prefix("u_"), 2);
        assert_eq!(m.rows_with_prefix("in_") + m.rows_with_prefix("out_"), 6);
        assert_eq!(m.rows_with_prefix("mtz_"), 2);
    }

    #[test]
    fn heuristic_tour_is_feasible_and_text_round_trips() {
        let mut r = rng::from_seed(9);
        for _ in 0..10 {
            let inst = generate_tmat(7, &mut r).unwrap();
            let m = mtz_model(&inst);
            let tour = nearest_insertion(&inst);
            let x = mtz_assignment(&m, &tour).unwrap();
            assert_eq!(m.check(&x, 1e-9), Ok(()));
            assert_eq!(m.objective_value(&x), tour.length);
            let back = parse_lp(&m.to_lp()).unwrap();
            assert!(equivalent(&m, &back));
        }
    }
}
