use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use super::{FfspInstance, FfspSchedule};
use crate::error::Result;
use crate::lp::{LinearModel, Sense};

/// Running every job serially on its slowest machine at every stage never
/// takes longer than this, so it bounds any non-delay completion time.
pub fn default_big_m(inst: &FfspInstance) -> f64 {
    let mut total = 0u64;
    for k in 0..inst.stages() {
        for j in 0..inst.jobs() {
            total += (0..inst.machines(k)).map(|i| inst.p(k, i, j)).max().unwrap() as u64;
        }
    }
    total as f64
}

/// Makespan model with 1-based names: `X_i_j_k` (job j on machine k at
/// stage i), `Y_i_l_j` (job l immediately precedes job j on a machine of
/// stage i), `C_i_j` (completion), `Cmax`, and helper binaries `U_i_k`
/// (machine k of stage i receives at least one job), which make the
/// "one chain per used machine" count linear.
pub fn ffsp_model(inst: &FfspInstance, big_m: f64) -> LinearModel {
    let (s, n) = (inst.stages(), inst.jobs());
    let mut m = LinearModel::new(&format!("FFSP makespan model, {s} stages, {n} jobs"));
    let name3 = |p: &str, a: usize, b: usize, c: usize| format!("{p}_{}_{}_{}", a + 1, b + 1, c + 1);
    let name2 = |p: &str, a: usize, b: usize| format!("{p}_{}_{}", a + 1, b + 1);

    let mut x: Vec<Vec<usize>> = Vec::with_capacity(s);
    for i in 0..s {
        let mut row = Vec::with_capacity(n * inst.machines(i));
        for j in 0..n {
            for k in 0..inst.machines(i) {
                row.push(m.binary(&name3("X", i, j, k)));
            }
        }
        x.push(row);
    }
    let xv = |i: usize, j: usize, k: usize| x[i][j * inst.machines(i) + k];
    let mut y = vec![0usize; s * n * n];
    for i in 0..s {
        for l in 0..n {
            for j in 0..n {
                y[(i * n + l) * n + j] = m.binary(&name3("Y", i, l, j));
            }
        }
    }
    let yv = |i: usize, l: usize, j: usize| y[(i * n + l) * n + j];
    let mut c = vec![0usize; s * n];
    for i in 0..s {
        for j in 0..n {
            c[i * n + j] = m.continuous(&name2("C", i, j), 0.0, f64::INFINITY);
        }
    }
    let cmax = m.continuous("Cmax", 0.0, f64::INFINITY);
    let mut u: Vec<Vec<usize>> = Vec::with_capacity(s);
    for i in 0..s {
        u.push((0..inst.machines(i)).map(|k| m.binary(&name2("U", i, k))).collect());
    }
    m.objective = vec![(cmax, 1.0)];

    for i in 0..s {
        let mi = inst.machines(i);
        for j in 0..n {
            m.add_constraint(&name2("assign", i, j), (0..mi).map(|k| (xv(i, j, k), 1.0)).collect(), Sense::Eq, 1.0);
        }
        for j in 0..n {
            m.add_constraint(&name2("self", i, j), vec![(yv(i, j, j), 1.0)], Sense::Eq, 0.0);
        }
        for k in 0..mi {
            for j in 0..n {
                m.add_constraint(&name3("usedlo", i, j, k), vec![(u[i][k], 1.0), (xv(i, j, k), -1.0)], Sense::Ge, 0.0);
            }
            let mut t: Vec<(usize, f64)> = vec![(u[i][k], 1.0)];
            t.extend((0..n).map(|j| (xv(i, j, k), -1.0)));
            m.add_constraint(&name2("usedhi", i, k), t, Sense::Le, 0.0);
        }
        // sum Y = n - (used machines)
        let mut t: Vec<(usize, f64)> = Vec::with_capacity(n * n + mi);
        for l in 0..n {
            for j in 0..n {
                t.push((yv(i, l, j), 1.0));
            }
        }
        t.extend((0..mi).map(|k| (u[i][k], 1.0)));
        m.add_constraint(&format!("chain_{}", i + 1), t, Sense::Eq, n as f64);
        for l in 0..n {
            for j in 0..n {
                if l == j {
                    continue;
                }
                for k in 0..mi {
                    m.add_constraint(
                        &format!("same_{}_{}_{}_{}", i + 1, l + 1, j + 1, k + 1),
                        vec![(yv(i, l, j), 1.0), (xv(i, l, k), 1.0), (xv(i, j, k), -1.0)],
                        Sense::Le,
                        1.0,
                    );
                }
            }
        }
        for j in 0..n {
            m.add_constraint(&name2("succ", i, j), (0..n).map(|l| (yv(i, j, l), 1.0)).collect(), Sense::Le, 1.0);
            m.add_constraint(&name2("pred", i, j), (0..n).map(|l| (yv(i, l, j), 1.0)).collect(), Sense::Le, 1.0);
        }
        for j in 0..n {
            let mut t = vec![(c[i * n + j], 1.0)];
            t.extend((0..mi).map(|k| (xv(i, j, k), -(inst.p(i, k, j) as f64))));
            if i > 0 {
                t.push((c[(i - 1) * n + j], -1.0));
            }
            let row = if i == 0 { format!("first_{}", j + 1) } else { name2("stage", i, j) };
            m.add_constraint(&row, t, Sense::Ge, 0.0);
        }
        for l in 0..n {
            for j in 0..n {
                if l == j {
                    continue;
                }
                // C_ij - C_il - sum_k p X_ijk - M Y_ilj >= -M
                let mut t = vec![(c[i * n + j], 1.0), (c[i * n + l], -1.0), (yv(i, l, j), -big_m)];
                t.extend((0..mi).map(|k| (xv(i, j, k), -(inst.p(i, k, j) as f64))));
                m.add_constraint(&name3("seq", i, l, j), t, Sense::Ge, -big_m);
            }
        }
    }
    for j in 0..n {
        m.add_constraint(&format!("makespan_{}", j + 1), vec![(cmax, 1.0), (c[(s - 1) * n + j], -1.0)], Sense::Ge, 0.0);
    }
    m
}

/// Variable values describing `sched` in [`ffsp_model`]'s terms.
pub fn ffsp_assignment(model: &LinearModel, inst: &FfspInstance, sched: &FfspSchedule) -> Result<Vec<f64>> {
    let (s, n) = (inst.stages(), inst.jobs());
    let mut values: Vec<(String, f64)> = Vec::new();
    for i in 0..s {
        for j in 0..n {
            let a = sched.get(i, j);
            values.push((format!("X_{}_{}_{}", i + 1, j + 1, a.machine + 1), 1.0));
            values.push((format!("C_{}_{}", i + 1, j + 1), sched.end(inst, i, j) as f64));
            values.push((format!("U_{}_{}", i + 1, a.machine + 1), 1.0));
        }
        for k in 0..inst.machines(i) {
            let mut on: Vec<usize> = (0..n).filter(|&j| sched.get(i, j).machine == k).collect();
            on.sort_by_key(|&j| sched.get(i, j).start);
            for w in on.windows(2) {
                values.push((format!("Y_{}_{}_{}", i + 1, w[0] + 1, w[1] + 1), 1.0));
            }
        }
    }
    values.push((String::from("Cmax"), sched.makespan as f64));
    model.assignment(values.iter().map(|(k, v)| (k.as_str(), *v)))
}

#[cfg(test)]
mod tests {
    use super::super::{generate_ffsp, sjf};
    use super::*;
    use crate::lp::{equivalent, parse_lp, VarKind};
    use crate::rng;

    #[test]
    fn variable_counts() {
        let inst = generate_ffsp(3, 4, 2, &mut rng::from_seed(1)).unwrap();
        let m = ffsp_model(&inst, default_big_m(&inst));
        assert_eq!(m.count_prefix("X_"), 24);
        assert_eq!(m.count_prefix("Y_"), 12);
        assert_eq!(m.count_prefix("C_"), 6);
        assert_eq!(m.count_prefix("Cmax"), 1);
        assert_eq!(m.count(VarKind::Binary), 24 + 12 + 12);
    }

    #[test]
    fn sjf_schedule_feasible_and_round_trips() {
        let mut r = rng::from_seed(2);
        for _ in 0..10 {
            let inst = generate_ffsp(2, 3, 5, &mut r).unwrap();
            let m = ffsp_model(&inst, default_big_m(&inst));
            let s = sjf(&inst);
            let x = ffsp_assignment(&m, &inst, &s).unwrap();
            assert_eq!(m.check(&x, 1e-9), Ok(()));
            assert_eq!(m.objective_value(&x), s.makespan as f64);
            assert!(equivalent(&m, &parse_lp(&m.to_lp()).unwrap()));
        }
    }

    #[test]
    fn overlapping_schedule_rejected() {
        let inst = FfspInstance::uniform(1, 1, 2, vec![vec![3, 4]]).unwrap();
        let m = ffsp_model(&inst, default_big_m(&inst));
        let mut s = sjf(&inst);
        s.assign[1].start = 1;
        let x = ffsp_assignment(&m, &inst, &s).unwrap();
        let v = m.check(&x, 1e-9).unwrap_err();
        assert!(v.row.starts_with("seq_"), "{}", v.row);
    }
}
