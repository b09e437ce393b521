//! Text formats for instances, instance sets and solutions.
//!
//! ```text
//! ATSP 3            FFSP 2 2 3          TOUR 3        SCHED 1 2 3 9
//! 0 5 7             4 2 9               0 2 1         STAGE 0
//! 3 0 2             3 3 3                             0 1 0
//! 4 6 0             ...                               ...
//! ```
//! FFSP headers give `stages machines jobs`; `machines` may instead be a
//! comma list with one count per stage. Schedule lines are
//! `job machine start`, one block per stage.

use std::fs;
use std::path::{Path, PathBuf};

use matnet_core::atsp::{AtspInstance, Tour};
use matnet_core::ffsp::{Assignment, FfspInstance, FfspSchedule};

use crate::error::{AppError, Result};

#[derive(Clone, Debug, PartialEq)]
pub enum AnyInstance {
    Atsp(AtspInstance),
    Ffsp(FfspInstance),
}

pub fn write_atsp(inst: &AtspInstance) -> String {
    let n = inst.n();
    let mut s = format!("ATSP {n}\n");
    for i in 0..n {
        let row: Vec<String> = (0..n).map(|j| inst.d(i, j).to_string()).collect();
        s.push_str(&row.join(" "));
        s.push('\n');
    }
    s
}

pub fn write_ffsp(inst: &FfspInstance) -> String {
    let counts = inst.machine_counts();
    let m = if counts.iter().all(|&c| c == counts[0]) {
        counts[0].to_string()
    } else {
        counts.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(",")
    };
    let mut s = format!("FFSP {} {m} {}\n", inst.stages(), inst.jobs());
    for k in 0..inst.stages() {
        for row in inst.matrix(k).chunks(inst.jobs()) {
            s.push_str(&row.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(" "));
            s.push('\n');
        }
    }
    s
}

pub fn write_instance(inst: &AnyInstance) -> String {
    match inst {
        AnyInstance::Atsp(i) => write_atsp(i),
        AnyInstance::Ffsp(i) => write_ffsp(i),
    }
}

/// Non-empty, comment-free lines with their 1-based numbers.
struct Lines<'a> {
    origin: &'a str,
    items: Vec<(usize, &'a str)>,
    pos: usize,
}

impl<'a> Lines<'a> {
    fn new(text: &'a str, origin: &'a str) -> Self {
        let items = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.split('#').next().unwrap().trim()))
            .filter(|(_, l)| !l.is_empty())
            .collect();
        Lines { origin, items, pos: 0 }
    }

    fn err(&self, line: usize, msg: impl Into<String>) -> AppError {
        AppError::Parse {
            path: self.origin.to_string(),
            line,
            msg: msg.into(),
        }
    }

    fn next(&mut self, what: &str) -> Result<(usize, &'a str)> {
        let last = self.items.last().map_or(1, |l| l.0);
        let item = self.items.get(self.pos).copied().ok_or_else(|| self.err(last, format!("unexpected end of file, expected {what}")))?;
        self.pos += 1;
        Ok(item)
    }

    fn numbers<T: std::str::FromStr>(&mut self, count: usize, what: &str) -> Result<Vec<T>> {
        let (ln, l) = self.next(what)?;
        let vals: Vec<T> = l
            .split_whitespace()
            .map(|t| t.parse().map_err(|_| self.err(ln, format!("bad number `{t}` in {what}"))))
            .collect::<Result<_>>()?;
        if vals.len() != count {
            return Err(self.err(ln, format!("{what} has {} entries, expected {count}", vals.len())));
        }
        Ok(vals)
    }

    fn finish(&self) -> Result<()> {
        match self.items.get(self.pos) {
            Some((ln, _)) => Err(self.err(*ln, "trailing content")),
            None => Ok(()),
        }
    }
}

fn parse_usize(lines: &Lines, ln: usize, t: Option<&str>, what: &str) -> Result<usize> {
    t.and_then(|v| v.parse().ok()).ok_or_else(|| lines.err(ln, format!("missing or bad {what}")))
}

pub fn parse_instance(text: &str, origin: &str) -> Result<AnyInstance> {
    let mut lines = Lines::new(text, origin);
    let (ln, header) = lines.next("header")?;
    let mut tok = header.split_whitespace();
    let inst = match tok.next() {
        Some("ATSP") => {
            let n = parse_usize(&lines, ln, tok.next(), "city count")?;
            let mut dist = Vec::with_capacity(n * n);
            for i in 0..n {
                dist.extend(lines.numbers::<f64>(n, &format!("row {i}"))?);
            }
            AnyInstance::Atsp(AtspInstance::new(n, dist).map_err(|e| lines.err(ln, e.to_string()))?)
        }
        Some("FFSP") => {
            let s = parse_usize(&lines, ln, tok.next(), "stage count")?;
            let m_tok = tok.next().ok_or_else(|| lines.err(ln, "missing machine count"))?;
            let counts: Vec<usize> = m_tok
                .split(',')
                .map(|c| c.parse().map_err(|_| lines.err(ln, format!("bad machine count `{c}`"))))
                .collect::<Result<_>>()?;
            let counts = match counts.len() {
                1 => vec![counts[0]; s],
                c if c == s => counts,
                c => return Err(lines.err(ln, format!("{c} machine counts for {s} stages"))),
            };
            let n = parse_usize(&lines, ln, tok.next(), "job count")?;
            let mut proc = Vec::with_capacity(s);
            for (k, &m) in counts.iter().enumerate() {
                let mut stage = Vec::with_capacity(m * n);
                for i in 0..m {
                    stage.extend(lines.numbers::<u32>(n, &format!("stage {k} machine {i}"))?);
                }
                proc.push(stage);
            }
            AnyInstance::Ffsp(FfspInstance::new(counts, n, proc).map_err(|e| lines.err(ln, e.to_string()))?)
        }
        _ => return Err(lines.err(ln, "expected `ATSP n` or `FFSP S M N` header")),
    };
    lines.finish()?;
    Ok(inst)
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| AppError::io(path, e))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| AppError::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| AppError::io(path, e))
}

pub fn read_instance(path: &Path) -> Result<AnyInstance> {
    parse_instance(&read_text(path)?, &path.display().to_string())
}

pub fn instance_file_name(index: usize) -> String {
    format!("instance_{index:05}.txt")
}

/// Writes `insts` as `instance_00000.txt`, ... into `dir`.
pub fn write_set(dir: &Path, insts: &[AnyInstance]) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| AppError::io(dir, e))?;
    insts
        .iter()
        .enumerate()
        .map(|(i, inst)| {
            let p = dir.join(instance_file_name(i));
            write_text(&p, &write_instance(inst))?;
            Ok(p)
        })
        .collect()
}

/// Reads every `*.txt` in `dir` in file-name order.
pub fn read_set(dir: &Path) -> Result<Vec<AnyInstance>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| AppError::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "txt"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(AppError::Other(format!("{}: no instance files", dir.display())));
    }
    paths.iter().map(|p| read_instance(p)).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub enum Solution {
    Tour(Vec<usize>),
    Schedule(FfspSchedule),
}

pub fn write_tour(tour: &Tour) -> String {
    let perm: Vec<String> = tour.perm.iter().map(|c| c.to_string()).collect();
    format!("TOUR {}\n{}\n", tour.perm.len(), perm.join(" "))
}

pub fn write_schedule(inst: &FfspInstance, s: &FfspSchedule) -> String {
    let mut out = format!("SCHED {} {} {} {}\n", s.stages, inst.max_machines(), s.jobs, s.makespan);
    for k in 0..s.stages {
        out.push_str(&format!("STAGE {k}\n"));
        for j in 0..s.jobs {
            let a = s.get(k, j);
            out.push_str(&format!("{j} {} {}\n", a.machine, a.start));
        }
    }
    out
}

/// Parses a solution; schedules are checked against `inst` for shape and the
/// stated makespan is recomputed.
pub fn parse_solution(text: &str, origin: &str, inst: Option<&FfspInstance>) -> Result<Solution> {
    let mut lines = Lines::new(text, origin);
    let (ln, header) = lines.next("header")?;
    let mut tok = header.split_whitespace();
    let sol = match tok.next() {
        Some("TOUR") => {
            let n = parse_usize(&lines, ln, tok.next(), "city count")?;
            Solution::Tour(lines.numbers(n, "tour")?)
        }
        Some("SCHED") => {
            let s = parse_usize(&lines, ln, tok.next(), "stage count")?;
            let _m = parse_usize(&lines, ln, tok.next(), "machine count")?;
            let n = parse_usize(&lines, ln, tok.next(), "job count")?;
            let stated = parse_usize(&lines, ln, tok.next(), "makespan")?;
            let mut assign = vec![None; s * n];
            for k in 0..s {
                let (sl, st) = lines.next("STAGE line")?;
                if st != format!("STAGE {k}") {
                    return Err(lines.err(sl, format!("expected `STAGE {k}`")));
                }
                for _ in 0..n {
                    let v: Vec<usize> = lines.numbers(3, "assignment")?;
                    let (j, machine, start) = (v[0], v[1], v[2] as u32);
                    if j >= n || assign[k * n + j].is_some() {
                        return Err(lines.err(sl, format!("job {j} repeated or out of range in stage {k}")));
                    }
                    assign[k * n + j] = Some(Assignment { machine, start });
                }
            }
            let assign: Vec<Assignment> = assign.into_iter().map(Option::unwrap).collect();
            let sched = match inst {
                Some(i) if i.stages() == s && i.jobs() == n => FfspSchedule::from_assignments(i, assign),
                Some(_) => return Err(lines.err(ln, "schedule shape does not match the instance")),
                None => FfspSchedule {
                    stages: s,
                    jobs: n,
                    assign,
                    makespan: stated as u32,
                },
            };
            if sched.makespan as usize != stated {
                return Err(lines.err(ln, format!("stated makespan {stated} but schedule gives {}", sched.makespan)));
            }
            Solution::Schedule(sched)
        }
        _ => return Err(lines.err(ln, "expected `TOUR n` or `SCHED S M N makespan` header")),
    };
    lines.finish()?;
    Ok(sol)
}

#[cfg(test)]
mod tests {
    use super::*;
    use matnet_core::atsp::{generate_euclidean, generate_tmat, nearest_neighbor};
    use matnet_core::ffsp::{generate_ffsp, sjf};
    use matnet_core::rng;

    #[test]
    fn instances_round_trip() {
        let mut r = rng::from_seed(1);
        let a = AnyInstance::Atsp(generate_tmat(7, &mut r).unwrap());
        let e = AnyInstance::Atsp(generate_euclidean(5, &mut r).unwrap());
        let f = AnyInstance::Ffsp(generate_ffsp(3, 4, 6, &mut r).unwrap());
        let g = AnyInstance::Ffsp(FfspInstance::new(vec![2, 3], 2, vec![vec![1, 2, 3, 4], vec![5, 6, 7, 8, 9, 2]]).unwrap());
        for inst in [a, e, f, g] {
            assert_eq!(parse_instance(&write_instance(&inst), "mem").unwrap(), inst);
        }
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let e = parse_instance("ATSP 2\n0 1\n1\n", "f.txt").unwrap_err().to_string();
        assert!(e.starts_with("f.txt:3"), "{e}");
        let e = parse_instance("# c\nATSP 2\n0 1\n1 x\n", "f.txt").unwrap_err().to_string();
        assert!(e.starts_with("f.txt:4"), "{e}");
        assert!(parse_instance("FFSP 2 1,2,3 2\n", "f").is_err());
        assert!(parse_instance("ATSP 1\n0\n5\n", "f").is_err());
        assert!(parse_instance("", "f").is_err());
    }

    #[test]
    fn solutions_round_trip() {
        let mut r = rng::from_seed(2);
        let a = generate_tmat(6, &mut r).unwrap();
        let t = nearest_neighbor(&a);
        assert_eq!(parse_solution(&write_tour(&t), "m", None).unwrap(), Solution::Tour(t.perm.clone()));
        let f = generate_ffsp(3, 4, 5, &mut r).unwrap();
        let s = sjf(&f);
        let text = write_schedule(&f, &s);
        assert_eq!(parse_solution(&text, "m", Some(&f)).unwrap(), Solution::Schedule(s.clone()));
        let lie = text.replacen(&format!(" {}\n", s.makespan), &format!(" {}\n", s.makespan + 1), 1);
        assert!(parse_solution(&lie, "m", Some(&f)).is_err());
    }

    #[test]
    fn sets_round_trip_in_order() {
        let dir = tempfile::tempdir().unwrap();
        let mut r = rng::from_seed(3);
        let insts: Vec<AnyInstance> = (0..3).map(|_| AnyInstance::Atsp(generate_tmat(4, &mut r).unwrap())).collect();
        write_set(dir.path(), &insts).unwrap();
        assert_eq!(read_set(dir.path()).unwrap(), insts);
    }

    proptest::proptest! {
        #[test]
        fn ffsp_text_round_trips(counts in proptest::collection::vec(1usize..5, 1..4), jobs in 1usize..7, seed: u64) {
            use rand::Rng;
            let mut r = rng::from_seed(seed);
            let proc = counts.iter().map(|&m| (0..m * jobs).map(|_| r.gen_range(1..100)).collect()).collect();
            let inst = AnyInstance::Ffsp(FfspInstance::new(counts, jobs, proc).unwrap());
            proptest::prop_assert_eq!(parse_instance(&write_instance(&inst), "p").unwrap(), inst);
        }

        #[test]
        fn atsp_text_round_trips(n in 2usize..9, seed: u64) {
            let inst = AnyInstance::Atsp(generate_euclidean(n, &mut rng::from_seed(seed)).unwrap());
            proptest::prop_assert_eq!(parse_instance(&write_instance(&inst), "p").unwrap(), inst);
        }
    }
}
