//! Benchmark reports: raw per-instance objectives plus the derived summary
//! table (mean, gap, time), rendered as CSV and as aligned text.

use std::fmt::Write as _;

use crate::config::Problem;
use crate::error::{AppError, Result};

/// Objectives of one method over an instance set.
#[derive(Clone, Debug, PartialEq)]
pub struct MethodRun {
    pub method: String,
    pub seed: u64,
    pub objectives: Vec<f64>,
    pub wall_seconds: f64,
}

impl MethodRun {
    pub fn mean(&self) -> f64 {
        self.objectives.iter().sum::<f64>() / self.objectives.len() as f64
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchReport {
    pub problem: Problem,
    /// Gap reference; `None` picks the default (`oracle` for ATSP when
    /// present, otherwise the best mean).
    pub reference: Option<String>,
    pub runs: Vec<MethodRun>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReportRow {
    pub method: String,
    pub seed: u64,
    pub instances: usize,
    pub mean: f64,
    /// Relative for ATSP, absolute for FFSP; blank without a reference.
    pub gap: Option<f64>,
    pub wall_seconds: f64,
}

pub const CSV_HEADER: &str = "method,seed,instances,mean,gap,wall_seconds";
pub const RAW_HEADER: &str = "method,seed,instance,objective";

impl BenchReport {
    pub fn new(problem: Problem, reference: Option<String>, mut runs: Vec<MethodRun>) -> Self {
        runs.sort_by(|a, b| a.method.cmp(&b.method).then(a.seed.cmp(&b.seed)));
        BenchReport { problem, reference, runs }
    }

    /// Mean objective the gaps are measured against, with any warning.
    fn reference_mean(&self) -> (Option<f64>, Option<String>) {
        if self.runs.len() < 2 {
            return (None, None);
        }
        let named = match (&self.reference, self.problem) {
            (Some(r), _) => Some(r.as_str()),
            (None, Problem::Atsp) if self.runs.iter().any(|r| r.method == "oracle") => Some("oracle"),
            _ => None,
        };
        match named {
            Some(name) => match self.runs.iter().find(|r| r.method == name) {
                Some(r) => (Some(r.mean()), None),
                None => (None, Some(format!("warning: reference method `{name}` not in report, gap column left blank"))),
            },
            None => (self.runs.iter().map(MethodRun::mean).reduce(f64::min), None),
        }
    }

    /// Summary rows, recomputed from the raw objectives, plus warnings.
    pub fn rows(&self) -> (Vec<ReportRow>, Vec<String>) {
        let (reference, warning) = self.reference_mean();
        let rows = self
            .runs
            .iter()
            .map(|r| {
                let mean = r.mean();
                let gap = reference.map(|m| match self.problem {
                    Problem::Atsp => (mean - m) / m,
                    Problem::Ffsp => mean - m,
                });
                ReportRow {
                    method: r.method.clone(),
                    seed: r.seed,
                    instances: r.objectives.len(),
                    mean,
                    gap,
                    wall_seconds: r.wall_seconds,
                }
            })
            .collect();
        (rows, warning.into_iter().collect())
    }

    /// Summary CSV; floats are written so they parse back exactly.
    pub fn to_csv(&self) -> String {
        let mut s = format!("{CSV_HEADER}\n");
        for r in self.rows().0 {
            let gap = r.gap.map(|g| format!("{g:?}")).unwrap_or_default();
            writeln!(s, "{},{},{},{:?},{gap},{:?}", r.method, r.seed, r.instances, r.mean, r.wall_seconds).unwrap();
        }
        s
    }

    /// Per-instance objectives; every summary number derives from this.
    pub fn raw_csv(&self) -> String {
        let mut s = format!("{RAW_HEADER}\n");
        for r in &self.runs {
            for (i, v) in r.objectives.iter().enumerate() {
                writeln!(s, "{},{},{i},{v:?}", r.method, r.seed).unwrap();
            }
        }
        s
    }

    /// Table in the "Len./MS, Gap, Time" layout.
    pub fn to_text(&self) -> String {
        let (rows, warnings) = self.rows();
        let objective = match self.problem {
            Problem::Atsp => "Len.",
            Problem::Ffsp => "MS",
        };
        let cells: Vec<[String; 5]> = rows
            .iter()
            .map(|r| {
                let gap = match (r.gap, self.problem) {
                    (None, _) => String::new(),
                    (Some(g), Problem::Atsp) => format!("{:.2}%", 100.0 * g),
                    (Some(g), Problem::Ffsp) => format!("{g:.2}"),
                };
                let mean = match self.problem {
                    Problem::Atsp => format!("{:.4e}", r.mean),
                    Problem::Ffsp => format!("{:.2}", r.mean),
                };
                [r.method.clone(), r.seed.to_string(), mean, gap, format!("{:.2}s", r.wall_seconds)]
            })
            .collect();
        let head = ["Method", "Seed", objective, "Gap", "Time"];
        let mut width = head.map(str::len);
        for c in &cells {
            for (w, v) in width.iter_mut().zip(c) {
                *w = (*w).max(v.len());
            }
        }
        let mut s = String::new();
        let mut line = |c: [&str; 5]| {
            let mut l = format!("{:<w$}", c[0], w = width[0]);
            for (v, w) in c.iter().zip(width).skip(1) {
                write!(l, "  {v:>w$}").unwrap();
            }
            s.push_str(l.trim_end());
            s.push('\n');
        };
        line(head);
        for c in &cells {
            line([&c[0], &c[1], &c[2], &c[3], &c[4]]);
        }
        for w in warnings {
            s.push_str(&w);
            s.push('\n');
        }
        s
    }
}

/// Parses the summary CSV written by [`BenchReport::to_csv`].
pub fn parse_csv(text: &str) -> Result<Vec<ReportRow>> {
    let mut lines = text.lines();
    if lines.next() != Some(CSV_HEADER) {
        return Err(AppError::Other(format!("report CSV must start with `{CSV_HEADER}`")));
    }
    lines
        .enumerate()
        .map(|(i, l)| {
            let err = |what: &str| AppError::Parse {
                path: "report".into(),
                line: i + 2,
                msg: format!("bad {what}"),
            };
            let f: Vec<&str> = l.split(',').collect();
            if f.len() != 6 {
                return Err(err("field count"));
            }
            Ok(ReportRow {
                method: f[0].to_string(),
                seed: f[1].parse().map_err(|_| err("seed"))?,
                instances: f[2].parse().map_err(|_| err("instances"))?,
                mean: f[3].parse().map_err(|_| err("mean"))?,
                gap: match f[4] {
                    "" => None,
                    g => Some(g.parse().map_err(|_| err("gap"))?),
                },
                wall_seconds: f[5].parse().map_err(|_| err("wall_seconds"))?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(method: &str, objectives: &[f64]) -> MethodRun {
        MethodRun {
            method: method.into(),
            seed: 1,
            objectives: objectives.to_vec(),
            wall_seconds: 0.125,
        }
    }

    #[test]
    fn single_method_has_blank_gap() {
        let r = BenchReport::new(Problem::Atsp, None, vec![run("nn", &[1.0, 2.0])]);
        assert_eq!(r.rows().0[0].gap, None);
    }

    #[test]
    fn equal_means_give_zero_gap() {
        for p in [Problem::Atsp, Problem::Ffsp] {
            let r = BenchReport::new(p, None, vec![run("a", &[3.0, 1.0]), run("b", &[2.0, 2.0])]);
            assert!(r.rows().0.iter().all(|row| row.gap == Some(0.0)));
        }
    }

    #[test]
    fn gap_conventions() {
        let runs = vec![run("oracle", &[10.0]), run("nn", &[12.0]), run("fi", &[9.0])];
        let a = BenchReport::new(Problem::Atsp, None, runs.clone());
        let (rows, _) = a.rows();
        assert_eq!(rows.iter().map(|r| r.method.as_str()).collect::<Vec<_>>(), ["fi", "nn", "oracle"]);
        assert!((rows[1].gap.unwrap() - 0.2).abs() < 1e-15);
        let f = BenchReport::new(Problem::Ffsp, None, runs);
        assert_eq!(f.rows().0[1].gap, Some(3.0));
    }

    #[test]
    fn missing_reference_warns() {
        let r = BenchReport::new(Problem::Atsp, Some("cplex".into()), vec![run("a", &[1.0]), run("b", &[2.0])]);
        let (rows, warnings) = r.rows();
        assert!(rows.iter().all(|r| r.gap.is_none()));
        assert_eq!(warnings.len(), 1);
        assert!(r.to_text().contains("warning"));
    }

    #[test]
    fn csv_round_trips_and_text_agrees() {
        let r = BenchReport::new(Problem::Atsp, None, vec![run("nn", &[2.1e6, 1.9e6 + 0.3]), run("oracle", &[1.7e6, 1.65e6])]);
        let (rows, _) = r.rows();
        assert_eq!(parse_csv(&r.to_csv()).unwrap(), rows);
        let text = r.to_text();
        for row in &rows {
            assert!(text.contains(&format!("{:.4e}", row.mean)));
        }
        // the raw file reproduces every mean
        let raw = r.raw_csv();
        let nn: Vec<f64> = raw.lines().skip(1).filter(|l| l.starts_with("nn,")).map(|l| l.rsplit(',').next().unwrap().parse().unwrap()).collect();
        assert_eq!(nn.iter().sum::<f64>() / nn.len() as f64, rows[0].mean);
    }

    proptest::proptest! {
        #[test]
        fn csv_round_trip_property(
            runs in proptest::collection::vec(("[a-z]{1,6}", 0u64..4, proptest::collection::vec(1e-3f64..1e7, 1..6), 0.0f64..100.0), 1..5),
            ffsp: bool,
        ) {
            let runs = runs.into_iter().map(|(method, seed, objectives, wall_seconds)| MethodRun { method, seed, objectives, wall_seconds }).collect();
            let problem = if ffsp { Problem::Ffsp } else { Problem::Atsp };
            let r = BenchReport::new(problem, None, runs);
            proptest::prop_assert_eq!(parse_csv(&r.to_csv()).unwrap(), r.rows().0);
        }
    }
}
