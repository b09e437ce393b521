//! Linear (mixed-integer) models in CPLEX LP text form: building, writing,
//! parsing back, and checking a candidate assignment against every row.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt::Write;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum VarKind {
    Continuous,
    Binary,
    Integer,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Variable {
    pub name: String,
    pub kind: VarKind,
    pub lower: f64,
    /// `f64::INFINITY` when unbounded above.
    pub upper: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Sense {
    Le,
    Ge,
    Eq,
}

impl Sense {
    fn symbol(self) -> &'static str {
        match self {
            Sense::Le => "<=",
            Sense::Ge => ">=",
            Sense::Eq => "=",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Constraint {
    pub name: String,
    pub terms: Vec<(usize, f64)>,
    pub sense: Sense,
    pub rhs: f64,
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct LinearModel {
    pub name: String,
    pub vars: Vec<Variable>,
    pub objective: Vec<(usize, f64)>,
    pub constraints: Vec<Constraint>,
    index: BTreeMap<String, usize>,
}

/// A violated row (or bound) found by [`LinearModel::check`].
#[derive(Clone, Debug, PartialEq)]
pub struct Violation {
    pub row: String,
    pub lhs: f64,
    pub sense: Sense,
    pub rhs: f64,
}

impl LinearModel {
    pub fn new(name: &str) -> Self {
        LinearModel {
            name: name.to_string(),
            ..LinearModel::default()
        }
    }

    pub fn add_var(&mut self, name: &str, kind: VarKind, lower: f64, upper: f64) -> usize {
        let id = self.vars.len();
        self.vars.push(Variable {
            name: name.to_string(),
            kind,
            lower,
            upper,
        });
        self.index.insert(name.to_string(), id);
        id
    }

    pub fn binary(&mut self, name: &str) -> usize {
        self.add_var(name, VarKind::Binary, 0.0, 1.0)
    }

    pub fn continuous(&mut self, name: &str, lower: f64, upper: f64) -> usize {
        self.add_var(name, VarKind::Continuous, lower, upper)
    }

    pub fn var(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn add_constraint(&mut self, name: &str, terms: Vec<(usize, f64)>, sense: Sense, rhs: f64) {
        self.constraints.push(Constraint {
            name: name.to_string(),
            terms,
            sense,
            rhs,
        });
    }

    pub fn count(&self, kind: VarKind) -> usize {
        self.vars.iter().filter(|v| v.kind == kind).count()
    }

    /// Variables whose name starts with `prefix`.
    pub fn count_prefix(&self, prefix: &str) -> usize {
        self.vars.iter().filter(|v| v.name.starts_with(prefix)).count()
    }

    pub fn rows_with_prefix(&self, prefix: &str) -> usize {
        self.constraints.iter().filter(|c| c.name.starts_with(prefix)).count()
    }

    /// Objective value of a full assignment (indexed like `vars`).
    pub fn objective_value(&self, x: &[f64]) -> f64 {
        self.objective.iter().map(|&(i, c)| c * x[i]).sum()
    }

    /// First bound, integrality or row violated by `x`, within `tol`.
    pub fn check(&self, x: &[f64], tol: f64) -> core::result::Result<(), Violation> {
        for (v, &val) in self.vars.iter().zip(x) {
            let integral = v.kind != VarKind::Continuous;
            let frac = val - libm::round(val);
            if val < v.lower - tol || val > v.upper + tol || (integral && libm::fabs(frac) > tol) {
                return Err(Violation {
                    row: format!("bound:{}", v.name),
                    lhs: val,
                    sense: Sense::Ge,
                    rhs: v.lower,
                });
            }
        }
        for c in &self.constraints {
            let lhs: f64 = c.terms.iter().map(|&(i, a)| a * x[i]).sum();
            let ok = match c.sense {
                Sense::Le => lhs <= c.rhs + tol,
                Sense::Ge => lhs >= c.rhs - tol,
                Sense::Eq => libm::fabs(lhs - c.rhs) <= tol,
            };
            if !ok {
                return Err(Violation {
                    row: c.name.clone(),
                    lhs,
                    sense: c.sense,
                    rhs: c.rhs,
                });
            }
        }
        Ok(())
    }

    /// Builds a dense assignment from `(name, value)` pairs; unnamed
    /// variables take 0.
    pub fn assignment<'a>(&self, values: impl IntoIterator<Item = (&'a str, f64)>) -> Result<Vec<f64>> {
        let mut x = alloc::vec![0.0; self.vars.len()];
        for (name, v) in values {
            let i = self.var(name).ok_or_else(|| Error::Invalid(format!("unknown variable {name}")))?;
            x[i] = v;
        }
        Ok(x)
    }

    /// CPLEX LP text.
    pub fn to_lp(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "\\ {}", self.name);
        out.push_str("Minimize\n");
        write_row(&mut out, "obj", &self.objective, &self.vars, None);
        out.push_str("Subject To\n");
        for c in &self.constraints {
            write_row(&mut out, &c.name, &c.terms, &self.vars, Some((c.sense, c.rhs)));
        }
        out.push_str("Bounds\n");
        for v in &self.vars {
            if v.kind == VarKind::Binary {
                continue;
            }
            match (v.lower, v.upper) {
                (l, u) if l == 0.0 && u == f64::INFINITY => {}
                (l, u) if u == f64::INFINITY => {
                    let _ = writeln!(out, " {} >= {}", v.name, num(l));
                }
                (l, u) => {
                    let _ = writeln!(out, " {} <= {} <= {}", num(l), v.name, num(u));
                }
            }
        }
        for (kind, header) in [(VarKind::Binary, "Binaries"), (VarKind::Integer, "Generals")] {
            let names: Vec<&str> = self.vars.iter().filter(|v| v.kind == kind).map(|v| v.name.as_str()).collect();
            if names.is_empty() {
                continue;
            }
            out.push_str(header);
            out.push('\n');
            for chunk in names.chunks(8) {
                out.push(' ');
                out.push_str(&chunk.join(" "));
                out.push('\n');
            }
        }
        out.push_str("End\n");
        out
    }
}

fn num(v: f64) -> String {
    if v == libm::trunc(v) && libm::fabs(v) < 1e15 {
        format!("{}", v as i64)
    } else {
        format!("{v}")
    }
}

/// Writes `name: terms [sense rhs]`, wrapping long rows.
fn write_row(out: &mut String, name: &str, terms: &[(usize, f64)], vars: &[Variable], bound: Option<(Sense, f64)>) {
    let mut line = format!(" {name}:");
    let mut first = true;
    for &(i, c) in terms {
        let sign = if c < 0.0 { "-" } else if first { "" } else { "+" };
        let mag = libm::fabs(c);
        let coef = if mag == 1.0 { String::new() } else { format!("{} ", num(mag)) };
        let piece = if sign.is_empty() {
            format!(" {coef}{}", vars[i].name)
        } else {
            format!(" {sign} {coef}{}", vars[i].name)
        };
        if line.len() + piece.len() > 78 {
            out.push_str(&line);
            out.push('\n');
            line = String::from("  ");
        }
        line.push_str(&piece);
        first = false;
    }
    if terms.is_empty() {
        line.push_str(" 0");
    }
    if let Some((sense, rhs)) = bound {
        let _ = write!(line, " {} {}", sense.symbol(), num(rhs));
    }
    out.push_str(&line);
    out.push('\n');
}

#[derive(Clone, Copy, PartialEq)]
enum Section {
    None,
    Objective,
    Constraints,
    Bounds,
    Binaries,
    Generals,
}

fn parse_num(tok: &str) -> Result<f64> {
    match tok {
        "inf" | "+inf" | "infinity" | "+infinity" => Ok(f64::INFINITY),
        "-inf" | "-infinity" => Ok(f64::NEG_INFINITY),
        _ => tok
            .parse::<f64>()
            .map_err(|_| Error::Invalid(format!("bad number {tok:?} in LP text"))),
    }
}

fn is_number(tok: &str) -> bool {
    parse_num(tok).is_ok()
}

fn parse_sense(tok: &str) -> Option<Sense> {
    match tok {
        "<=" | "=<" | "<" => Some(Sense::Le),
        ">=" | "=>" | ">" => Some(Sense::Ge),
        "=" => Some(Sense::Eq),
        _ => None,
    }
}

/// Parses LP text written by [`LinearModel::to_lp`] (and the common subset
/// of the format it uses: labelled rows that may wrap, two-sided bounds,
/// `Binaries` and `Generals`).
pub fn parse_lp(text: &str) -> Result<LinearModel> {
    let mut model = LinearModel::new("");
    let mut section = Section::None;
    let mut pending: Vec<String> = Vec::new();
    let var_id = |model: &mut LinearModel, name: &str| -> usize {
        match model.var(name) {
            Some(i) => i,
            None => model.continuous(name, 0.0, f64::INFINITY),
        }
    };

    // Rows are collected as token lists, then interpreted per section.
    let mut rows: Vec<(Section, Vec<String>)> = Vec::new();
    let flush = |section: Section, pending: &mut Vec<String>, rows: &mut Vec<(Section, Vec<String>)>| {
        if !pending.is_empty() {
            rows.push((section, core::mem::take(pending)));
        }
    };
    for raw in text.lines() {
        let line = raw.split('\\').next().unwrap_or("").trim();
        if raw.trim_start().starts_with('\\') {
            if model.name.is_empty() {
                model.name = raw.trim_start()[1..].trim().to_string();
            }
            continue;
        }
        if line.is_empty() {
            continue;
        }
        let lower = line.to_ascii_lowercase();
        let next = match lower.as_str() {
            "minimize" | "minimise" | "min" => Some(Section::Objective),
            "subject to" | "such that" | "st" | "s.t." => Some(Section::Constraints),
            "bounds" => Some(Section::Bounds),
            "binaries" | "binary" | "bin" => Some(Section::Binaries),
            "generals" | "general" | "gen" => Some(Section::Generals),
            "end" => Some(Section::None),
            _ => None,
        };
        if let Some(s) = next {
            flush(section, &mut pending, &mut rows);
            section = s;
            continue;
        }
        let starts_row = line.split_whitespace().next().is_some_and(|t| t.ends_with(':'));
        match section {
            Section::Objective | Section::Constraints => {
                if starts_row {
                    flush(section, &mut pending, &mut rows);
                }
                pending.extend(line.split_whitespace().map(String::from));
            }
            Section::Bounds | Section::Binaries | Section::Generals => {
                flush(section, &mut pending, &mut rows);
                rows.push((section, line.split_whitespace().map(String::from).collect()));
            }
            Section::None => return Err(Error::Invalid(format!("text outside any section: {line:?}"))),
        }
    }
    flush(section, &mut pending, &mut rows);

    for (section, toks) in rows {
        match section {
            Section::Objective | Section::Constraints => {
                let (name, body) = match toks.first() {
                    Some(t) if t.ends_with(':') => (t.trim_end_matches(':').to_string(), &toks[1..]),
                    _ => (format!("r{}", model.constraints.len()), &toks[..]),
                };
                let mut terms: Vec<(usize, f64)> = Vec::new();
                let mut sign = 1.0;
                let mut coef: Option<f64> = None;
                let mut bound = None;
                let mut i = 0;
                while i < body.len() {
                    let t = body[i].as_str();
                    if let Some(s) = parse_sense(t) {
                        let rhs = body.get(i + 1).ok_or_else(|| Error::Invalid(format!("row {name} lacks a right-hand side")))?;
                        bound = Some((s, parse_num(rhs)?));
                        break;
                    }
                    match t {
                        "+" => sign = 1.0,
                        "-" => sign = -1.0,
                        _ if is_number(t) => coef = Some(parse_num(t)?),
                        _ => {
                            if t == "0" {
                                i += 1;
                                continue;
                            }
                            let id = var_id(&mut model, t);
                            terms.push((id, sign * coef.unwrap_or(1.0)));
                            sign = 1.0;
                            coef = None;
                        }
                    }
                    i += 1;
                }
                if section == Section::Objective {
                    model.objective = terms;
                } else {
                    let (sense, rhs) = bound.ok_or_else(|| Error::Invalid(format!("row {name} has no sense")))?;
                    model.add_constraint(&name, terms, sense, rhs);
                }
            }
            Section::Bounds => match toks.as_slice() {
                [l, a, v, b, u] if parse_sense(a) == Some(Sense::Le) && parse_sense(b) == Some(Sense::Le) => {
                    let id = var_id(&mut model, v);
                    model.vars[id].lower = parse_num(l)?;
                    model.vars[id].upper = parse_num(u)?;
                }
                [v, s, x] => {
                    let id = var_id(&mut model, v);
                    let x = parse_num(x)?;
                    match parse_sense(s) {
                        Some(Sense::Ge) => model.vars[id].lower = x,
                        Some(Sense::Le) => model.vars[id].upper = x,
                        Some(Sense::Eq) => {
                            model.vars[id].lower = x;
                            model.vars[id].upper = x;
                        }
                        None => return Err(Error::Invalid(format!("bad bound {toks:?}"))),
                    }
                }
                [v, free] if free.eq_ignore_ascii_case("free") => {
                    let id = var_id(&mut model, v);
                    model.vars[id].lower = f64::NEG_INFINITY;
                }
                _ => return Err(Error::Invalid(format!("bad bound {toks:?}"))),
            },
            Section::Binaries | Section::Generals => {
                for v in toks {
                    let id = var_id(&mut model, &v);
                    if section == Section::Binaries {
                        model.vars[id].kind = VarKind::Binary;
                        model.vars[id].lower = 0.0;
                        model.vars[id].upper = 1.0;
                    } else {
                        model.vars[id].kind = VarKind::Integer;
                    }
                }
            }
            Section::None => {}
        }
    }
    Ok(model)
}

/// True when `a` and `b` describe the same model up to variable order.
pub fn equivalent(a: &LinearModel, b: &LinearModel) -> bool {
    if a.vars.len() != b.vars.len() || a.constraints.len() != b.constraints.len() {
        return false;
    }
    for v in &a.vars {
        match b.var(&v.name).map(|i| &b.vars[i]) {
            Some(w) if w.kind == v.kind && w.lower == v.lower && w.upper == v.upper => {}
            _ => return false,
        }
    }
    let canon = |m: &LinearModel, terms: &[(usize, f64)]| -> BTreeMap<String, u64> {
        terms.iter().map(|&(i, c)| (m.vars[i].name.clone(), c.to_bits())).collect()
    };
    if canon(a, &a.objective) != canon(b, &b.objective) {
        return false;
    }
    a.constraints.iter().zip(&b.constraints).all(|(x, y)| {
        x.name == y.name && x.sense == y.sense && x.rhs == y.rhs && canon(a, &x.terms) == canon(b, &y.terms)
    })
}
