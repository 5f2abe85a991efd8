//! Exact mixed-fleet feeder routing MILP: model construction, LP and fixed
//! MPS writers, and a residual check of solutions against every row.
//!
//! Naming contract. Vehicles are numbered `k = 0..` type by type, each type
//! contributing `min(max_count, max(n, 1))` vehicles. Variables:
//!
//! | name          | meaning                                   |
//! |---------------|-------------------------------------------|
//! | `x_k_i_j`     | vehicle `k` drives arc `(i, j)`, binary    |
//! | `B_k_i`       | service start of `k` at vertex `i`         |
//! | `Q_k_i`       | load of `k` after serving `i`              |
//! | `E_k_i`       | state of charge of EV `k` on arrival at `i`|
//! | `tau_k_s`     | charging time of EV `k` at dummy `s`       |
//! | `v_s`         | dummy charger `s` is used                  |
//!
//! Rows are named `eqN_<indices>`; the text before the first `_` is the
//! family reported by [`validate_solution`]. Besides the numbered families
//! there are `chflow` (flow conservation at charger dummies), `chcap`
//! (state of charge after a charge stays below the battery capacity) and
//! `prec` (each dropoff starts at least the direct ride after its pickup).
//! The load at the start depot is fixed to 0.
//! Variable bounds report under `eq18` (load), `eq21` (pickup and dropoff
//! windows), `depot` (depot windows), `eq23`, `eq24`, `eq33`, `eq34`,
//! `eq35` and `eq36`.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::ExportError;
use crate::model::*;
use crate::preprocess::{charger_infeasible_pairs, preprocess};
use crate::routesched::SolutionDump;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sense {
    Le,
    Ge,
    Eq,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Var {
    pub name: String,
    pub lb: f64,
    pub ub: f64,
    pub binary: bool,
    /// Family under which bound violations are reported.
    pub family: &'static str,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Row {
    pub name: String,
    pub terms: Vec<(usize, f64)>,
    pub sense: Sense,
    pub rhs: f64,
}

impl Row {
    pub fn family(&self) -> &str {
        self.name.split('_').next().unwrap_or(&self.name)
    }

    pub fn lhs(&self, values: &[f64]) -> f64 {
        self.terms.iter().map(|&(v, a)| a * values[v]).sum()
    }

    /// Amount by which `values` violate the row, 0 when satisfied.
    pub fn violation(&self, values: &[f64]) -> f64 {
        let lhs = self.lhs(values);
        match self.sense {
            Sense::Le => (lhs - self.rhs).max(0.0),
            Sense::Ge => (self.rhs - lhs).max(0.0),
            Sense::Eq => (lhs - self.rhs).abs(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExportOptions {
    /// Add the symmetry-breaking, unused-vehicle and charger-pair cuts.
    pub valid_inequalities: bool,
}

impl Default for ExportOptions {
    fn default() -> Self {
        Self { valid_inequalities: true }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExportFormat {
    Lp,
    Mps,
}

impl FromStr for ExportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "lp" => Ok(Self::Lp),
            "mps" => Ok(Self::Mps),
            other => Err(format!("unknown model format `{other}` (expected lp or mps)")),
        }
    }
}

/// Vehicle slot of the model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Slot {
    pub vehicle_type: usize,
    pub index: usize,
}

#[derive(Clone, Debug)]
pub struct MilpModel {
    pub vars: Vec<Var>,
    /// Objective coefficients, minimized.
    pub objective: Vec<(usize, f64)>,
    pub rows: Vec<Row>,
    pub vehicles: Vec<Slot>,
    /// The preprocessed instance the model was built from.
    pub instance: Instance,
    x: HashMap<(usize, VertexId, VertexId), usize>,
    b: Vec<Vec<usize>>,
    q: Vec<Vec<usize>>,
    e: Vec<Option<Vec<usize>>>,
    tau: Vec<Option<Vec<usize>>>,
    v: Vec<usize>,
}

impl MilpModel {
    pub fn n_binaries(&self) -> usize {
        self.vars.iter().filter(|v| v.binary).count()
    }

    pub fn var_index(&self, name: &str) -> Option<usize> {
        self.vars.iter().position(|v| v.name == name)
    }

    pub fn row(&self, name: &str) -> Option<&Row> {
        self.rows.iter().find(|r| r.name == name)
    }

    pub fn objective_value(&self, values: &[f64]) -> f64 {
        self.objective.iter().map(|&(v, c)| c * values[v]).sum()
    }

    pub fn families(&self) -> Vec<String> {
        let mut out: Vec<String> = self.rows.iter().map(|r| r.family().to_string()).collect();
        out.extend(self.vars.iter().map(|v| v.family.to_string()));
        out.sort();
        out.dedup();
        out
    }

    /// Largest violation per family of rows and bounds.
    pub fn residuals(&self, values: &[f64]) -> BTreeMap<String, f64> {
        let mut out: BTreeMap<String, f64> = self.families().into_iter().map(|f| (f, 0.0)).collect();
        let mut bump = |fam: &str, v: f64| {
            let slot = out.entry(fam.to_string()).or_insert(0.0);
            if v > *slot {
                *slot = v;
            }
        };
        for r in &self.rows {
            bump(r.family(), r.violation(values));
        }
        for (var, &x) in self.vars.iter().zip(values) {
            bump(var.family, (var.lb - x).max(x - var.ub).max(0.0));
            if var.binary {
                bump("eq34", (x - x.round()).abs());
            }
        }
        out
    }

    fn add_var(&mut self, name: String, lb: f64, ub: f64, binary: bool, family: &'static str) -> usize {
        self.vars.push(Var { name, lb, ub, binary, family });
        self.vars.len() - 1
    }

    fn add_row(&mut self, name: String, terms: Vec<(usize, f64)>, sense: Sense, rhs: f64) {
        debug_assert!(!terms.is_empty(), "empty row {name}");
        self.rows.push(Row { name, terms, sense, rhs });
    }

    fn x(&self, k: usize, i: VertexId, j: VertexId) -> Option<usize> {
        self.x.get(&(k, i, j)).copied()
    }

    fn out_arcs(&self, k: usize, i: VertexId) -> Vec<usize> {
        let nv = self.instance.vertices.len();
        (0..nv).filter_map(|j| self.x(k, i, j)).collect()
    }

    fn in_arcs(&self, k: usize, j: VertexId) -> Vec<usize> {
        let nv = self.instance.vertices.len();
        (0..nv).filter_map(|i| self.x(k, i, j)).collect()
    }

    /// CPLEX LP text.
    pub fn to_lp(&self) -> String {
        let mut out = String::new();
        out.push_str("\\ mixed-fleet feeder routing\n");
        let _ = writeln!(out, "\\ {} variables, {} binaries, {} rows", self.vars.len(), self.n_binaries(), self.rows.len());
        out.push_str("Minimize\n");
        write_expr(&mut out, " obj:", &self.objective, &self.vars);
        out.push('\n');
        out.push_str("Subject To\n");
        for r in &self.rows {
            write_expr(&mut out, &format!(" {}:", r.name), &r.terms, &self.vars);
            let op = match r.sense {
                Sense::Le => "<=",
                Sense::Ge => ">=",
                Sense::Eq => "=",
            };
            let _ = writeln!(out, " {op} {}", num(r.rhs));
        }
        out.push_str("Bounds\n");
        for v in self.vars.iter().filter(|v| !v.binary) {
            if v.lb == v.ub {
                let _ = writeln!(out, " {} = {}", v.name, num(v.lb));
            } else if v.ub.is_finite() {
                let _ = writeln!(out, " {} <= {} <= {}", num_or_inf(v.lb), v.name, num(v.ub));
            } else if v.lb != 0.0 {
                let _ = writeln!(out, " {} >= {}", v.name, num_or_inf(v.lb));
            }
        }
        out.push_str("Binaries\n");
        let mut line = String::new();
        for v in self.vars.iter().filter(|v| v.binary) {
            if line.len() + v.name.len() + 1 > LINE_WIDTH {
                out.push_str(&line);
                out.push('\n');
                line.clear();
            }
            line.push(' ');
            line.push_str(&v.name);
        }
        if !line.is_empty() {
            out.push_str(&line);
            out.push('\n');
        }
        out.push_str("End\n");
        out
    }

    /// Fixed-form MPS. Names are replaced by `X0000001`-style codes; the
    /// header comments map codes back to model names.
    pub fn to_mps(&self) -> String {
        let col = |i: usize| format!("X{:07}", i + 1);
        let row = |i: usize| format!("R{:07}", i + 1);
        let mut out = String::new();
        out.push_str("* mixed-fleet feeder routing\n");
        for (i, v) in self.vars.iter().enumerate() {
            let _ = writeln!(out, "* {} {}", col(i), v.name);
        }
        for (i, r) in self.rows.iter().enumerate() {
            let _ = writeln!(out, "* {} {}", row(i), r.name);
        }
        out.push_str("NAME          FSMFRP\n");
        out.push_str("ROWS\n");
        out.push_str(" N  COST\n");
        for (i, r) in self.rows.iter().enumerate() {
            let t = match r.sense {
                Sense::Le => "L",
                Sense::Ge => "G",
                Sense::Eq => "E",
            };
            let _ = writeln!(out, " {t:<2} {}", row(i));
        }
        let mut columns: Vec<Vec<(String, f64)>> = vec![Vec::new(); self.vars.len()];
        for &(v, c) in &self.objective {
            columns[v].push(("COST".to_string(), c));
        }
        for (i, r) in self.rows.iter().enumerate() {
            for &(v, a) in &r.terms {
                columns[v].push((row(i), a));
            }
        }
        out.push_str("COLUMNS\n");
        let mut in_int = false;
        let mut marker = 0;
        for (i, entries) in columns.iter().enumerate() {
            let binary = self.vars[i].binary;
            if binary != in_int {
                let tag = if binary { "'INTORG'" } else { "'INTEND'" };
                let _ = writeln!(out, "    M{marker:07}  'MARKER'                 {tag}");
                marker += 1;
                in_int = binary;
            }
            let zero = [("COST".to_string(), 0.0)];
            let entries: &[(String, f64)] = if entries.is_empty() { &zero } else { entries };
            for pair in entries.chunks(2) {
                let mut line = format!("    {:<8}  {:<8}  {:>12}", col(i), pair[0].0, mps_num(pair[0].1));
                if let Some((r, a)) = pair.get(1) {
                    let _ = write!(line, "   {:<8}  {:>12}", r, mps_num(*a));
                }
                out.push_str(&line);
                out.push('\n');
            }
        }
        if in_int {
            let _ = writeln!(out, "    M{marker:07}  'MARKER'                 'INTEND'");
        }
        out.push_str("RHS\n");
        for (i, r) in self.rows.iter().enumerate() {
            if r.rhs != 0.0 {
                let _ = writeln!(out, "    RHS       {:<8}  {:>12}", row(i), mps_num(r.rhs));
            }
        }
        out.push_str("BOUNDS\n");
        for (i, v) in self.vars.iter().enumerate() {
            let c = col(i);
            if v.binary {
                let _ = writeln!(out, " UP BND       {c:<8}  {:>12}", mps_num(1.0));
                continue;
            }
            if v.lb == v.ub {
                let _ = writeln!(out, " FX BND       {c:<8}  {:>12}", mps_num(v.lb));
                continue;
            }
            if v.lb == f64::NEG_INFINITY {
                let _ = writeln!(out, " MI BND       {c}");
            } else if v.lb != 0.0 {
                let _ = writeln!(out, " LO BND       {c:<8}  {:>12}", mps_num(v.lb));
            }
            if v.ub.is_finite() {
                let _ = writeln!(out, " UP BND       {c:<8}  {:>12}", mps_num(v.ub));
            }
        }
        out.push_str("ENDATA\n");
        out
    }
}

const LINE_WIDTH: usize = 100;

fn num(v: f64) -> String {
    if v == v.trunc() && v.abs() < 1e15 {
        format!("{}", v as i64)
    } else {
        format!("{v:?}")
    }
}

fn num_or_inf(v: f64) -> String {
    if v == f64::NEG_INFINITY {
        "-inf".into()
    } else {
        num(v)
    }
}

/// Number text of at most 12 characters.
fn mps_num(v: f64) -> String {
    let s = num(v);
    if s.len() <= 12 {
        return s;
    }
    let fixed = (0..=11).rev().map(|p| format!("{v:.p$}")).find(|s| s.len() <= 12);
    let sci = (0..=10).rev().map(|p| format!("{v:.p$e}")).find(|s| s.len() <= 12);
    let err = |s: &Option<String>| s.as_ref().and_then(|s| s.parse::<f64>().ok()).map_or(f64::INFINITY, |x| (x - v).abs());
    if err(&fixed) <= err(&sci) { fixed } else { sci }.unwrap_or_else(|| format!("{v:.0e}"))
}

fn write_expr(out: &mut String, head: &str, terms: &[(usize, f64)], vars: &[Var]) {
    let mut line = head.to_string();
    if terms.is_empty() {
        line.push_str(" 0");
    }
    for (n, &(v, a)) in terms.iter().enumerate() {
        let sign = if a < 0.0 { "-" } else { "+" };
        let mag = a.abs();
        let tok = if mag == 1.0 { format!("{sign} {}", vars[v].name) } else { format!("{sign} {} {}", num(mag), vars[v].name) };
        let tok = if n == 0 && sign == "+" { tok[2..].to_string() } else { tok };
        if line.len() + tok.len() + 1 > LINE_WIDTH {
            out.push_str(&line);
            out.push('\n');
            line = "   ".to_string();
        }
        line.push(' ');
        line.push_str(&tok);
    }
    out.push_str(&line);
}

/// Vehicles per type: the fleet bound, but never more than one per request.
pub fn vehicle_slots(inst: &Instance) -> Vec<Slot> {
    let n = inst.n_requests().max(1);
    inst.vehicle_types
        .iter()
        .enumerate()
        .flat_map(|(t, vt)| (0..vt.max_count.min(n)).map(move |index| Slot { vehicle_type: t, index }))
        .collect()
}

/// Builds the model on a preprocessed copy of `inst`.
pub fn build_model(inst: &Instance, pi: f64, gamma: Option<f64>, opts: ExportOptions) -> Result<MilpModel, ExportError> {
    if pi > 0.0 && gamma.is_none() {
        return Err(ExportError::MissingGamma);
    }
    let inst = preprocess(inst)?;
    let nv = inst.vertices.len();
    let n = inst.n_requests();
    let start = inst.depot_start();
    let end = inst.depot_end();
    let pickups: Vec<VertexId> = (0..n).map(|r| inst.pickup(r)).collect();
    let requests_v: Vec<VertexId> = (1..=2 * n).collect();
    let dummies: Vec<VertexId> = (2 * n + 1..end).collect();
    let (m1, m2, m3) = inst.big_ms();
    let vehicles = vehicle_slots(&inst);
    let nk = vehicles.len();
    let vt_of = |k: usize| &inst.vehicle_types[vehicles[k].vehicle_type];
    let electric: Vec<usize> = (0..nk).filter(|&k| vt_of(k).is_electric()).collect();

    let mut m = MilpModel {
        vars: Vec::new(),
        objective: Vec::new(),
        rows: Vec::new(),
        vehicles: vehicles.clone(),
        instance: inst.clone(),
        x: HashMap::new(),
        b: Vec::new(),
        q: Vec::new(),
        e: Vec::new(),
        tau: Vec::new(),
        v: Vec::new(),
    };

    for k in 0..nk {
        for i in 0..nv {
            for j in 0..nv {
                if inst.arc_allowed(i, j) {
                    let id = m.add_var(format!("x_{k}_{i}_{j}"), 0.0, 1.0, true, "eq34");
                    m.x.insert((k, i, j), id);
                }
            }
        }
    }
    for k in 0..nk {
        let vt = vt_of(k);
        let mut bs = Vec::with_capacity(nv);
        let mut qs = Vec::with_capacity(nv);
        for i in 0..nv {
            let vx = &inst.vertices[i];
            let (lb, ub, fam) = if inst.is_charger(i) {
                (0.0, m2, "eq35")
            } else if i == start || i == end {
                (vx.tw.earliest as f64, vx.tw.latest as f64, "depot")
            } else {
                (vx.tw.earliest as f64, vx.tw.latest as f64, "eq21")
            };
            bs.push(m.add_var(format!("B_{k}_{i}"), lb.max(0.0), ub, false, fam));
        }
        for i in 0..nv {
            let ub = if i == start { 0.0 } else { vt.capacity as f64 };
            qs.push(m.add_var(format!("Q_{k}_{i}"), 0.0, ub, false, "eq18"));
        }
        m.b.push(bs);
        m.q.push(qs);
        if vt.is_electric() {
            let es = (0..nv)
                .map(|i| {
                    if i == start {
                        m.add_var(format!("E_{k}_{i}"), vt.e_init, vt.e_init, false, "eq23")
                    } else {
                        m.add_var(format!("E_{k}_{i}"), vt.e_min, vt.e_max, false, "eq24")
                    }
                })
                .collect();
            let ts = dummies.iter().map(|&s| m.add_var(format!("tau_{k}_{s}"), 0.0, f64::INFINITY, false, "eq36")).collect();
            m.e.push(Some(es));
            m.tau.push(Some(ts));
        } else {
            m.e.push(None);
            m.tau.push(None);
        }
    }
    for &s in &dummies {
        let id = m.add_var(format!("v_{s}"), 0.0, 1.0, false, "eq33");
        m.v.push(id);
    }

    // objective: energy cost of every arc plus fixed cost of every used vehicle
    let mut obj = Vec::new();
    for k in 0..nk {
        let vt = vt_of(k);
        for i in 0..nv {
            for j in 0..nv {
                if let Some(x) = m.x(k, i, j) {
                    let mut c = vt.cost_per_m() * inst.dist_m(i, j) as f64;
                    if i == start && j != end {
                        c += vt.fixed_cost();
                    }
                    if c != 0.0 {
                        obj.push((x, c));
                    }
                }
            }
        }
    }
    m.objective = obj;

    if pi > 0.0 {
        let cap = (1.0 - pi) * gamma.unwrap_or(0.0);
        let mut terms = Vec::new();
        for k in 0..nk {
            let vt = vt_of(k);
            if vt.is_electric() {
                continue;
            }
            for i in 0..nv {
                for j in 0..nv {
                    if let Some(x) = m.x(k, i, j) {
                        let c = vt.co2_per_m() * inst.dist_m(i, j) as f64;
                        if c != 0.0 {
                            terms.push((x, c));
                        }
                    }
                }
            }
        }
        if !terms.is_empty() {
            m.add_row("eq9".into(), terms, Sense::Le, cap);
        }
    }

    for k in 0..nk {
        let out = m.out_arcs(k, start).into_iter().map(|x| (x, 1.0)).collect();
        m.add_row(format!("eq10_{k}_out"), out, Sense::Eq, 1.0);
        let inn = m.in_arcs(k, end).into_iter().map(|x| (x, 1.0)).collect();
        m.add_row(format!("eq10_{k}_in"), inn, Sense::Eq, 1.0);
    }
    for &i in &pickups {
        let terms: Vec<(usize, f64)> = (0..nk).flat_map(|k| m.out_arcs(k, i)).map(|x| (x, 1.0)).collect();
        m.add_row(format!("eq11_{i}"), terms, Sense::Eq, 1.0);
    }
    for k in 0..nk {
        let electric_k = vt_of(k).is_electric();
        for &s in &dummies {
            let out: Vec<(usize, f64)> = m.out_arcs(k, s).into_iter().map(|x| (x, 1.0)).collect();
            if out.is_empty() {
                continue;
            }
            if electric_k {
                m.add_row(format!("eq12_{k}_{s}"), out, Sense::Le, 1.0);
            } else {
                m.add_row(format!("eq13_{k}_{s}"), out, Sense::Eq, 0.0);
            }
        }
    }
    for k in 0..nk {
        for r in 0..n {
            let p = inst.pickup(r);
            let d = inst.dropoff(r);
            let mut terms: Vec<(usize, f64)> = m.out_arcs(k, p).into_iter().map(|x| (x, 1.0)).collect();
            terms.extend(m.out_arcs(k, d).into_iter().map(|x| (x, -1.0)));
            m.add_row(format!("eq14_{k}_{p}"), terms, Sense::Eq, 0.0);
        }
        for &i in requests_v.iter().chain(&dummies) {
            let mut terms: Vec<(usize, f64)> = m.in_arcs(k, i).into_iter().map(|x| (x, 1.0)).collect();
            terms.extend(m.out_arcs(k, i).into_iter().map(|x| (x, -1.0)));
            if terms.is_empty() {
                continue;
            }
            let fam = if inst.is_charger(i) { "chflow" } else { "eq15" };
            m.add_row(format!("{fam}_{k}_{i}"), terms, Sense::Eq, 0.0);
        }
    }

    for k in 0..nk {
        let vt = vt_of(k).clone();
        for i in 0..nv {
            for j in 0..nv {
                let Some(x) = m.x(k, i, j) else { continue };
                let (qi, qj) = (m.q[k][i], m.q[k][j]);
                let load_j = inst.vertices[j].load as f64;
                // Q_j - Q_i - M1 x >= q_j - M1 and Q_j - Q_i + M1 x <= q_j + M1
                m.add_row(format!("eq16_{k}_{i}_{j}"), vec![(qj, 1.0), (qi, -1.0), (x, -m1)], Sense::Ge, load_j - m1);
                m.add_row(format!("eq17_{k}_{i}_{j}"), vec![(qj, 1.0), (qi, -1.0), (x, m1)], Sense::Le, load_j + m1);

                let (bi, bj) = (m.b[k][i], m.b[k][j]);
                let u_i = inst.vertices[i].service as f64;
                let t_ij = inst.time(i, j) as f64;
                let is_s = inst.is_charger(i);
                if !is_s {
                    m.add_row(format!("eq19_{k}_{i}_{j}"), vec![(bj, 1.0), (bi, -1.0), (x, -m2)], Sense::Ge, u_i + t_ij - m2);
                } else if vt.is_electric() {
                    let tau = m.tau[k].as_ref().expect("electric")[i - dummies[0]];
                    m.add_row(
                        format!("eq20_{k}_{i}_{j}"),
                        vec![(bj, 1.0), (bi, -1.0), (tau, -1.0), (x, -m2)],
                        Sense::Ge,
                        u_i + t_ij - m2,
                    );
                }

                if let Some(es) = m.e[k].clone() {
                    let use_ = vt.energy_for(inst.dist_m(i, j));
                    let (ei, ej) = (es[i], es[j]);
                    if !is_s {
                        m.add_row(format!("eq25_{k}_{i}_{j}"), vec![(ej, 1.0), (ei, -1.0), (x, -m3)], Sense::Ge, -use_ - m3);
                        m.add_row(format!("eq26_{k}_{i}_{j}"), vec![(ej, 1.0), (ei, -1.0), (x, m3)], Sense::Le, -use_ + m3);
                    } else {
                        let tau = m.tau[k].as_ref().expect("electric")[i - dummies[0]];
                        let alpha = inst.charger_type_of(charger_of(&inst, i)).power / 3600.0;
                        m.add_row(
                            format!("eq27_{k}_{i}_{j}"),
                            vec![(ej, 1.0), (ei, -1.0), (tau, -alpha), (x, -m3)],
                            Sense::Ge,
                            -use_ - m3,
                        );
                        m.add_row(
                            format!("eq28_{k}_{i}_{j}"),
                            vec![(ej, 1.0), (ei, -1.0), (tau, -alpha), (x, m3)],
                            Sense::Le,
                            -use_ + m3,
                        );
                    }
                }
            }
        }
        for r in 0..n {
            let p = inst.pickup(r);
            let d = inst.dropoff(r);
            let l = inst.requests[r].max_ride_time as f64;
            let u_p = inst.vertices[p].service as f64;
            m.add_row(format!("eq22_{k}_{p}"), vec![(m.b[k][d], 1.0), (m.b[k][p], -1.0)], Sense::Le, l + u_p);
            let direct = inst.time(p, d) as f64;
            m.add_row(format!("prec_{k}_{p}"), vec![(m.b[k][d], 1.0), (m.b[k][p], -1.0)], Sense::Ge, u_p + direct);
        }
        if let (Some(es), Some(ts)) = (m.e[k].clone(), m.tau[k].clone()) {
            for (si, &s) in dummies.iter().enumerate() {
                let alpha = inst.charger_type_of(charger_of(&inst, s)).power / 3600.0;
                m.add_row(format!("chcap_{k}_{s}"), vec![(es[s], 1.0), (ts[si], alpha)], Sense::Le, vt.e_max);
            }
        }
    }

    for (si, &s) in dummies.iter().enumerate() {
        let mut terms = vec![(m.v[si], 1.0)];
        for &k in &electric {
            terms.extend(m.out_arcs(k, s).into_iter().map(|x| (x, -1.0)));
        }
        m.add_row(format!("eq29_{s}"), terms, Sense::Eq, 0.0);
    }
    for c in &inst.chargers {
        for (a, &h) in c.dummies.iter().enumerate() {
            for &l in &c.dummies[a + 1..] {
                let (vh, vl) = (m.v[h - dummies[0]], m.v[l - dummies[0]]);
                m.add_row(format!("eq30_{h}_{l}"), vec![(vh, 1.0), (vl, -1.0)], Sense::Le, 0.0);
                let mut terms = Vec::new();
                for &k in &electric {
                    terms.push((m.b[k][h], 1.0));
                    terms.push((m.b[k][l], -1.0));
                    terms.push((m.tau[k].as_ref().expect("electric")[l - dummies[0]], -1.0));
                }
                terms.push((vh, -m2));
                terms.push((vl, -m2));
                m.add_row(format!("eq31_{h}_{l}"), terms, Sense::Ge, -2.0 * m2);
            }
        }
    }
    for &k in &electric {
        for (si, &s) in dummies.iter().enumerate() {
            let mut terms = vec![(m.tau[k].as_ref().expect("electric")[si], 1.0), (m.b[k][s], 1.0)];
            terms.extend(m.out_arcs(k, s).into_iter().map(|x| (x, -m2)));
            m.add_row(format!("eq32_{k}_{s}"), terms, Sense::Le, 0.0);
        }
    }

    if opts.valid_inequalities {
        let leaves = |m: &MilpModel, k: usize| -> Vec<usize> {
            (0..nv).filter(|&j| j != end).filter_map(|j| m.x(k, start, j)).collect()
        };
        for k in 0..nk.saturating_sub(1) {
            if vehicles[k].vehicle_type != vehicles[k + 1].vehicle_type {
                continue;
            }
            let mut terms: Vec<(usize, f64)> = leaves(&m, k).into_iter().map(|x| (x, 1.0)).collect();
            terms.extend(leaves(&m, k + 1).into_iter().map(|x| (x, -1.0)));
            if !terms.is_empty() {
                m.add_row(format!("eq37_{k}"), terms, Sense::Ge, 0.0);
            }
        }
        let inner = |i: VertexId| i != start && i != end;
        let m0 = (0..nv).flat_map(|i| (0..nv).map(move |j| (i, j))).filter(|&(i, j)| inner(i) && inner(j) && inst.arc_allowed(i, j)).count() as f64;
        for k in 0..nk {
            let mut terms: Vec<(usize, f64)> = leaves(&m, k).into_iter().map(|x| (x, m0)).collect();
            for i in (0..nv).filter(|&i| inner(i)) {
                for j in (0..nv).filter(|&j| inner(j)) {
                    if let Some(x) = m.x(k, i, j) {
                        terms.push((x, -1.0));
                    }
                }
            }
            if !terms.is_empty() {
                m.add_row(format!("eq38_{k}"), terms, Sense::Ge, 0.0);
            }
        }
        if !electric.is_empty() {
            for &(i, j, s) in &charger_infeasible_pairs(&inst).triples {
                let arcs = [(inst.dropoff(i), s), (s, inst.pickup(j)), (inst.dropoff(j), s), (s, inst.pickup(i))];
                let terms: Vec<(usize, f64)> =
                    electric.iter().flat_map(|&k| arcs.iter().filter_map(|&(a, b)| m.x(k, a, b)).collect::<Vec<_>>()).map(|x| (x, 1.0)).collect();
                if terms.len() > 1 {
                    m.add_row(format!("eq39_{i}_{j}_{s}"), terms, Sense::Le, 1.0);
                }
            }
        }
    }
    Ok(m)
}

fn charger_of(inst: &Instance, dummy: VertexId) -> usize {
    inst.vertices[dummy].physical_charger.unwrap_or_else(|| {
        inst.chargers.iter().position(|c| c.dummies.contains(&dummy)).expect("dummy belongs to a charger")
    })
}

/// Model text of `inst` with all cuts.
pub fn export_milp(inst: &Instance, pi: f64, gamma: Option<f64>, format: ExportFormat) -> Result<String, ExportError> {
    let m = build_model(inst, pi, gamma, ExportOptions::default())?;
    Ok(match format {
        ExportFormat::Lp => m.to_lp(),
        ExportFormat::Mps => m.to_mps(),
    })
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ResidualReport {
    /// Largest violation per constraint family; 0 when satisfied.
    pub families: BTreeMap<String, f64>,
    pub objective: f64,
}

impl ResidualReport {
    pub fn max(&self) -> f64 {
        self.families.values().copied().fold(0.0, f64::max)
    }

    pub fn is_feasible(&self, tol: f64) -> bool {
        self.max() <= tol
    }

    pub fn violated(&self, tol: f64) -> Vec<&str> {
        self.families.iter().filter(|(_, &v)| v > tol).map(|(k, _)| k.as_str()).collect()
    }
}

/// Maps a solution onto the model variables. Vehicles not in the dump drive
/// straight from depot to depot; vertices a vehicle skips get values that
/// satisfy their bounds.
pub fn assign(model: &MilpModel, dump: &SolutionDump) -> (Vec<f64>, BTreeMap<String, f64>) {
    let inst = &model.instance;
    let n = inst.n_requests();
    let nv = inst.vertices.len();
    let start = inst.depot_start();
    let end = inst.depot_end();
    let first_dummy = 2 * n + 1;
    let mut values = vec![0.0; model.vars.len()];
    let mut extra: BTreeMap<String, f64> = [("arcs".to_string(), 0.0), ("fleet".to_string(), 0.0)].into_iter().collect();

    let mut routes_of: Vec<Option<usize>> = vec![None; model.vehicles.len()];
    let mut used_per_type: BTreeMap<usize, usize> = BTreeMap::new();
    for (ri, r) in dump.routes.iter().enumerate() {
        let slot = model.vehicles.iter().position(|s| s.vehicle_type == r.vehicle_type && s.index == r.vehicle_index);
        *used_per_type.entry(r.vehicle_type).or_default() += 1;
        match slot {
            Some(k) if routes_of[k].is_none() => routes_of[k] = Some(ri),
            _ => {
                let e = extra.get_mut("fleet").expect("present");
                *e += 1.0;
            }
        }
    }

    for k in 0..model.vehicles.len() {
        let vt = &inst.vehicle_types[model.vehicles[k].vehicle_type];
        // defaults for vertices the vehicle does not visit
        for i in 0..nv {
            let b = if inst.is_charger(i) {
                0.0
            } else if let Some(r) = inst.request_of(i) {
                let (bp, bd) = idle_pair(inst, r);
                if i == inst.pickup(r) {
                    bp
                } else {
                    bd
                }
            } else {
                inst.vertices[i].tw.earliest as f64
            };
            values[model.b[k][i]] = b;
            values[model.q[k][i]] = 0.0;
            if let Some(es) = &model.e[k] {
                values[es[i]] = if i == start { vt.e_init } else { vt.e_max };
            }
        }
        let Some(ri) = routes_of[k] else {
            if let Some(x) = model.x(k, start, end) {
                values[x] = 1.0;
            } else {
                *extra.get_mut("arcs").expect("present") += 1.0;
            }
            let b0 = inst.vertices[start].tw.earliest;
            values[model.b[k][end]] = (b0 + inst.vertices[start].service + inst.time(start, end)) as f64;
            if let Some(es) = &model.e[k] {
                values[es[end]] = vt.e_init - vt.energy_for(inst.dist_m(start, end));
            }
            continue;
        };
        let route = &dump.routes[ri];
        for w in route.visits.windows(2) {
            match model.x(k, w[0].vertex, w[1].vertex) {
                Some(x) => values[x] += 1.0,
                None => *extra.get_mut("arcs").expect("present") += 1.0,
            }
        }
        for v in &route.visits {
            values[model.b[k][v.vertex]] = v.begin as f64;
            values[model.q[k][v.vertex]] = v.load as f64;
            if let (Some(es), Some(soc)) = (&model.e[k], v.soc) {
                values[es[v.vertex]] = soc;
            }
        }
        if let Some(ts) = &model.tau[k] {
            for c in &route.charges {
                if c.dummy >= first_dummy && c.dummy < end {
                    values[ts[c.dummy - first_dummy]] += c.duration as f64;
                }
            }
        }
    }
    for (si, &v) in model.v.iter().enumerate() {
        let s = first_dummy + si;
        let used: f64 = (0..model.vehicles.len())
            .filter(|&k| model.e[k].is_some())
            .flat_map(|k| (0..nv).filter_map(move |j| model.x(k, s, j)))
            .map(|x| values[x])
            .sum();
        values[v] = used;
    }
    (values, extra)
}

/// Begin times for a request nobody serves that satisfy its windows, ride
/// limit and precedence.
fn idle_pair(inst: &Instance, r: RequestId) -> (f64, f64) {
    let (p, d) = (inst.pickup(r), inst.dropoff(r));
    let (pv, dv) = (&inst.vertices[p], &inst.vertices[d]);
    let bp = (dv.tw.earliest - pv.service - inst.requests[r].max_ride_time).clamp(pv.tw.earliest, pv.tw.latest.max(pv.tw.earliest));
    let bd = dv.tw.earliest.max(bp + pv.service + inst.time(p, d));
    (bp as f64, bd as f64)
}

/// Largest violation of every row family and bound for `dump`. Unserved
/// requests show up in `eq11`.
pub fn validate_solution(dump: &SolutionDump, inst: &Instance, pi: f64, gamma: Option<f64>) -> Result<ResidualReport, ExportError> {
    let model = build_model(inst, pi, gamma, ExportOptions { valid_inequalities: false })?;
    let (values, extra) = assign(&model, dump);
    let mut families = model.residuals(&values);
    families.extend(extra);
    Ok(ResidualReport { families, objective: model.objective_value(&values) })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mps_numbers_fit_the_field() {
        for v in [1.0, -2.5, 123456789012.0, 0.1 + 0.2, -1.0e-7 / 3.0, 9.87654321e20] {
            let s = mps_num(v);
            assert!(s.len() <= 12, "{s}");
            let back: f64 = s.parse().unwrap();
            assert!((back - v).abs() <= 1e-6 * v.abs().max(1.0), "{s} vs {v}");
        }
    }

    #[test]
    fn row_violation_by_sense() {
        let vals = [2.0, 3.0];
        let r = |sense| Row { name: "eq16_0_1_2".into(), terms: vec![(0, 1.0), (1, 1.0)], sense, rhs: 4.0 };
        assert_eq!(r(Sense::Le).violation(&vals), 1.0);
        assert_eq!(r(Sense::Ge).violation(&vals), 0.0);
        assert_eq!(r(Sense::Eq).violation(&vals), 1.0);
        assert_eq!(r(Sense::Eq).family(), "eq16");
    }
}
