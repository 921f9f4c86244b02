//! Dense two-phase tableau simplex with Bland's rule.
//!
//! The problem is rewritten in standard form `min c'x, A x = b, x >= 0`
//! (shifting and splitting variables, adding slacks), then solved with one
//! artificial per row. Artificial columns are kept in the tableau so the
//! final basis inverse is available for duals and Farkas certificates.

use crate::error::{Error, Result};

pub const FEAS_TOL: f64 = 1e-8;
pub const OPT_TOL: f64 = 1e-9;
const PIVOT_TOL: f64 = 1e-11;
pub const MAX_ITERATIONS: usize = 1_000_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Sense {
    Minimize,
    Maximize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ConstraintOp {
    Le,
    Eq,
    Ge,
}

#[derive(Clone, Debug)]
pub struct Constraint {
    pub coeffs: Vec<f64>,
    pub op: ConstraintOp,
    pub rhs: f64,
}

/// Dense linear program. Variables default to `x >= 0`.
#[derive(Clone, Debug)]
pub struct LinearProgram {
    sense: Sense,
    objective: Vec<f64>,
    constraints: Vec<Constraint>,
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl LinearProgram {
    pub fn new(sense: Sense, objective: Vec<f64>) -> Self {
        let n = objective.len();
        Self {
            sense,
            objective,
            constraints: Vec::new(),
            lower: vec![0.0; n],
            upper: vec![f64::INFINITY; n],
        }
    }

    pub fn n_vars(&self) -> usize {
        self.objective.len()
    }

    pub fn sense(&self) -> Sense {
        self.sense
    }

    pub fn objective(&self) -> &[f64] {
        &self.objective
    }

    pub fn constraints(&self) -> &[Constraint] {
        &self.constraints
    }

    pub fn bounds(&self, var: usize) -> (f64, f64) {
        (self.lower[var], self.upper[var])
    }

    pub fn add_constraint(&mut self, coeffs: Vec<f64>, op: ConstraintOp, rhs: f64) -> &mut Self {
        self.constraints.push(Constraint { coeffs, op, rhs });
        self
    }

    /// Adds a constraint given as sparse `(var, coeff)` pairs.
    pub fn add_sparse(&mut self, terms: &[(usize, f64)], op: ConstraintOp, rhs: f64) -> &mut Self {
        let mut coeffs = vec![0.0; self.n_vars()];
        for &(j, a) in terms {
            coeffs[j] += a;
        }
        self.add_constraint(coeffs, op, rhs)
    }

    pub fn set_bounds(&mut self, var: usize, lower: f64, upper: f64) -> &mut Self {
        self.lower[var] = lower;
        self.upper[var] = upper;
        self
    }

    pub fn set_free(&mut self, var: usize) -> &mut Self {
        self.set_bounds(var, f64::NEG_INFINITY, f64::INFINITY)
    }

    fn validate(&self) -> Result<()> {
        let n = self.n_vars();
        if self.objective.iter().any(|c| c.is_nan()) {
            return Err(Error::Lp("NaN in objective".into()));
        }
        for (i, c) in self.constraints.iter().enumerate() {
            if c.coeffs.len() != n {
                return Err(Error::Lp(format!(
                    "constraint {i} has {} coefficients, expected {n}",
                    c.coeffs.len()
                )));
            }
            if c.coeffs.iter().any(|a| !a.is_finite()) || !c.rhs.is_finite() {
                return Err(Error::Lp(format!("constraint {i} has non-finite data")));
            }
        }
        for j in 0..n {
            if self.lower[j].is_nan() || self.upper[j].is_nan() || self.lower[j] == f64::INFINITY {
                return Err(Error::Lp(format!("variable {j} has invalid bounds")));
            }
        }
        Ok(())
    }

    /// Largest violation of rows and bounds at `x`.
    pub fn infeasibility(&self, x: &[f64]) -> f64 {
        let mut worst: f64 = 0.0;
        for c in &self.constraints {
            let lhs: f64 = c.coeffs.iter().zip(x).map(|(a, v)| a * v).sum();
            let v = match c.op {
                ConstraintOp::Le => lhs - c.rhs,
                ConstraintOp::Ge => c.rhs - lhs,
                ConstraintOp::Eq => (lhs - c.rhs).abs(),
            };
            worst = worst.max(v);
        }
        for (j, &v) in x.iter().enumerate() {
            worst = worst.max(self.lower[j] - v).max(v - self.upper[j]);
        }
        worst
    }

    pub fn objective_value(&self, x: &[f64]) -> f64 {
        self.objective.iter().zip(x).map(|(c, v)| c * v).sum()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LpStatus {
    Optimal,
    Unbounded,
    Infeasible,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Certificate {
    /// Feasible direction that improves the objective without bound.
    Ray(Vec<f64>),
    /// Row multipliers `y` (sign convention: `>=` rows nonnegative, `<=` rows
    /// nonpositive) with `sum_r y_r (a_r x - b_r) < 0` on the whole variable box.
    Farkas(Vec<f64>),
}

#[derive(Clone, Debug)]
pub struct LpResult {
    pub status: LpStatus,
    /// Objective value; `+inf`/`-inf` for unbounded, NaN for infeasible.
    pub value: f64,
    pub solution: Option<Vec<f64>>,
    pub certificate: Option<Certificate>,
    /// Row duals at the optimum, same sign convention as Farkas multipliers
    /// for a minimization (negated for maximization).
    pub duals: Option<Vec<f64>>,
    /// Dual objective rebuilt from the row duals and the original data.
    pub dual_value: Option<f64>,
    pub iterations: usize,
}

impl LpResult {
    pub fn is_optimal(&self) -> bool {
        self.status == LpStatus::Optimal
    }
}

/// How an original variable is rebuilt from standard-form columns.
#[derive(Clone, Copy, Debug)]
enum VarMap {
    /// x = offset + col
    Shift { col: usize, offset: f64 },
    /// x = offset - col
    Reflect { col: usize, offset: f64 },
    /// x = pos - neg
    Split { pos: usize, neg: usize },
}

struct StandardForm {
    rows: Vec<Vec<f64>>,
    rhs: Vec<f64>,
    cost: Vec<f64>,
    cost_offset: f64,
    maps: Vec<VarMap>,
    /// +1/-1 factor applied to each original row.
    row_sign: Vec<f64>,
    n_orig_rows: usize,
}

fn standardize(lp: &LinearProgram) -> StandardForm {
    let n = lp.n_vars();
    let sign = if lp.sense == Sense::Maximize { -1.0 } else { 1.0 };
    let mut maps = Vec::with_capacity(n);
    let mut ncols = 0usize;
    let mut upper_rows: Vec<(usize, f64)> = Vec::new();
    for j in 0..n {
        let (l, u) = (lp.lower[j], lp.upper[j]);
        if l.is_finite() {
            maps.push(VarMap::Shift { col: ncols, offset: l });
            if u.is_finite() {
                upper_rows.push((ncols, u - l));
            }
            ncols += 1;
        } else if u.is_finite() {
            maps.push(VarMap::Reflect { col: ncols, offset: u });
            ncols += 1;
        } else {
            maps.push(VarMap::Split {
                pos: ncols,
                neg: ncols + 1,
            });
            ncols += 2;
        }
    }
    let n_slacks = lp.constraints.iter().filter(|c| c.op != ConstraintOp::Eq).count() + upper_rows.len();
    let total = ncols + n_slacks;

    let mut cost = vec![0.0; total];
    let mut cost_offset = 0.0;
    for (j, m) in maps.iter().enumerate() {
        let c = sign * lp.objective[j];
        match *m {
            VarMap::Shift { col, offset } => {
                cost[col] += c;
                cost_offset += c * offset;
            }
            VarMap::Reflect { col, offset } => {
                cost[col] -= c;
                cost_offset += c * offset;
            }
            VarMap::Split { pos, neg } => {
                cost[pos] += c;
                cost[neg] -= c;
            }
        }
    }

    let mut rows = Vec::new();
    let mut rhs = Vec::new();
    let mut row_sign = Vec::new();
    let mut slack = ncols;
    for c in &lp.constraints {
        let mut row = vec![0.0; total];
        let mut b = c.rhs;
        for (j, m) in maps.iter().enumerate() {
            let a = c.coeffs[j];
            if a == 0.0 {
                continue;
            }
            match *m {
                VarMap::Shift { col, offset } => {
                    row[col] += a;
                    b -= a * offset;
                }
                VarMap::Reflect { col, offset } => {
                    row[col] -= a;
                    b -= a * offset;
                }
                VarMap::Split { pos, neg } => {
                    row[pos] += a;
                    row[neg] -= a;
                }
            }
        }
        match c.op {
            ConstraintOp::Le => {
                row[slack] = 1.0;
                slack += 1;
            }
            ConstraintOp::Ge => {
                row[slack] = -1.0;
                slack += 1;
            }
            ConstraintOp::Eq => {}
        }
        let s = if b < 0.0 { -1.0 } else { 1.0 };
        if s < 0.0 {
            row.iter_mut().for_each(|v| *v = -*v);
            b = -b;
        }
        rows.push(row);
        rhs.push(b);
        row_sign.push(s);
    }
    let n_orig_rows = rows.len();
    for (col, width) in upper_rows {
        let mut row = vec![0.0; total];
        row[col] = 1.0;
        row[slack] = 1.0;
        slack += 1;
        rows.push(row);
        rhs.push(width);
        row_sign.push(1.0);
    }
    StandardForm {
        rows,
        rhs,
        cost,
        cost_offset,
        maps,
        row_sign,
        n_orig_rows,
    }
}

/// Tableau rows `B^{-1} [A | I | b]` with the artificial block in the middle.
struct Tableau {
    t: Vec<Vec<f64>>,
    basis: Vec<usize>,
    n_struct: usize,
    m: usize,
    iterations: usize,
}

enum PhaseOutcome {
    Optimal,
    Unbounded(usize),
}

impl Tableau {
    fn new(sf: &StandardForm) -> Self {
        let m = sf.rows.len();
        let n_struct = sf.cost.len();
        let width = n_struct + m + 1;
        let t = (0..m)
            .map(|r| {
                let mut row = vec![0.0; width];
                row[..n_struct].copy_from_slice(&sf.rows[r]);
                row[n_struct + r] = 1.0;
                row[width - 1] = sf.rhs[r];
                row
            })
            .collect();
        Self {
            t,
            basis: (0..m).map(|r| n_struct + r).collect(),
            n_struct,
            m,
            iterations: 0,
        }
    }

    fn rhs_col(&self) -> usize {
        self.n_struct + self.m
    }

    fn pivot(&mut self, row: usize, col: usize) {
        let p = self.t[row][col];
        let width = self.t[row].len();
        for k in 0..width {
            self.t[row][k] /= p;
        }
        self.t[row][col] = 1.0;
        let pivot_row = self.t[row].clone();
        for (r, tr) in self.t.iter_mut().enumerate() {
            if r == row {
                continue;
            }
            let f = tr[col];
            if f != 0.0 {
                for k in 0..width {
                    tr[k] -= f * pivot_row[k];
                }
                tr[col] = 0.0;
            }
        }
        self.basis[row] = col;
    }

    fn reduced_costs(&self, cost: &[f64]) -> Vec<f64> {
        let mut d = cost.to_vec();
        for (r, &bv) in self.basis.iter().enumerate() {
            let cb = cost[bv];
            if cb != 0.0 {
                for (dj, &a) in d.iter_mut().zip(&self.t[r]) {
                    *dj -= cb * a;
                }
            }
        }
        d
    }

    /// Runs Bland-rule pivots on `cost` (length `n_struct + m`); only
    /// structural columns may enter.
    fn optimize(&mut self, cost: &[f64]) -> Result<PhaseOutcome> {
        let rc = self.rhs_col();
        loop {
            if self.iterations >= MAX_ITERATIONS {
                return Err(Error::IterationLimit(MAX_ITERATIONS));
            }
            let d = self.reduced_costs(cost);
            let Some(enter) = (0..self.n_struct).find(|&j| d[j] < -OPT_TOL && !self.basis.contains(&j)) else {
                return Ok(PhaseOutcome::Optimal);
            };
            let mut leave: Option<(usize, f64)> = None;
            for r in 0..self.m {
                let a = self.t[r][enter];
                if a > PIVOT_TOL {
                    let ratio = self.t[r][rc].max(0.0) / a;
                    leave = match leave {
                        None => Some((r, ratio)),
                        Some((lr, lratio)) => {
                            let tie = (ratio - lratio).abs() <= 1e-12 * (1.0 + lratio.abs());
                            if ratio < lratio && !tie || tie && self.basis[r] < self.basis[lr] {
                                Some((r, ratio))
                            } else {
                                Some((lr, lratio))
                            }
                        }
                    };
                }
            }
            match leave {
                None => return Ok(PhaseOutcome::Unbounded(enter)),
                Some((r, _)) => {
                    self.pivot(r, enter);
                    self.iterations += 1;
                }
            }
        }
    }

    /// `y' = c_B' B^{-1}`, read off the artificial block.
    fn duals(&self, cost: &[f64]) -> Vec<f64> {
        (0..self.m)
            .map(|k| {
                self.basis
                    .iter()
                    .enumerate()
                    .map(|(r, &bv)| cost[bv] * self.t[r][self.n_struct + k])
                    .sum()
            })
            .collect()
    }

    fn primal(&self) -> Vec<f64> {
        let rc = self.rhs_col();
        let mut x = vec![0.0; self.n_struct];
        for (r, &bv) in self.basis.iter().enumerate() {
            if bv < self.n_struct {
                x[bv] = self.t[r][rc];
            }
        }
        x
    }
}

fn recover(maps: &[VarMap], std: &[f64], homogeneous: bool) -> Vec<f64> {
    maps.iter()
        .map(|m| match *m {
            VarMap::Shift { col, offset } => std[col] + if homogeneous { 0.0 } else { offset },
            VarMap::Reflect { col, offset } => (if homogeneous { 0.0 } else { offset }) - std[col],
            VarMap::Split { pos, neg } => std[pos] - std[neg],
        })
        .collect()
}

/// Maps standard-form row multipliers back onto the original rows.
fn original_row_multipliers(sf: &StandardForm, y_std: &[f64]) -> Vec<f64> {
    (0..sf.n_orig_rows).map(|r| y_std[r] * sf.row_sign[r]).collect()
}

/// Dual objective `b'y + sum_j min_{x_j in [l_j, u_j]} d_j x_j` with `d = c - A'y`
/// for the minimization form of `lp`.
fn dual_objective(lp: &LinearProgram, y: &[f64]) -> f64 {
    let sign = if lp.sense == Sense::Maximize { -1.0 } else { 1.0 };
    let n = lp.n_vars();
    let mut val: f64 = lp.constraints.iter().zip(y).map(|(c, yr)| c.rhs * yr).sum();
    for j in 0..n {
        let d = sign * lp.objective[j] - lp.constraints.iter().zip(y).map(|(c, yr)| c.coeffs[j] * yr).sum::<f64>();
        if d > OPT_TOL {
            if lp.lower[j].is_finite() {
                val += d * lp.lower[j];
            } else {
                return f64::NEG_INFINITY;
            }
        } else if d < -OPT_TOL {
            if lp.upper[j].is_finite() {
                val += d * lp.upper[j];
            } else {
                return f64::NEG_INFINITY;
            }
        } else if d != 0.0 {
            // clamp numerically-zero reduced costs onto a finite bound
            if lp.lower[j].is_finite() && d > 0.0 {
                val += d * lp.lower[j];
            } else if lp.upper[j].is_finite() && d < 0.0 {
                val += d * lp.upper[j];
            }
        }
    }
    sign * val
}

pub fn solve_lp(lp: &LinearProgram) -> Result<LpResult> {
    lp.validate()?;
    for j in 0..lp.n_vars() {
        if lp.lower[j] > lp.upper[j] + FEAS_TOL {
            // empty box: no Farkas row combination needed
            return Ok(LpResult {
                status: LpStatus::Infeasible,
                value: f64::NAN,
                solution: None,
                certificate: None,
                duals: None,
                dual_value: None,
                iterations: 0,
            });
        }
    }
    let sf = standardize(lp);
    let mut tab = Tableau::new(&sf);
    let n_struct = tab.n_struct;
    let m = tab.m;

    // phase 1
    let mut phase1 = vec![0.0; n_struct + m];
    phase1[n_struct..].iter_mut().for_each(|c| *c = 1.0);
    tab.optimize(&phase1)?;
    let rc = tab.rhs_col();
    let infeas: f64 = tab
        .basis
        .iter()
        .enumerate()
        .filter(|(_, &bv)| bv >= n_struct)
        .map(|(r, _)| tab.t[r][rc])
        .sum();
    if infeas > FEAS_TOL {
        let y = tab.duals(&phase1);
        let farkas = original_row_multipliers(&sf, &y);
        return Ok(LpResult {
            status: LpStatus::Infeasible,
            value: f64::NAN,
            solution: None,
            certificate: Some(Certificate::Farkas(farkas)),
            duals: None,
            dual_value: None,
            iterations: tab.iterations,
        });
    }
    // drive remaining artificials out of the basis where possible
    for r in 0..m {
        if tab.basis[r] >= n_struct {
            if let Some(j) = (0..n_struct).find(|&j| tab.t[r][j].abs() > 1e-9 && !tab.basis.contains(&j)) {
                tab.pivot(r, j);
            }
        }
    }

    // phase 2
    let mut cost = sf.cost.clone();
    cost.extend(std::iter::repeat_n(0.0, m));
    let sign = if lp.sense == Sense::Maximize { -1.0 } else { 1.0 };
    match tab.optimize(&cost)? {
        PhaseOutcome::Unbounded(enter) => {
            let mut dir = vec![0.0; n_struct];
            dir[enter] = 1.0;
            for (r, &bv) in tab.basis.iter().enumerate() {
                if bv < n_struct {
                    dir[bv] = -tab.t[r][enter];
                }
            }
            let ray = recover(&sf.maps, &dir, true);
            Ok(LpResult {
                status: LpStatus::Unbounded,
                value: -sign * f64::INFINITY,
                solution: None,
                certificate: Some(Certificate::Ray(ray)),
                duals: None,
                dual_value: None,
                iterations: tab.iterations,
            })
        }
        PhaseOutcome::Optimal => {
            let xs = tab.primal();
            let x = recover(&sf.maps, &xs, false);
            let value = lp.objective_value(&x);
            let y_std = tab.duals(&cost);
            let y = original_row_multipliers(&sf, &y_std);
            let dual_value = dual_objective(lp, &y);
            let duals = y.iter().map(|v| sign * v).collect();
            // standard-form objective kept for a cheap internal consistency check
            debug_assert!({
                let std_val: f64 = sf.cost.iter().zip(&xs).map(|(c, v)| c * v).sum::<f64>() + sf.cost_offset;
                (sign * std_val - value).abs() <= 1e-6 * (1.0 + value.abs())
            });
            Ok(LpResult {
                status: LpStatus::Optimal,
                value,
                solution: Some(x),
                certificate: None,
                duals: Some(duals),
                dual_value: Some(dual_value),
                iterations: tab.iterations,
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn check_farkas(lp: &LinearProgram, y: &[f64]) -> bool {
        // sum_r y_r (a_r x - b_r) must be negative on the whole box
        let n = lp.n_vars();
        let mut max = -lp.constraints().iter().zip(y).map(|(c, v)| c.rhs * v).sum::<f64>();
        for j in 0..n {
            let d: f64 = lp.constraints().iter().zip(y).map(|(c, v)| c.coeffs[j] * v).sum();
            let (l, u) = lp.bounds(j);
            if d > 1e-12 {
                if !u.is_finite() {
                    return false;
                }
                max += d * u;
            } else if d < -1e-12 {
                if !l.is_finite() {
                    return false;
                }
                max += d * l;
            }
        }
        let signs_ok = lp.constraints().iter().zip(y).all(|(c, v)| match c.op {
            ConstraintOp::Ge => *v >= -1e-12,
            ConstraintOp::Le => *v <= 1e-12,
            ConstraintOp::Eq => true,
        });
        signs_ok && max < 0.0
    }

    fn check_ray(lp: &LinearProgram, d: &[f64]) -> bool {
        let rows_ok = lp.constraints().iter().all(|c| {
            let a: f64 = c.coeffs.iter().zip(d).map(|(x, y)| x * y).sum();
            match c.op {
                ConstraintOp::Le => a <= 1e-9,
                ConstraintOp::Ge => a >= -1e-9,
                ConstraintOp::Eq => a.abs() <= 1e-9,
            }
        });
        let bounds_ok = (0..lp.n_vars()).all(|j| {
            let (l, u) = lp.bounds(j);
            (!l.is_finite() || d[j] >= -1e-9) && (!u.is_finite() || d[j] <= 1e-9)
        });
        let improving = match lp.sense() {
            Sense::Maximize => lp.objective_value(d) > 1e-12,
            Sense::Minimize => lp.objective_value(d) < -1e-12,
        };
        rows_ok && bounds_ok && improving
    }

    #[test]
    fn single_variable_box() {
        let mut lp = LinearProgram::new(Sense::Maximize, vec![1.0]);
        lp.add_constraint(vec![1.0], ConstraintOp::Le, 3.0);
        let r = solve_lp(&lp).unwrap();
        assert_eq!(r.status, LpStatus::Optimal);
        assert!((r.value - 3.0).abs() < 1e-12);
        assert!((r.dual_value.unwrap() - 3.0).abs() < 1e-12);
    }

    #[test]
    fn free_ray() {
        let lp = LinearProgram::new(Sense::Maximize, vec![1.0]);
        let r = solve_lp(&lp).unwrap();
        assert_eq!(r.status, LpStatus::Unbounded);
        assert_eq!(r.value, f64::INFINITY);
        match r.certificate {
            Some(Certificate::Ray(d)) => {
                assert_eq!(d, vec![1.0]);
                assert!(check_ray(&lp, &d));
            }
            other => panic!("expected ray, got {other:?}"),
        }
    }

    #[test]
    fn empty_box() {
        let mut lp = LinearProgram::new(Sense::Maximize, vec![0.0]);
        lp.add_constraint(vec![1.0], ConstraintOp::Le, -1.0);
        let r = solve_lp(&lp).unwrap();
        assert_eq!(r.status, LpStatus::Infeasible);
        match r.certificate {
            Some(Certificate::Farkas(y)) => assert!(check_farkas(&lp, &y)),
            other => panic!("expected Farkas vector, got {other:?}"),
        }
    }

    #[test]
    fn textbook_problem_with_duals() {
        // max 3x + 5y s.t. x <= 4, 2y <= 12, 3x + 2y <= 18  -> (2, 6), 36
        let mut lp = LinearProgram::new(Sense::Maximize, vec![3.0, 5.0]);
        lp.add_constraint(vec![1.0, 0.0], ConstraintOp::Le, 4.0)
            .add_constraint(vec![0.0, 2.0], ConstraintOp::Le, 12.0)
            .add_constraint(vec![3.0, 2.0], ConstraintOp::Le, 18.0);
        let r = solve_lp(&lp).unwrap();
        assert!((r.value - 36.0).abs() < 1e-10);
        let x = r.solution.unwrap();
        assert!((x[0] - 2.0).abs() < 1e-10 && (x[1] - 6.0).abs() < 1e-10);
        assert!((r.dual_value.unwrap() - 36.0).abs() < 1e-10);
        let y = r.duals.unwrap();
        assert!((y[1] - 1.5).abs() < 1e-10 && (y[2] - 1.0).abs() < 1e-10);
    }

    #[test]
    fn free_and_bounded_variables() {
        // min x - y s.t. x + y = 1, x free, -2 <= y <= 3 -> y = 3, x = -2, value -5
        let mut lp = LinearProgram::new(Sense::Minimize, vec![1.0, -1.0]);
        lp.set_free(0).set_bounds(1, -2.0, 3.0);
        lp.add_constraint(vec![1.0, 1.0], ConstraintOp::Eq, 1.0);
        let r = solve_lp(&lp).unwrap();
        assert!((r.value + 5.0).abs() < 1e-10);
        assert!((r.dual_value.unwrap() + 5.0).abs() < 1e-10);
    }

    #[test]
    fn infeasible_rows() {
        let mut lp = LinearProgram::new(Sense::Minimize, vec![1.0, 1.0]);
        lp.add_constraint(vec![1.0, 1.0], ConstraintOp::Ge, 3.0)
            .add_constraint(vec![1.0, 1.0], ConstraintOp::Le, 2.0);
        let r = solve_lp(&lp).unwrap();
        assert_eq!(r.status, LpStatus::Infeasible);
        let Some(Certificate::Farkas(y)) = r.certificate else { panic!() };
        assert!(check_farkas(&lp, &y));
    }

    #[test]
    fn redundant_equalities_and_degeneracy() {
        // duplicated equality rows leave an artificial basic at zero
        let mut lp = LinearProgram::new(Sense::Maximize, vec![1.0, 2.0, 0.0]);
        lp.add_constraint(vec![1.0, 1.0, 1.0], ConstraintOp::Eq, 1.0)
            .add_constraint(vec![2.0, 2.0, 2.0], ConstraintOp::Eq, 2.0)
            .add_constraint(vec![1.0, 0.0, 0.0], ConstraintOp::Le, 0.0);
        let r = solve_lp(&lp).unwrap();
        assert!((r.value - 2.0).abs() < 1e-12);
        assert!((r.dual_value.unwrap() - 2.0).abs() < 1e-10);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(200))]
            #[test]
            fn random_lps_are_certified(
                a in proptest::collection::vec(-3.0f64..3.0, 12),
                b in proptest::collection::vec(-2.0f64..4.0, 3),
                c in proptest::collection::vec(-2.0f64..2.0, 4),
                free in proptest::collection::vec(any::<bool>(), 4),
                ops in proptest::collection::vec(0u8..3, 3),
            ) {
                let mut lp = LinearProgram::new(Sense::Maximize, c);
                for j in 0..4 {
                    if free[j] { lp.set_bounds(j, -5.0, 5.0); }
                }
                for r in 0..3 {
                    let op = match ops[r] { 0 => ConstraintOp::Le, 1 => ConstraintOp::Ge, _ => ConstraintOp::Eq };
                    lp.add_constraint(a[4 * r..4 * r + 4].to_vec(), op, b[r]);
                }
                let res = solve_lp(&lp).unwrap();
                match res.status {
                    LpStatus::Optimal => {
                        let x = res.solution.clone().unwrap();
                        prop_assert!(lp.infeasibility(&x) <= 1e-8);
                        prop_assert!((lp.objective_value(&x) - res.value).abs() <= 1e-8);
                        prop_assert!((res.dual_value.unwrap() - res.value).abs() <= 1e-8,
                            "gap {} vs {}", res.dual_value.unwrap(), res.value);
                    }
                    LpStatus::Unbounded => {
                        let Some(Certificate::Ray(d)) = res.certificate else { panic!() };
                        prop_assert!(check_ray(&lp, &d));
                    }
                    LpStatus::Infeasible => {
                        let Some(Certificate::Farkas(y)) = res.certificate else { panic!() };
                        prop_assert!(check_farkas(&lp, &y));
                    }
                }
            }
        }
    }
}
