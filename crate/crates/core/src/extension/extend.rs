//! `x̂(X) = max_{f in D} E[fX|A] - x*(f)`, evaluated per block through its
//! primal form `min_{Y in L} x(Y) + S(X - Y)`, with `S` the support function
//! of the density polytope. Both are one LP per block:
//!
//! ```text
//! min  u + b_eq.y + b_in.w
//! s.t. u - sum_i theta_i E[f_j b_i]        >= -c_j            (each piece)
//!      A_eq'y + A_in'w + pi * (sum_i theta_i b_i) >= pi * X    (density coords)
//!      A_eq'y + A_in'w                     >= 0               (weight coords)
//!      theta, u, y free, w >= 0
//! ```
//!
//! Attaining densities come from the dual (density-side) LP.

use std::collections::HashMap;
use std::sync::Mutex;

use serde::Serialize;

use super::{check_density, conjugate, conjugate_block, PenaltyValue};
use crate::error::{Error, Result};
use crate::operator::{check_nondegenerate, check_sandwich, BoundPair, DensityPolytope, OperatorBlock, PolyhedralOperator, PolytopeBlock};
use crate::optim::{solve_lp, ConstraintOp, ExtReal, LinearProgram, LpStatus, Sense};
use crate::prob::{FilteredSpace, RandomVariable, TOL};

/// Relative slack defining the optimal face during centering.
const FACE_TOL: f64 = 1e-9;

#[derive(Clone, Debug, Serialize)]
pub struct Attainment {
    /// Maximising density, measurable at level B.
    pub density: RandomVariable,
    /// `x̂(X)`, measurable at level A.
    pub value: RandomVariable,
    /// `x*(density)`.
    pub penalty: PenaltyValue,
}

#[derive(Debug)]
pub struct ExtendedOperator {
    base: PolyhedralOperator,
    bounds: BoundPair,
    polytope: DensityPolytope,
    attained: Mutex<HashMap<Vec<u64>, Attainment>>,
}

impl Clone for ExtendedOperator {
    fn clone(&self) -> Self {
        Self {
            base: self.base.clone(),
            bounds: self.bounds.clone(),
            polytope: self.polytope.clone(),
            attained: Mutex::new(self.attained.lock().expect("cache lock").clone()),
        }
    }
}

/// Builds `x̂`; requires the sandwich condition and a nonempty density set.
pub fn maximal_extension(op: &PolyhedralOperator, bounds: &BoundPair) -> Result<ExtendedOperator> {
    let check = check_sandwich(op, bounds)?;
    if let Some(w) = check.witness {
        return Err(Error::SandwichViolated {
            block: w.block,
            piece: w.piece,
        });
    }
    let polytope = DensityPolytope::new(op.space(), bounds)?;
    Ok(ExtendedOperator {
        base: op.clone(),
        bounds: bounds.clone(),
        polytope,
        attained: Mutex::new(HashMap::new()),
    })
}

fn local(x: &RandomVariable, atoms: &[usize]) -> Vec<f64> {
    atoms.iter().map(|&w| x[w]).collect()
}

impl ExtendedOperator {
    pub fn base(&self) -> &PolyhedralOperator {
        &self.base
    }

    pub fn bounds(&self) -> &BoundPair {
        &self.bounds
    }

    pub fn polytope(&self) -> &DensityPolytope {
        &self.polytope
    }

    pub fn space(&self) -> &FilteredSpace {
        self.base.space()
    }

    pub fn level_a(&self) -> usize {
        self.base.level_a()
    }

    pub fn level_b(&self) -> usize {
        self.base.level_b()
    }

    fn pairs(&self) -> impl Iterator<Item = (&OperatorBlock, &PolytopeBlock)> {
        self.base.blocks().iter().zip(self.polytope.blocks())
    }

    fn check_input(&self, x: &RandomVariable) -> Result<()> {
        let space = self.space();
        if x.len() != space.n_atoms() {
            return Err(Error::Dimension {
                expected: space.n_atoms(),
                got: x.len(),
            });
        }
        let proj = space.cond_expectation_values(x.values(), self.level_b())?;
        let scale = x.values().iter().fold(1.0f64, |m, v| m.max(v.abs()));
        if let Some(w) = (0..x.len()).find(|&w| (proj[w] - x[w]).abs() > TOL * scale) {
            return Err(Error::NotMeasurable {
                level: self.level_b(),
                atom: w,
            });
        }
        Ok(())
    }

    fn per_block(&self, values: impl Iterator<Item = f64>) -> RandomVariable {
        let mut out = vec![0.0; self.space().n_atoms()];
        for ((ob, _), v) in self.pairs().zip(values) {
            for &w in &ob.atoms {
                out[w] = v;
            }
        }
        RandomVariable::new(self.space(), out, self.level_a()).expect("constant on level-A blocks")
    }

    /// `x̂(X)` for any `X` measurable at level B.
    pub fn evaluate(&self, x: &RandomVariable) -> Result<RandomVariable> {
        self.check_input(x)?;
        let values = self
            .pairs()
            .map(|(ob, pb)| inf_convolution(ob, pb, &local(x, &ob.atoms)))
            .collect::<Result<Vec<_>>>()?;
        Ok(self.per_block(values.into_iter()))
    }

    /// `x̂(X)` through the density-side program (the LP dual of [`Self::evaluate`]).
    pub fn evaluate_dual(&self, x: &RandomVariable) -> Result<RandomVariable> {
        self.check_input(x)?;
        let values = self
            .pairs()
            .map(|(ob, pb)| density_side_value(ob, pb, &local(x, &ob.atoms)))
            .collect::<Result<Vec<_>>>()?;
        Ok(self.per_block(values.into_iter()))
    }

    /// A maximising density for `X`, chosen deterministically inside the
    /// optimal face: the average of the face points that maximise and minimise
    /// each density coordinate in turn.
    pub fn attain(&self, x: &RandomVariable) -> Result<Attainment> {
        self.check_input(x)?;
        let key: Vec<u64> = x.values().iter().map(|v| v.to_bits()).collect();
        if let Some(hit) = self.attained.lock().expect("cache lock").get(&key) {
            return Ok(hit.clone());
        }
        let n = self.space().n_atoms();
        let mut density = vec![0.0; n];
        let mut values = Vec::new();
        for (ob, pb) in self.pairs() {
            let (v, f) = attain_block(ob, pb, &local(x, &ob.atoms))?;
            for (&w, fv) in ob.atoms.iter().zip(f) {
                density[w] = fv;
            }
            values.push(v);
        }
        let density = RandomVariable::from_parts(density, self.level_b());
        let penalty = conjugate(&self.base, &density)?;
        let out = Attainment {
            value: self.per_block(values.into_iter()),
            density,
            penalty,
        };
        self.attained.lock().expect("cache lock").insert(key, out.clone());
        Ok(out)
    }

    /// Strict positivity of attained densities is guaranteed.
    pub fn positivity_guaranteed(&self) -> bool {
        check_nondegenerate(self.space(), &self.bounds)
    }

    /// `x̂*(f) = sup_{X in L_p(B)} E[fX|A] - x̂(X)`, computed by one LP per block
    /// with `X` free; `+inf` outside the density set.
    pub fn conjugate_full(&self, f: &RandomVariable) -> Result<PenaltyValue> {
        check_density(self.space(), f, self.level_a())?;
        let per_block = self
            .pairs()
            .map(|(ob, pb)| conjugate_full_block(ob, pb, &local(f, &ob.atoms)))
            .collect::<Result<Vec<_>>>()?;
        PenaltyValue::from_blocks(self.space(), self.level_a(), &per_block)
    }

    /// `x*(f)` over the base domain.
    pub fn penalty(&self, f: &RandomVariable) -> Result<PenaltyValue> {
        conjugate(&self.base, f)
    }

    /// Per-block penalty for block-local densities.
    pub fn penalty_block(&self, block: usize, f: &[f64]) -> Result<ExtReal> {
        conjugate_block(&self.base.blocks()[block], f)
    }
}

/// Column layout shared by the inf-convolution programs.
struct Layout {
    d: usize,
    n_eq: usize,
    n_le: usize,
}

impl Layout {
    fn of(ob: &OperatorBlock, pb: &PolytopeBlock) -> Self {
        Self {
            d: ob.basis.len(),
            n_eq: pb.eq_rows.len(),
            n_le: pb.le_rows.len(),
        }
    }
    fn u(&self) -> usize {
        self.d
    }
    fn y(&self, r: usize) -> usize {
        self.d + 1 + r
    }
    fn w(&self, r: usize) -> usize {
        self.d + 1 + self.n_eq + r
    }
    fn len(&self) -> usize {
        self.d + 1 + self.n_eq + self.n_le
    }
}

/// Adds the piece rows and coordinate rows; `x_col` maps a density coordinate
/// to a free column carrying `X` (for the full conjugate), else `x` is data.
fn add_inf_conv_rows(lp: &mut LinearProgram, lay: &Layout, ob: &OperatorBlock, pb: &PolytopeBlock, x: Option<&[f64]>, x_col: Option<usize>) {
    for (mom, c) in ob.moments.iter().zip(&ob.penalties) {
        let mut terms: Vec<(usize, f64)> = mom.iter().enumerate().map(|(i, m)| (i, -m)).collect();
        terms.push((lay.u(), 1.0));
        lp.add_sparse(&terms, ConstraintOp::Ge, -c);
    }
    let n = pb.n_atoms();
    for k in 0..pb.n_vars() {
        let mut terms = Vec::new();
        for (r, (row, _)) in pb.eq_rows.iter().enumerate() {
            if row[k] != 0.0 {
                terms.push((lay.y(r), row[k]));
            }
        }
        for (r, (row, _)) in pb.le_rows.iter().enumerate() {
            if row[k] != 0.0 {
                terms.push((lay.w(r), row[k]));
            }
        }
        let mut rhs = 0.0;
        if k < n {
            let p = pb.cond_probs[k];
            for (i, b) in ob.basis.iter().enumerate() {
                terms.push((i, p * b[k]));
            }
            match (x, x_col) {
                (Some(x), _) => rhs = p * x[k],
                (None, Some(col)) => terms.push((col + k, -p)),
                _ => unreachable!("either data or columns for X"),
            }
        }
        lp.add_sparse(&terms, ConstraintOp::Ge, rhs);
    }
}

fn inf_conv_objective(lay: &Layout, pb: &PolytopeBlock, total: usize, sign: f64) -> Vec<f64> {
    let mut obj = vec![0.0; total];
    obj[lay.u()] = sign;
    for (r, (_, b)) in pb.eq_rows.iter().enumerate() {
        obj[lay.y(r)] = sign * b;
    }
    for (r, (_, b)) in pb.le_rows.iter().enumerate() {
        obj[lay.w(r)] = sign * b;
    }
    obj
}

fn free_columns(lp: &mut LinearProgram, lay: &Layout) {
    for v in 0..=lay.d {
        lp.set_free(v);
    }
    for r in 0..lay.n_eq {
        lp.set_free(lay.y(r));
    }
}

pub(crate) fn inf_convolution(ob: &OperatorBlock, pb: &PolytopeBlock, x: &[f64]) -> Result<f64> {
    let lay = Layout::of(ob, pb);
    let mut lp = LinearProgram::new(Sense::Minimize, inf_conv_objective(&lay, pb, lay.len(), 1.0));
    free_columns(&mut lp, &lay);
    add_inf_conv_rows(&mut lp, &lay, ob, pb, Some(x), None);
    let res = solve_lp(&lp)?;
    match res.status {
        LpStatus::Optimal => Ok(res.value),
        s => Err(Error::Lp(format!("extension program is {s:?}"))),
    }
}

fn conjugate_full_block(ob: &OperatorBlock, pb: &PolytopeBlock, f: &[f64]) -> Result<ExtReal> {
    let lay = Layout::of(ob, pb);
    let n = pb.n_atoms();
    let xc = lay.len();
    let mut obj = inf_conv_objective(&lay, pb, xc + n, -1.0);
    for k in 0..n {
        obj[xc + k] = pb.cond_probs[k] * f[k];
    }
    let mut lp = LinearProgram::new(Sense::Maximize, obj);
    free_columns(&mut lp, &lay);
    for k in 0..n {
        lp.set_free(xc + k);
    }
    add_inf_conv_rows(&mut lp, &lay, ob, pb, None, Some(xc));
    let res = solve_lp(&lp)?;
    match res.status {
        LpStatus::Optimal => Ok(ExtReal::Finite(res.value)),
        LpStatus::Unbounded => Ok(ExtReal::PosInf),
        LpStatus::Infeasible => Err(Error::Lp("full conjugate program infeasible".into())),
    }
}

/// Density-side program on one block: variables `(z, nu)` with `z` in the
/// lifted polytope and `nu` in the simplex over pieces, matching moments
/// `E[f b_i] = sum_j nu_j E[f_j b_i]`; objective `E[fX] - sum_j nu_j c_j`.
fn density_program(ob: &OperatorBlock, pb: &PolytopeBlock, x: &[f64]) -> LinearProgram {
    let (n, m, jn) = (pb.n_atoms(), pb.n_vars(), ob.penalties.len());
    let mut obj = vec![0.0; m + jn];
    for k in 0..n {
        obj[k] = pb.cond_probs[k] * x[k];
    }
    for j in 0..jn {
        obj[m + j] = -ob.penalties[j];
    }
    let mut lp = LinearProgram::new(Sense::Maximize, obj);
    pb.add_rows(&mut lp, 0);
    let simplex: Vec<(usize, f64)> = (0..jn).map(|j| (m + j, 1.0)).collect();
    lp.add_sparse(&simplex, ConstraintOp::Eq, 1.0);
    for (i, b) in ob.basis.iter().enumerate() {
        let mut terms: Vec<(usize, f64)> = (0..n).map(|k| (k, pb.cond_probs[k] * b[k])).collect();
        terms.extend((0..jn).map(|j| (m + j, -ob.moments[j][i])));
        lp.add_sparse(&terms, ConstraintOp::Eq, 0.0);
    }
    lp
}

fn density_side_value(ob: &OperatorBlock, pb: &PolytopeBlock, x: &[f64]) -> Result<f64> {
    let res = solve_lp(&density_program(ob, pb, x))?;
    match res.status {
        LpStatus::Optimal => Ok(res.value),
        s => Err(Error::Lp(format!("density program is {s:?}"))),
    }
}

fn attain_block(ob: &OperatorBlock, pb: &PolytopeBlock, x: &[f64]) -> Result<(f64, Vec<f64>)> {
    let mut lp = density_program(ob, pb, x);
    let res = solve_lp(&lp)?;
    if res.status != LpStatus::Optimal {
        return Err(Error::Lp(format!("density program is {:?}", res.status)));
    }
    let v = res.value;
    let n = pb.n_atoms();
    let obj = lp.objective().to_vec();
    lp.add_constraint(obj, ConstraintOp::Ge, v - FACE_TOL * (1.0 + v.abs()));
    let mut sum = vec![0.0; n];
    let mut count = 0.0;
    for k in 0..n {
        for sense in [Sense::Maximize, Sense::Minimize] {
            let mut c = vec![0.0; lp.n_vars()];
            c[k] = 1.0;
            let mut face = LinearProgram::new(sense, c);
            for con in lp.constraints() {
                face.add_constraint(con.coeffs.clone(), con.op, con.rhs);
            }
            let r = solve_lp(&face)?;
            let sol = match (r.status, r.solution) {
                (LpStatus::Optimal, Some(sol)) => sol,
                _ => res.solution.clone().expect("optimal solution"),
            };
            for (s, z) in sum.iter_mut().zip(&sol[..n]) {
                *s += z.max(0.0);
            }
            count += 1.0;
        }
    }
    Ok((v, sum.into_iter().map(|s| s / count).collect()))
}
