//! Minimal penalties, the maximal sandwich-preserving extension and its
//! attaining densities.

mod extend;
mod verify;

pub use extend::{maximal_extension, Attainment, ExtendedOperator};
pub use verify::{check_extension, verify_representation};
pub(crate) use verify::polytope_vertices;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::operator::{BoundPair, DensityPolytope, OperatorBlock, PolyhedralOperator};
use crate::optim::{solve_lp, ConstraintOp, ExtReal, LinearProgram, LpStatus, Sense};
use crate::prob::{FilteredSpace, RandomVariable, TOL};

/// Extended-real random variable measurable at `level`, stored per atom.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PenaltyValue {
    level: usize,
    values: Vec<ExtReal>,
}

impl PenaltyValue {
    pub fn zero(space: &FilteredSpace, level: usize) -> Self {
        Self {
            level,
            values: vec![ExtReal::Finite(0.0); space.n_atoms()],
        }
    }

    /// One value per block of `level`, in partition order.
    pub fn from_blocks(space: &FilteredSpace, level: usize, per_block: &[ExtReal]) -> Result<Self> {
        let part = space.level(level)?;
        if per_block.len() != part.len() {
            return Err(Error::Dimension {
                expected: part.len(),
                got: per_block.len(),
            });
        }
        let mut values = vec![ExtReal::Finite(0.0); space.n_atoms()];
        for (b, v) in part.blocks().iter().zip(per_block) {
            for &w in b {
                values[w] = *v;
            }
        }
        Ok(Self { level, values })
    }

    pub fn level(&self) -> usize {
        self.level
    }

    pub fn values(&self) -> &[ExtReal] {
        &self.values
    }

    pub fn at(&self, atom: usize) -> ExtReal {
        self.values[atom]
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn add(&self, other: &PenaltyValue) -> PenaltyValue {
        PenaltyValue {
            level: self.level.max(other.level),
            values: self.values.iter().zip(&other.values).map(|(a, b)| *a + *b).collect(),
        }
    }

    /// `E[weight * self | F_level]` with `0 * inf = 0`.
    pub fn weighted_cond(&self, space: &FilteredSpace, weight: &[f64], level: usize) -> Result<PenaltyValue> {
        let part = space.level(level)?;
        let mut values = vec![ExtReal::Finite(0.0); space.n_atoms()];
        for b in part.blocks() {
            let pi = space.conditional_probs(b);
            let v: ExtReal = b.iter().zip(&pi).map(|(&w, p)| self.values[w].weighted(p * weight[w])).sum();
            for &w in b {
                values[w] = v;
            }
        }
        Ok(PenaltyValue { level, values })
    }

    pub fn expectation(&self, space: &FilteredSpace) -> ExtReal {
        self.values.iter().zip(space.probs()).map(|(v, p)| v.weighted(*p)).sum()
    }

    pub fn approx_eq(&self, other: &PenaltyValue, tol: f64) -> bool {
        self.values.len() == other.values.len() && self.values.iter().zip(&other.values).all(|(a, b)| a.approx_eq(*b, tol))
    }

    /// Largest finite gap, `inf` when the finiteness patterns differ.
    pub fn max_abs_diff(&self, other: &PenaltyValue) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| match (a, b) {
                (ExtReal::Finite(x), ExtReal::Finite(y)) => (x - y).abs(),
                (ExtReal::PosInf, ExtReal::PosInf) => 0.0,
                _ => f64::INFINITY,
            })
            .fold(0.0, f64::max)
    }
}

/// Checks that `f` is a density relative to `level_a`.
pub(crate) fn check_density(space: &FilteredSpace, f: &RandomVariable, level_a: usize) -> Result<()> {
    if f.len() != space.n_atoms() {
        return Err(Error::Dimension {
            expected: space.n_atoms(),
            got: f.len(),
        });
    }
    if let Some(w) = (0..f.len()).find(|&w| f[w] < -TOL) {
        return Err(Error::InvalidDensity(format!("negative value {} at atom {w}", f[w])));
    }
    let e = space.cond_expectation_values(f.values(), level_a)?;
    if let Some(w) = (0..e.len()).find(|&w| (e[w] - 1.0).abs() > 1e-8) {
        return Err(Error::InvalidDensity(format!("E[f|A] = {} at atom {w}", e[w])));
    }
    Ok(())
}

/// `sup_theta E[f X_theta | a] - max_j (E[f_j X_theta | a] - c_j)` on one block.
pub(crate) fn conjugate_block(blk: &OperatorBlock, f: &[f64]) -> Result<ExtReal> {
    let d = blk.basis.len();
    let mut obj: Vec<f64> = blk.basis.iter().map(|b| crate::operator::cond_dot(&blk.cond_probs, f, b)).collect();
    obj.push(-1.0);
    let mut lp = LinearProgram::new(Sense::Maximize, obj);
    for v in 0..=d {
        lp.set_free(v);
    }
    for (mom, c) in blk.moments.iter().zip(&blk.penalties) {
        let mut row: Vec<f64> = mom.iter().map(|m| -m).collect();
        row.push(1.0);
        lp.add_constraint(row, ConstraintOp::Ge, -c);
    }
    let res = solve_lp(&lp)?;
    match res.status {
        LpStatus::Optimal => Ok(ExtReal::Finite(res.value)),
        LpStatus::Unbounded => Ok(ExtReal::PosInf),
        LpStatus::Infeasible => Err(Error::Lp("conjugate program infeasible".into())),
    }
}

/// Minimal penalty `x*(f) = sup_{X in L} E[fX|A] - x(X)`, per level-A block.
pub fn conjugate(op: &PolyhedralOperator, f: &RandomVariable) -> Result<PenaltyValue> {
    let space = op.space();
    check_density(space, f, op.level_a())?;
    let per_block = op
        .blocks()
        .iter()
        .map(|blk| {
            let local: Vec<f64> = blk.atoms.iter().map(|&w| f[w]).collect();
            conjugate_block(blk, &local)
        })
        .collect::<Result<Vec<_>>>()?;
    PenaltyValue::from_blocks(space, op.level_a(), &per_block)
}

/// Densities admissible for `bounds`; fails naming the first empty block.
pub fn density_set(space: &FilteredSpace, bounds: &BoundPair) -> Result<DensityPolytope> {
    DensityPolytope::new(space, bounds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::subspace::Subspace;
    use std::sync::Arc;

    fn fix_a_op() -> PolyhedralOperator {
        let s = Arc::new(FilteredSpace::uniform(2, vec![vec![vec![0, 1]], vec![vec![0], vec![1]]]).unwrap());
        let dom = Subspace::full(s, 1, 0).unwrap();
        PolyhedralOperator::from_vectors(dom, vec![(vec![1.0, 1.0], vec![0.0; 2]), (vec![1.5, 0.5], vec![0.25; 2])]).unwrap()
    }

    /// Epigraph oracle on the two-atom example: for f = (1 + a, 1 - a) and d = X0 - X1,
    /// E[fX] - x(X) = a d / 2 - max(0, d / 4 - 0.25). The slope in d is a / 2
    /// below the kink d = 1 and a / 2 - 1/4 above it, so the supremum is finite
    /// iff 0 <= a <= 1/2, attained at d = 1.
    fn fix_a_oracle(a: f64) -> ExtReal {
        if !(-1e-12..=0.5 + 1e-12).contains(&a) {
            return ExtReal::PosInf;
        }
        let best = [0.0, 1.0]
            .iter()
            .map(|d| a * d / 2.0 - (d / 4.0 - 0.25).max(0.0))
            .fold(f64::MIN, f64::max);
        ExtReal::Finite(best)
    }

    #[test]
    fn conjugate_examples() {
        let op = fix_a_op();
        let s = op.space().clone();
        let f2 = RandomVariable::finest(&s, vec![1.5, 0.5]).unwrap();
        let c = conjugate(&op, &f2).unwrap();
        assert!(c.at(0).approx_eq(ExtReal::Finite(0.25), 1e-12));
        assert!(c.at(0).approx_eq(fix_a_oracle(0.5), 1e-12));
        let f1 = RandomVariable::constant(&s, 1.0, 0);
        assert!(conjugate(&op, &f1).unwrap().at(0).approx_eq(ExtReal::Finite(0.0), 1e-12));
        for a in [-0.2, 0.1, 0.3, 0.6] {
            let f = RandomVariable::finest(&s, vec![1.0 + a, 1.0 - a]).unwrap();
            let got = conjugate(&op, &f).unwrap().at(0);
            assert!(got.approx_eq(fix_a_oracle(a), 1e-9), "a = {a}: {got:?}");
        }
    }

    #[test]
    fn unbounded_on_restricted_domain() {
        let s = Arc::new(FilteredSpace::uniform(3, vec![vec![vec![0, 1, 2]], vec![vec![0], vec![1], vec![2]]]).unwrap());
        let g = RandomVariable::finest(&s, vec![1.0, 0.0, -1.0]).unwrap();
        let dom = Subspace::span_closure(s.clone(), 1, 0, &[g]).unwrap();
        let op = PolyhedralOperator::conditional_expectation(dom).unwrap();
        let f = RandomVariable::finest(&s, vec![1.2, 1.0, 0.8]).unwrap();
        assert_eq!(conjugate(&op, &f).unwrap().at(0), ExtReal::PosInf);
        let f = RandomVariable::finest(&s, vec![1.25, 0.5, 1.25]).unwrap();
        assert!(conjugate(&op, &f).unwrap().at(0).approx_eq(ExtReal::Finite(0.0), 1e-12));
    }

    #[test]
    fn rejects_non_densities() {
        let op = fix_a_op();
        let s = op.space().clone();
        assert!(conjugate(&op, &RandomVariable::finest(&s, vec![-0.5, 2.5]).unwrap()).is_err());
        assert!(conjugate(&op, &RandomVariable::finest(&s, vec![1.0, 2.0]).unwrap()).is_err());
    }

    #[test]
    fn density_set_examples() {
        let op = fix_a_op();
        let s = op.space();
        assert!(density_set(s, &BoundPair::constant(s, 0, 1, 0.5, 1.5).unwrap()).is_ok());
        assert!(matches!(
            density_set(s, &BoundPair::constant(s, 0, 1, 1.2, 1.5).unwrap()),
            Err(Error::InfeasiblePolytope { block: 0, .. })
        ));
    }

    #[test]
    fn penalty_arithmetic() {
        let s = FilteredSpace::uniform(4, vec![vec![vec![0, 1, 2, 3]], vec![vec![0, 1], vec![2, 3]], vec![vec![0], vec![1], vec![2], vec![3]]]).unwrap();
        let p = PenaltyValue::from_blocks(&s, 1, &[ExtReal::Finite(1.0), ExtReal::PosInf]).unwrap();
        // weight vanishing where the penalty is infinite: 0 * inf = 0
        let e = p.weighted_cond(&s, &[2.0, 2.0, 0.0, 0.0], 0).unwrap();
        assert!(e.at(0).approx_eq(ExtReal::Finite(1.0), 1e-12));
        let e = p.weighted_cond(&s, &[1.0; 4], 0).unwrap();
        assert_eq!(e.at(3), ExtReal::PosInf);
        assert_eq!(p.expectation(&s), ExtReal::PosInf);
    }
}
