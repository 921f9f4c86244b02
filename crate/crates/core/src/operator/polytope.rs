//! Admissible densities `{f >= 0 : E[f|A] = 1, m(X) <= E[fX|A] <= M(X) for X >= 0}`.
//!
//! Each block is stored as `{z >= 0 : A_eq z = b_eq, A_in z <= b_in}` where the
//! first `n` coordinates of `z` are the density on the block's atoms. Linear
//! bounds give the box `m0 <= f <= M0`. Polyhedral bounds are lifted: by conic
//! duality, `min_l E[k_l X] <= E[fX]` for all `X >= 0` iff `f` dominates a
//! convex combination of the lower kernels, and symmetrically for the upper
//! kernels, so the auxiliary coordinates are the two sets of weights.

use serde::Serialize;

use super::bounds::BoundPair;
use crate::error::{Error, Result};
use crate::optim::{solve_lp, BoxBudget, ConstraintOp, LinearProgram, LpStatus, Sense};
use crate::prob::{FilteredSpace, Partition, RandomVariable};

#[derive(Clone, Debug, Serialize)]
pub struct PolytopeBlock {
    pub atoms: Vec<usize>,
    pub cond_probs: Vec<f64>,
    /// Number of auxiliary (weight) coordinates after the density.
    pub n_aux: usize,
    pub eq_rows: Vec<(Vec<f64>, f64)>,
    pub le_rows: Vec<(Vec<f64>, f64)>,
    /// `(m0, M0)` restricted to the block, for linear bounds.
    pub linear_box: Option<(Vec<f64>, Vec<f64>)>,
    /// Pairs of positions that share a level-B block (`f_k = f_j`); also
    /// present in `eq_rows`.
    pub ties: Vec<(usize, usize)>,
}

impl PolytopeBlock {
    /// `fine` is the level-B partition; densities are forced constant on its blocks.
    pub(crate) fn build(atoms: &[usize], cond_probs: Vec<f64>, bounds: &BoundPair, fine: &Partition) -> Self {
        let mut blk = Self::build_unmeasured(atoms, cond_probs, bounds);
        for (k, &w) in atoms.iter().enumerate() {
            let first = fine.blocks()[fine.block_of(w)][0];
            if first != w {
                let j = atoms.iter().position(|&v| v == first).expect("level B refines level A");
                let mut row = vec![0.0; blk.n_vars()];
                row[k] = 1.0;
                row[j] = -1.0;
                blk.eq_rows.push((row, 0.0));
                blk.ties.push((k, j));
            }
        }
        blk
    }

    fn build_unmeasured(atoms: &[usize], cond_probs: Vec<f64>, bounds: &BoundPair) -> Self {
        let n = atoms.len();
        let lows = bounds.lower_kernels_on(atoms);
        let ups = bounds.upper_kernels_on(atoms);
        if bounds.is_linear() {
            let (lo, hi) = (lows[0].clone(), ups[0].clone());
            let mut le_rows = Vec::with_capacity(2 * n);
            for k in 0..n {
                let mut row = vec![0.0; n];
                row[k] = 1.0;
                le_rows.push((row, hi[k]));
                let mut row = vec![0.0; n];
                row[k] = -1.0;
                le_rows.push((row, -lo[k]));
            }
            return Self {
                atoms: atoms.to_vec(),
                eq_rows: vec![(cond_probs.clone(), 1.0)],
                cond_probs,
                n_aux: 0,
                le_rows,
                linear_box: Some((lo, hi)),
                ties: Vec::new(),
            };
        }
        let (nu, nl) = (ups.len(), lows.len());
        let width = n + nu + nl;
        let mut le_rows = Vec::with_capacity(2 * n);
        for k in 0..n {
            // f_k - sum_l lambda_l U_l[k] <= 0
            let mut row = vec![0.0; width];
            row[k] = 1.0;
            for (l, u) in ups.iter().enumerate() {
                row[n + l] = -u[k];
            }
            le_rows.push((row, 0.0));
            // sum_l mu_l K_l[k] - f_k <= 0
            let mut row = vec![0.0; width];
            row[k] = -1.0;
            for (l, low) in lows.iter().enumerate() {
                row[n + nu + l] = low[k];
            }
            le_rows.push((row, 0.0));
        }
        let mut budget = vec![0.0; width];
        budget[..n].copy_from_slice(&cond_probs);
        let mut lam = vec![0.0; width];
        lam[n..n + nu].iter_mut().for_each(|v| *v = 1.0);
        let mut mu = vec![0.0; width];
        mu[n + nu..].iter_mut().for_each(|v| *v = 1.0);
        Self {
            atoms: atoms.to_vec(),
            cond_probs,
            n_aux: nu + nl,
            eq_rows: vec![(budget, 1.0), (lam, 1.0), (mu, 1.0)],
            le_rows,
            linear_box: None,
            ties: Vec::new(),
        }
    }

    pub fn n_atoms(&self) -> usize {
        self.atoms.len()
    }

    pub fn n_vars(&self) -> usize {
        self.atoms.len() + self.n_aux
    }

    /// Adds the block's rows to `lp` with the block's variables starting at `offset`.
    pub fn add_rows(&self, lp: &mut LinearProgram, offset: usize) {
        for (op, rows) in [(ConstraintOp::Eq, &self.eq_rows), (ConstraintOp::Le, &self.le_rows)] {
            for (row, rhs) in rows {
                let terms: Vec<(usize, f64)> = row
                    .iter()
                    .enumerate()
                    .filter(|(_, a)| **a != 0.0)
                    .map(|(j, &a)| (offset + j, a))
                    .collect();
                lp.add_sparse(&terms, op, *rhs);
            }
        }
    }

    /// Membership of a block-local density.
    pub fn contains(&self, f: &[f64], tol: f64) -> bool {
        if f.len() != self.n_atoms() || f.iter().any(|&v| v < -tol) {
            return false;
        }
        let mass: f64 = self.cond_probs.iter().zip(f).map(|(p, v)| p * v).sum();
        if (mass - 1.0).abs() > tol {
            return false;
        }
        if self.ties.iter().any(|&(k, j)| (f[k] - f[j]).abs() > tol) {
            return false;
        }
        if let Some((lo, hi)) = &self.linear_box {
            return f.iter().zip(lo.iter().zip(hi)).all(|(v, (l, h))| *v >= l - tol && *v <= h + tol);
        }
        // Fix f and look for weights; slack variables absorb the tolerance.
        let (n, m) = (self.n_atoms(), self.n_aux);
        let mut lp = LinearProgram::new(Sense::Minimize, vec![0.0; m]);
        for (op, rows) in [(ConstraintOp::Eq, &self.eq_rows), (ConstraintOp::Le, &self.le_rows)] {
            for (row, rhs) in rows {
                let fixed: f64 = row[..n].iter().zip(f).map(|(a, v)| a * v).sum();
                if row[n..].iter().all(|a| *a == 0.0) {
                    continue;
                }
                let rhs = rhs - fixed + if op == ConstraintOp::Le { tol } else { 0.0 };
                lp.add_constraint(row[n..].to_vec(), op, rhs);
            }
        }
        matches!(solve_lp(&lp), Ok(r) if r.status == LpStatus::Optimal)
    }

    fn is_nonempty(&self) -> Result<bool> {
        let mut lp = LinearProgram::new(Sense::Minimize, vec![0.0; self.n_vars()]);
        self.add_rows(&mut lp, 0);
        Ok(solve_lp(&lp)?.status == LpStatus::Optimal)
    }

    pub fn box_budget(&self) -> Option<BoxBudget> {
        let (lo, hi) = self.linear_box.clone()?;
        BoxBudget::new(self.cond_probs.clone(), lo, hi).ok()
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct DensityPolytope {
    level_a: usize,
    level_b: usize,
    blocks: Vec<PolytopeBlock>,
}

impl DensityPolytope {
    /// Builds the per-block description and fails on the first empty block.
    pub fn new(space: &FilteredSpace, bounds: &BoundPair) -> Result<Self> {
        let part = space.level(bounds.level_a())?;
        let fine = space.level(bounds.level_b())?;
        let mut blocks = Vec::with_capacity(part.len());
        for (idx, atoms) in part.blocks().iter().enumerate() {
            let blk = PolytopeBlock::build(atoms, space.conditional_probs(atoms), bounds, fine);
            if !blk.is_nonempty()? {
                return Err(Error::InfeasiblePolytope {
                    block: idx,
                    atoms: atoms.clone(),
                });
            }
            blocks.push(blk);
        }
        Ok(Self {
            level_a: bounds.level_a(),
            level_b: bounds.level_b(),
            blocks,
        })
    }

    pub fn level_a(&self) -> usize {
        self.level_a
    }

    pub fn level_b(&self) -> usize {
        self.level_b
    }

    pub fn blocks(&self) -> &[PolytopeBlock] {
        &self.blocks
    }

    pub fn contains(&self, f: &RandomVariable, tol: f64) -> bool {
        self.blocks.iter().all(|b| {
            let local: Vec<f64> = b.atoms.iter().map(|&w| f[w]).collect();
            b.contains(&local, tol)
        })
    }

    /// Some member of the polytope (a basic feasible point per block).
    pub fn any_member(&self, n_atoms: usize) -> Result<RandomVariable> {
        let mut values = vec![0.0; n_atoms];
        for blk in &self.blocks {
            let mut lp = LinearProgram::new(Sense::Minimize, vec![0.0; blk.n_vars()]);
            blk.add_rows(&mut lp, 0);
            let sol = solve_lp(&lp)?.solution.ok_or_else(|| Error::Lp("feasible block lost".into()))?;
            for (k, &w) in blk.atoms.iter().enumerate() {
                values[w] = sol[k].max(0.0);
            }
        }
        Ok(RandomVariable::from_parts(values, self.level_b))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fix_a() -> FilteredSpace {
        FilteredSpace::uniform(2, vec![vec![vec![0, 1]], vec![vec![0], vec![1]]]).unwrap()
    }

    fn rv(s: &FilteredSpace, v: &[f64]) -> RandomVariable {
        RandomVariable::finest(s, v.to_vec()).unwrap()
    }

    #[test]
    fn segment() {
        let s = fix_a();
        let b = BoundPair::constant(&s, 0, 1, 0.5, 1.5).unwrap();
        let p = DensityPolytope::new(&s, &b).unwrap();
        // oracle: f = (t, 2 - t), t in [0.5, 1.5]
        for t in [0.5, 0.8, 1.0, 1.5] {
            assert!(p.contains(&rv(&s, &[t, 2.0 - t]), 1e-12));
        }
        assert!(!p.contains(&rv(&s, &[0.4, 1.6]), 1e-12));
        assert!(!p.contains(&rv(&s, &[1.0, 1.1]), 1e-12));
    }

    #[test]
    fn pinched_and_empty() {
        let s = fix_a();
        let b = BoundPair::constant(&s, 0, 1, 1.0, 1.0).unwrap();
        let p = DensityPolytope::new(&s, &b).unwrap();
        assert!(p.contains(&rv(&s, &[1.0, 1.0]), 1e-12));
        assert_eq!(p.any_member(2).unwrap().values(), &[1.0, 1.0]);
        let b = BoundPair::constant(&s, 0, 1, 1.2, 1.5).unwrap();
        assert!(matches!(
            DensityPolytope::new(&s, &b),
            Err(Error::InfeasiblePolytope { block: 0, .. })
        ));
    }

    #[test]
    fn polyhedral_lift_matches_indicator_tests() {
        // m = min{E[(0.5,0.5)X], E[(1,0.2)X]}, M = max{E[(2,2)X], E[(1,3)X]}
        let s = fix_a();
        let b = BoundPair::polyhedral(
            &s,
            0,
            1,
            vec![rv(&s, &[0.5, 0.5]), rv(&s, &[1.0, 0.2])],
            vec![rv(&s, &[2.0, 2.0]), rv(&s, &[1.0, 3.0])],
        )
        .unwrap();
        let p = DensityPolytope::new(&s, &b).unwrap();
        // oracle: on the two-atom budget line f = (t, 2 - t) the conditions reduce
        // to sampled X >= 0 tests (the cone is generated by X = (cos a, sin a)).
        for i in 0..=200 {
            let t = i as f64 / 100.0;
            let f = [t, 2.0 - t];
            let ok = (0..=400).all(|j| {
                let a = std::f64::consts::FRAC_PI_2 * j as f64 / 400.0;
                let x = [a.cos(), a.sin()];
                let e = |k: &[f64]| 0.5 * (k[0] * x[0] + k[1] * x[1]);
                let m = e(&[0.5, 0.5]).min(e(&[1.0, 0.2]));
                let big = e(&[2.0, 2.0]).max(e(&[1.0, 3.0]));
                m <= e(&f) + 1e-12 && e(&f) <= big + 1e-12
            });
            assert_eq!(p.contains(&rv(&s, &f), 1e-9), ok, "t = {t}");
        }
    }
}
