//! Exact decision of `m(Z) + x(X) <= M(Y)` for all `Z, Y >= 0`, `X in L`,
//! `Z + X <= Y`.
//!
//! Per block and piece the inequality splits into
//! `m(Z) + E[f_j X|a] - M(Y) <= c_j`. The left side is positively homogeneous
//! over a cone, so it holds iff `c_j >= 0` and the cone program
//! `max m(Z) + E[f_j X|a] - M(Y)` normalised by `E[Z + Y|a] <= 1` has value 0.
//! (Any feasible triple with `Z = Y = 0` has `X <= 0`, and then
//! `E[f_j X] <= 0` when `f_j >= 0`; negative densities show up as an
//! unbounded program.)

use serde::Serialize;

use super::bounds::BoundPair;
use super::polytope::PolytopeBlock;
use super::{cond_dot, PolyhedralOperator};
use crate::error::{Error, Result};
use crate::optim::{solve_lp, Certificate, ConstraintOp, LinearProgram, LpStatus, Sense};
use crate::prob::{RandomVariable, TOL};

#[derive(Clone, Debug, Serialize)]
pub struct SandwichWitness {
    pub block: usize,
    pub piece: usize,
    pub x: RandomVariable,
    pub z: RandomVariable,
    pub y: RandomVariable,
    /// `m(Z) + x(X)` on the block.
    pub lhs: f64,
    /// `M(Y)` on the block.
    pub rhs: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct SandwichCheck {
    pub holds: bool,
    /// Decided by the sufficient condition (every piece density admissible,
    /// every penalty nonnegative) without solving the cone programs.
    pub fast_path: bool,
    pub witness: Option<SandwichWitness>,
}

pub fn check_sandwich(op: &PolyhedralOperator, bounds: &BoundPair) -> Result<SandwichCheck> {
    if bounds.level_a() != op.level_a() || bounds.level_b() != op.level_b() {
        return Err(Error::InvalidBounds(format!(
            "bounds act between levels ({}, {}) but the operator between ({}, {})",
            bounds.level_a(),
            bounds.level_b(),
            op.level_a(),
            op.level_b()
        )));
    }
    let space = op.space();
    let fine = space.level(op.level_b())?;
    let fast = op.blocks().iter().all(|blk| {
        let poly = PolytopeBlock::build(&blk.atoms, blk.cond_probs.clone(), bounds, fine);
        blk.penalties.iter().all(|&c| c >= 0.0) && blk.densities.iter().all(|f| poly.contains(f, TOL))
    });
    if fast {
        return Ok(SandwichCheck {
            holds: true,
            fast_path: true,
            witness: None,
        });
    }
    for (k, blk) in op.blocks().iter().enumerate() {
        for j in 0..blk.densities.len() {
            if let Some(w) = piece_violation(op, bounds, k, j)? {
                return Ok(SandwichCheck {
                    holds: false,
                    fast_path: false,
                    witness: Some(w),
                });
            }
        }
    }
    Ok(SandwichCheck {
        holds: true,
        fast_path: false,
        witness: None,
    })
}

fn piece_violation(op: &PolyhedralOperator, bounds: &BoundPair, k: usize, j: usize) -> Result<Option<SandwichWitness>> {
    let blk = &op.blocks()[k];
    let c = blk.penalties[j];
    let n = blk.atoms.len();
    let d = blk.basis.len();
    if c < 0.0 {
        return Ok(Some(witness(op, bounds, k, j, &vec![0.0; d], &vec![0.0; n], &vec![0.0; n])));
    }
    let pi = &blk.cond_probs;
    let lows = bounds.lower_kernels_on(&blk.atoms);
    let ups = bounds.upper_kernels_on(&blk.atoms);
    let linear = bounds.is_linear();
    // variables: theta (d, free) | Z (n) | Y (n) | [s, r free]
    let (oz, oy, os) = (d, d + n, d + 2 * n);
    let n_vars = if linear { os } else { os + 2 };
    let mut obj = vec![0.0; n_vars];
    obj[..d].copy_from_slice(&blk.moments[j]);
    if linear {
        for i in 0..n {
            obj[oz + i] = pi[i] * lows[0][i];
            obj[oy + i] = -pi[i] * ups[0][i];
        }
    } else {
        obj[os] = 1.0;
        obj[os + 1] = -1.0;
    }
    let mut lp = LinearProgram::new(Sense::Maximize, obj);
    for v in 0..d {
        lp.set_free(v);
    }
    if !linear {
        lp.set_free(os);
        lp.set_free(os + 1);
    }
    for i in 0..n {
        let mut terms: Vec<(usize, f64)> = (0..d).map(|v| (v, blk.basis[v][i])).collect();
        terms.push((oz + i, 1.0));
        terms.push((oy + i, -1.0));
        lp.add_sparse(&terms, ConstraintOp::Le, 0.0);
    }
    let norm: Vec<(usize, f64)> = (0..n).flat_map(|i| [(oz + i, pi[i]), (oy + i, pi[i])]).collect();
    lp.add_sparse(&norm, ConstraintOp::Le, 1.0);
    if !linear {
        for kern in &lows {
            let mut terms = vec![(os, 1.0)];
            terms.extend((0..n).map(|i| (oz + i, -pi[i] * kern[i])));
            lp.add_sparse(&terms, ConstraintOp::Le, 0.0);
        }
        for kern in &ups {
            let mut terms: Vec<(usize, f64)> = (0..n).map(|i| (oy + i, pi[i] * kern[i])).collect();
            terms.push((os + 1, -1.0));
            lp.add_sparse(&terms, ConstraintOp::Le, 0.0);
        }
    }
    let res = solve_lp(&lp)?;
    let (dir, gain) = match res.status {
        LpStatus::Optimal if res.value > TOL => (res.solution.expect("optimal solution"), res.value),
        LpStatus::Unbounded => match res.certificate {
            Some(Certificate::Ray(ray)) => {
                let gain = lp.objective_value(&ray);
                (ray, gain)
            }
            _ => return Err(Error::Lp("unbounded cone program without a ray".into())),
        },
        LpStatus::Optimal => return Ok(None),
        LpStatus::Infeasible => return Err(Error::Lp("cone program is infeasible at the origin".into())),
    };
    // scale so that the homogeneous gain beats the penalty
    let t = (2.0 * c / gain).max(1.0);
    let scaled: Vec<f64> = dir.iter().map(|v| v * t).collect();
    Ok(Some(witness(op, bounds, k, j, &scaled[..d], &scaled[oz..oy], &scaled[oy..os])))
}

fn witness(op: &PolyhedralOperator, bounds: &BoundPair, k: usize, j: usize, theta: &[f64], z: &[f64], y: &[f64]) -> SandwichWitness {
    let blk = &op.blocks()[k];
    let n_atoms = op.space().n_atoms();
    let x_local = blk.combine(theta);
    let lift = |local: &[f64]| {
        let mut v = vec![0.0; n_atoms];
        for (&w, &a) in blk.atoms.iter().zip(local) {
            v[w] = a;
        }
        RandomVariable::from_parts(v, op.level_b())
    };
    let pi = &blk.cond_probs;
    let m = bounds
        .lower_kernels_on(&blk.atoms)
        .iter()
        .map(|kern| cond_dot(pi, kern, z))
        .fold(f64::INFINITY, f64::min);
    let big = bounds
        .upper_kernels_on(&blk.atoms)
        .iter()
        .map(|kern| cond_dot(pi, kern, y))
        .fold(f64::NEG_INFINITY, f64::max);
    SandwichWitness {
        block: k,
        piece: j,
        lhs: m + blk.value(&x_local),
        rhs: big,
        x: lift(&x_local),
        z: lift(z),
        y: lift(y),
    }
}
