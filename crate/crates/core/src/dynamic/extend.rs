//! Time-consistent extension of a system by backward composition of the
//! maximal one-step extensions. Penalties of product densities
//! `f = g_i * ... * g_{j-1}` follow the forward sum
//!
//! ```text
//! alpha_{i,j}(f) = sum_{l=i}^{j-1} E[g_i ... g_{l-1} alpha_l(g_l) | F_i]
//! ```
//!
//! where `alpha_l` is the minimal penalty of the l-th extended step (`+inf`
//! off its density polytope).

use std::collections::BTreeMap;
use std::sync::Mutex;

use rand::Rng;
use serde::Serialize;

use super::OperatorSystem;
use crate::error::{Error, Result};
use crate::extension::{maximal_extension, polytope_vertices, ExtendedOperator, PenaltyValue};
use crate::optim::ExtReal;
use crate::prob::{FilteredSpace, RandomVariable};
use crate::report::{CheckKind, ValidationReport};

/// Membership tolerance for one-step factors.
const MEMBER_TOL: f64 = 1e-7;

type LedgerKey = (usize, usize, Vec<Vec<u64>>);

#[derive(Debug)]
pub struct ExtendedSystem {
    system: OperatorSystem,
    steps: Vec<ExtendedOperator>,
    ledger: Mutex<BTreeMap<LedgerKey, PenaltyValue>>,
}

impl Clone for ExtendedSystem {
    fn clone(&self) -> Self {
        Self {
            system: self.system.clone(),
            steps: self.steps.clone(),
            ledger: Mutex::new(self.ledger.lock().expect("ledger lock").clone()),
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Price {
    /// `x̂_{s,t}(X)`, measurable at level `s`.
    pub value: RandomVariable,
    /// Product of the per-step attaining densities.
    pub density: RandomVariable,
    pub penalty: PenaltyValue,
    /// Per-step attaining densities, earliest step first.
    pub factors: Vec<RandomVariable>,
}

/// Extends every one-step operator maximally under its own bounds.
pub fn extend_system(sys: &OperatorSystem) -> Result<ExtendedSystem> {
    let grid = sys.grid();
    let steps = sys
        .one_step()
        .iter()
        .enumerate()
        .map(|(l, op)| {
            let (s, t) = (grid[l], grid[l + 1]);
            maximal_extension(op, &sys.bounds()[&(s, t)]).map_err(|e| Error::AtPair { s, t, source: Box::new(e) })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ExtendedSystem {
        system: sys.clone(),
        steps,
        ledger: Mutex::new(BTreeMap::new()),
    })
}

impl ExtendedSystem {
    pub fn system(&self) -> &OperatorSystem {
        &self.system
    }

    pub fn space(&self) -> &FilteredSpace {
        self.system.space()
    }

    pub fn grid(&self) -> &[usize] {
        self.system.grid()
    }

    pub fn steps(&self) -> &[ExtendedOperator] {
        &self.steps
    }

    /// Grid positions of the pair `(s, t)`, given as levels.
    pub(super) fn span(&self, s: usize, t: usize) -> Result<(usize, usize)> {
        let (i, j) = (self.system.position(s)?, self.system.position(t)?);
        if i >= j {
            return Err(Error::InvalidLevel {
                level: s,
                reason: format!("pair ({s}, {t}) is not increasing"),
            });
        }
        Ok((i, j))
    }

    /// `x̂_{s,t}(X)`, pricing the tail first.
    pub fn evaluate(&self, s: usize, t: usize, x: &RandomVariable) -> Result<RandomVariable> {
        let (i, j) = self.span(s, t)?;
        let mut y = x.clone();
        for l in (i..j).rev() {
            y = self.steps[l].evaluate(&y)?;
        }
        Ok(y)
    }

    /// Minimal penalty of step `l` at `g`, block by block; `+inf` on blocks
    /// where `g` leaves the density polytope.
    pub fn step_penalty(&self, l: usize, g: &RandomVariable) -> Result<PenaltyValue> {
        let step = self.steps.get(l).ok_or_else(|| Error::InvalidSystem(format!("no step {l}")))?;
        if g.len() != self.space().n_atoms() {
            return Err(Error::Dimension {
                expected: self.space().n_atoms(),
                got: g.len(),
            });
        }
        let per_block = step
            .polytope()
            .blocks()
            .iter()
            .enumerate()
            .map(|(b, pb)| {
                let local: Vec<f64> = pb.atoms.iter().map(|&w| g[w]).collect();
                if pb.contains(&local, MEMBER_TOL) {
                    step.penalty_block(b, &local)
                } else {
                    Ok(ExtReal::PosInf)
                }
            })
            .collect::<Result<Vec<_>>>()?;
        PenaltyValue::from_blocks(self.space(), step.level_a(), &per_block)
    }

    /// Forward-sum penalty of the product density with the given one-step
    /// factors (one per step between `s` and `t`); recorded in the ledger.
    pub fn penalty(&self, s: usize, t: usize, factors: &[RandomVariable]) -> Result<PenaltyValue> {
        let (i, j) = self.span(s, t)?;
        if factors.len() != j - i {
            return Err(Error::Dimension {
                expected: j - i,
                got: factors.len(),
            });
        }
        let key: LedgerKey = (s, t, factors.iter().map(|g| g.values().iter().map(|v| v.to_bits()).collect()).collect());
        if let Some(hit) = self.ledger.lock().expect("ledger lock").get(&key) {
            return Ok(hit.clone());
        }
        let space = self.space();
        let mut weight = vec![1.0; space.n_atoms()];
        let mut total = PenaltyValue::zero(space, s);
        for (l, g) in (i..j).zip(factors) {
            let a = self.step_penalty(l, g)?;
            total = total.add(&a.weighted_cond(space, &weight, s)?);
            for (w, gv) in weight.iter_mut().zip(g.values()) {
                *w *= gv;
            }
        }
        self.ledger.lock().expect("ledger lock").insert(key, total.clone());
        Ok(total)
    }

    /// Number of product densities whose penalty has been materialised.
    pub fn ledger_len(&self) -> usize {
        self.ledger.lock().expect("ledger lock").len()
    }

    /// Composed value with an attaining product density and its penalty.
    pub fn price(&self, s: usize, t: usize, x: &RandomVariable) -> Result<Price> {
        let (i, j) = self.span(s, t)?;
        let mut y = x.clone();
        let mut factors = Vec::with_capacity(j - i);
        for l in (i..j).rev() {
            let att = self.steps[l].attain(&y)?;
            y = att.value;
            factors.push(att.density);
        }
        factors.reverse();
        let density = product(self.space(), &factors, t);
        let penalty = self.penalty(s, t, &factors)?;
        Ok(Price {
            value: y,
            density,
            penalty,
            factors,
        })
    }
}

pub(super) fn product(space: &FilteredSpace, factors: &[RandomVariable], level: usize) -> RandomVariable {
    factors
        .iter()
        .fold(RandomVariable::constant(space, 1.0, 0), |acc, g| acc.mul(g))
        .at_level(level)
}

/// `E[f X | F_s] - alpha`, with `-inf` rendered as `None`.
fn dual_value(space: &FilteredSpace, f: &RandomVariable, x: &RandomVariable, alpha: &PenaltyValue, s: usize) -> Result<Vec<Option<f64>>> {
    let fx: Vec<f64> = f.values().iter().zip(x.values()).map(|(a, b)| a * b).collect();
    let e = space.cond_expectation_values(&fx, s)?;
    Ok(e.iter()
        .zip(alpha.values())
        .map(|(v, a)| match a {
            ExtReal::Finite(a) => Some(v - a),
            ExtReal::PosInf => None,
        })
        .collect())
}

/// One-step factors for steps `i..j`: convex combinations of attaining
/// densities at random payoffs.
pub(super) fn sample_factors<R: Rng + ?Sized>(ext: &ExtendedSystem, i: usize, j: usize, rng: &mut R) -> Result<Vec<RandomVariable>> {
    let space = ext.space();
    let mut out = Vec::with_capacity(j - i);
    for l in i..j {
        let step = &ext.steps[l];
        let draw = |rng: &mut R| -> Result<RandomVariable> {
            let x = RandomVariable::random(space, step.level_b(), -1.0, 1.0, rng)?;
            Ok(step.attain(&x)?.density)
        };
        let (g1, g2) = (draw(rng)?, draw(rng)?);
        let lam: f64 = rng.random_range(0.0..1.0);
        out.push(g1.scale(lam).add(&g2.scale(1.0 - lam)));
    }
    Ok(out)
}

fn splice(a: &[RandomVariable], b: &[RandomVariable], on: &[usize]) -> Vec<RandomVariable> {
    a.iter()
        .zip(b)
        .map(|(ga, gb)| {
            let mut v = gb.values().to_vec();
            for &w in on {
                v[w] = ga[w];
            }
            RandomVariable::from_parts(v, ga.level())
        })
        .collect()
}

/// Cocycle identity on sampled product densities, the local property of
/// penalties under splicing on `F_r` blocks, and the dual inequality
/// `E[fX|F_r] - alpha_{r,t}(f) <= x̂_{r,t}(X)`.
pub fn check_cocycle_and_local<R: Rng + ?Sized>(ext: &ExtendedSystem, r: usize, s: usize, t: usize, samples: usize, rng: &mut R) -> Result<ValidationReport> {
    let (i, k) = ext.span(r, s)?;
    let (_, j) = ext.span(s, t)?;
    let space = ext.space();
    let mut report = ValidationReport::new();

    let draws = (0..samples).map(|_| sample_factors(ext, i, j, rng)).collect::<Result<Vec<_>>>()?;

    let mut cocycle = (true, 0.0f64, String::new());
    for fs in &draws {
        let whole = ext.penalty(r, t, fs)?;
        let head = ext.penalty(r, s, &fs[..k - i])?;
        let tail = ext.penalty(s, t, &fs[k - i..])?;
        let weight = product(space, &fs[..k - i], s);
        let rhs = head.add(&tail.weighted_cond(space, weight.values(), r)?);
        let gap = whole.max_abs_diff(&rhs);
        cocycle.1 = cocycle.1.max(gap);
        if gap > 1e-6 && cocycle.0 {
            cocycle = (false, gap, format!("alpha_{{{r},{t}}} = {:?} but sum = {:?}", whole.values(), rhs.values()));
        }
    }
    let detail = if cocycle.0 { format!("{} densities, max gap {:.3e}", draws.len(), cocycle.1) } else { cocycle.2 };
    report.push("cocycle alpha_{r,t} = alpha_{r,s} + E_Q[alpha_{s,t}|F_r]", cocycle.0, CheckKind::Sampled, detail);

    let mut local = (true, String::new(), 0usize);
    for pair in draws.windows(2) {
        let base = ext.penalty(r, t, &pair[0])?;
        for blk in space.level(r)?.blocks() {
            let spliced = ext.penalty(r, t, &splice(&pair[0], &pair[1], blk))?;
            local.2 += 1;
            for &w in blk {
                if !spliced.at(w).approx_eq(base.at(w), 1e-12) && local.0 {
                    local = (false, format!("block {blk:?}: {} vs {}", spliced.at(w), base.at(w)), local.2);
                }
            }
        }
    }
    let detail = if local.0 { format!("{} splices", local.2) } else { local.1 };
    report.push("local property of penalties", local.0, CheckKind::Sampled, detail);

    let mut dual = (true, 0.0f64);
    let mut unit = true;
    for fs in &draws {
        let mut weight = RandomVariable::constant(space, 1.0, 0);
        for (l, g) in (i..j).zip(fs) {
            let e = space.cond_expectation_values(g.values(), ext.grid()[l])?;
            unit &= e.iter().all(|v| (v - 1.0).abs() < 1e-8);
            weight = weight.mul(g);
        }
        let alpha = ext.penalty(r, t, fs)?;
        let x = RandomVariable::random(space, t, -1.0, 1.0, rng)?;
        let v = ext.evaluate(r, t, &x)?;
        for (w, d) in dual_value(space, &weight, &x, &alpha, r)?.into_iter().enumerate() {
            if let Some(d) = d {
                let excess = d - v[w];
                dual.1 = dual.1.max(excess);
                dual.0 &= excess <= 1e-8;
            }
        }
    }
    report.push(
        "E[fX|F_r] - alpha_{r,t}(f) <= x̂_{r,t}(X)",
        dual.0,
        CheckKind::Sampled,
        format!("max excess {:.3e}", dual.1),
    );
    report.push("product densities have unit conditional expectation per step", unit, CheckKind::Sampled, String::new());
    Ok(report)
}

/// Time-consistency of the composition, the price identity and maximality
/// against products of per-step polytope vertices, for the pair `(s, t)`.
pub fn check_composed_extension<R: Rng + ?Sized>(ext: &ExtendedSystem, s: usize, t: usize, samples: usize, rng: &mut R) -> Result<ValidationReport> {
    let (i, j) = ext.span(s, t)?;
    let space = ext.space();
    let grid = ext.grid();
    let mut report = ValidationReport::new();
    let payoffs = (0..samples).map(|_| RandomVariable::random(space, t, -1.0, 1.0, rng)).collect::<Result<Vec<_>>>()?;

    // primal composition against the chain of attained (density-side) values
    let mut consistent = (true, 0.0f64);
    let mut identity = (true, 0.0f64);
    for x in &payoffs {
        let v = ext.evaluate(s, t, x)?;
        for &u in &grid[i + 1..j] {
            let tail = ext.price(u, t, x)?;
            let head = ext.price(s, u, &tail.value)?;
            let gap = v.max_abs_diff(&head.value);
            consistent.1 = consistent.1.max(gap);
            consistent.0 &= gap <= 1e-7;
        }
        let p = ext.price(s, t, x)?;
        let gap = v.max_abs_diff(&p.value);
        for (w, d) in dual_value(space, &p.density, x, &p.penalty, s)?.into_iter().enumerate() {
            let g = d.map_or(f64::INFINITY, |d| (d - p.value[w]).abs()).max(gap);
            identity.1 = identity.1.max(g);
            identity.0 &= g <= 1e-6;
        }
    }
    report.push(
        "x̂_{s,t} = x̂_{s,u} ∘ x̂_{u,t}",
        consistent.0,
        CheckKind::Sampled,
        format!("max gap {:.3e}", consistent.1),
    );
    report.push(
        "price identity value = E[f_X X|F_s] - alpha(f_X)",
        identity.0,
        CheckKind::Sampled,
        format!("max gap {:.3e}", identity.1),
    );

    let vertices = (i..j).map(|l| polytope_vertices(&ext.steps[l], 8, rng)).collect::<Result<Vec<_>>>()?;
    let mut worst = f64::NEG_INFINITY;
    for x in &payoffs {
        let v = ext.evaluate(s, t, x)?;
        for _ in 0..8 {
            let fs: Vec<RandomVariable> = vertices.iter().map(|vs| vs[rng.random_range(0..vs.len())].clone()).collect();
            let alpha = ext.penalty(s, t, &fs)?;
            let f = product(space, &fs, t);
            for (w, d) in dual_value(space, &f, x, &alpha, s)?.into_iter().enumerate() {
                if let Some(d) = d {
                    worst = worst.max(d - v[w]);
                }
            }
        }
    }
    report.push(
        "maximal over products of vertex densities",
        worst <= 1e-8,
        CheckKind::Sampled,
        format!("max E[fX|F_s]-alpha(f)-x̂(X) = {worst:.3e}"),
    );
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::super::fixtures::*;
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn linear_price() {
        let ext = extend_system(&fix_c_linear()).unwrap();
        let s = ext.space().clone();
        let x = RandomVariable::finest(&s, vec![1.0, 0.0, 0.0, 0.0]).unwrap();
        let p = ext.price(0, 2, &x).unwrap();
        assert!((p.value[0] - 0.25).abs() < 1e-9);
        assert!(p.density.values().iter().all(|v| (v - 1.0).abs() < 1e-7));
        assert!(p.penalty.at(0).approx_eq(ExtReal::Finite(0.0), 1e-9));
        assert!((ext.evaluate(0, 2, &x).unwrap()[0] - 0.25).abs() < 1e-9);
    }

    #[test]
    fn projection_through_all_steps() {
        let ext = extend_system(&fix_c_restricted((0.2, 5.0))).unwrap();
        let s = ext.space().clone();
        let x = RandomVariable::constant(&s, -1.75, 0);
        let p = ext.price(0, 2, &x).unwrap();
        assert!((p.value[0] + 1.75).abs() < 1e-9);
        // the optimal face is widened by a relative 1e-9, so the penalty is zero to that order
        assert!(p.penalty.at(0).approx_eq(ExtReal::Finite(0.0), 1e-8), "{p:?}");
    }

    #[test]
    fn restricted_suites_pass() {
        let ext = extend_system(&fix_c_restricted((0.2, 5.0))).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let rep = check_cocycle_and_local(&ext, 0, 1, 2, 20, &mut rng).unwrap();
        assert!(rep.all_passed(), "{rep:#?}");
        let rep = check_composed_extension(&ext, 0, 2, 10, &mut rng).unwrap();
        assert!(rep.all_passed(), "{rep:#?}");
        assert!(ext.ledger_len() > 0);
    }

    #[test]
    fn off_polytope_factor_is_infinite() {
        let ext = extend_system(&fix_c_linear()).unwrap();
        let s = ext.space().clone();
        let g = RandomVariable::new(&s, vec![1.9, 1.9, 0.1, 0.1], 1).unwrap();
        let p = ext.step_penalty(0, &g).unwrap();
        assert_eq!(p.at(0), ExtReal::PosInf);
    }

    #[test]
    fn off_grid_pairs_rejected() {
        let ext = extend_system(&fix_c_linear()).unwrap();
        let s = ext.space().clone();
        let x = RandomVariable::constant(&s, 1.0, 0);
        assert!(ext.price(2, 0, &x).is_err());
        assert!(ext.price(0, 3, &x).is_err());
    }
}
