//! Monotonicity under grid refinement: composing more intermediate
//! extensions can only lower prices and raise penalties.

use rand::Rng;
use serde::Serialize;

use super::extend::{extend_system, product, sample_factors};
use super::OperatorSystem;
use crate::error::{Error, Result};
use crate::prob::{indicator, RandomVariable};
use crate::report::{CheckKind, ValidationReport};

/// Values below this gap do not count as a strict decrease.
const STRICT_GAP: f64 = 1e-7;

#[derive(Clone, Debug, Serialize)]
pub struct StrictDecrease {
    pub s: usize,
    pub t: usize,
    pub x: RandomVariable,
    pub fine: RandomVariable,
    pub coarse: RandomVariable,
    pub atom: usize,
    pub gap: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct RefinementOutcome {
    pub report: ValidationReport,
    /// Largest strict decrease seen, if any.
    pub strict: Option<StrictDecrease>,
}

#[derive(Clone, Debug, Serialize)]
pub struct Trajectory {
    /// `x̂^n_{s,t}(X)` along the grid sequence.
    pub values: Vec<RandomVariable>,
    pub non_increasing: bool,
}

fn check_nested(coarse: &OperatorSystem, fine: &OperatorSystem) -> Result<()> {
    if coarse.space().as_ref() != fine.space().as_ref() {
        return Err(Error::InvalidSystem("systems live on different spaces".into()));
    }
    if let Some(l) = coarse.grid().iter().find(|l| !fine.grid().contains(l)) {
        return Err(Error::InvalidSystem(format!("coarse grid level {l} missing from the fine grid")));
    }
    Ok(())
}

/// Compares the two extended systems on every coarse grid pair: sampled and
/// indicator payoffs for the values, shared product densities for the
/// penalties.
pub fn refine_and_compare<R: Rng + ?Sized>(coarse: &OperatorSystem, fine: &OperatorSystem, samples: usize, rng: &mut R) -> Result<RefinementOutcome> {
    check_nested(coarse, fine)?;
    let (ec, ef) = (extend_system(coarse)?, extend_system(fine)?);
    let space = coarse.space();
    let cg = coarse.grid();
    let mut report = ValidationReport::new();
    let mut strict: Option<StrictDecrease> = None;

    let mut values = (true, 0.0f64, String::new(), 0usize);
    for (a, &s) in cg.iter().enumerate() {
        for &t in &cg[a + 1..] {
            let mut payoffs = space
                .level(t)?
                .blocks()
                .iter()
                .map(|b| indicator(space, b, t))
                .collect::<Result<Vec<_>>>()?;
            for _ in 0..samples {
                payoffs.push(RandomVariable::random(space, t, -1.0, 1.0, rng)?);
            }
            for x in payoffs {
                let (vf, vc) = (ef.evaluate(s, t, &x)?, ec.evaluate(s, t, &x)?);
                values.3 += 1;
                for w in 0..vf.len() {
                    let excess = vf[w] - vc[w];
                    values.1 = values.1.max(excess);
                    if excess > 1e-8 && values.0 {
                        values.0 = false;
                        values.2 = format!("({s},{t}) atom {w}: fine {} > coarse {} at X = {:?}", vf[w], vc[w], x.values());
                    }
                    let gap = -excess;
                    if gap > STRICT_GAP && strict.as_ref().is_none_or(|d| gap > d.gap + STRICT_GAP) {
                        strict = Some(StrictDecrease {
                            s,
                            t,
                            x: x.clone(),
                            fine: vf.clone(),
                            coarse: vc.clone(),
                            atom: w,
                            gap,
                        });
                    }
                }
            }
        }
    }
    let detail = if values.0 { format!("{} payoffs, max fine - coarse {:.3e}", values.3, values.1) } else { values.2 };
    report.push("x̂ fine <= x̂ coarse", values.0, CheckKind::Sampled, detail);

    // fine factors regrouped into coarse factors describe the same density
    let mut pens = (true, 0usize, String::new());
    for (a, &s) in cg.iter().enumerate() {
        for &t in &cg[a + 1..] {
            let (i, j) = ef.span(s, t)?;
            for _ in 0..samples {
                let fs = sample_factors(&ef, i, j, rng)?;
                let fine_pen = ef.penalty(s, t, &fs)?;
                let grouped: Vec<RandomVariable> = cg
                    .windows(2)
                    .filter(|w| w[0] >= s && w[1] <= t)
                    .map(|w| -> Result<RandomVariable> {
                        let (p, q) = (ef.span(w[0], w[1])?.0, ef.span(w[0], w[1])?.1);
                        Ok(product(space, &fs[p - i..q - i], w[1]))
                    })
                    .collect::<Result<_>>()?;
                let coarse_pen = ec.penalty(s, t, &grouped)?;
                pens.1 += 1;
                for w in 0..space.n_atoms() {
                    let ok = match (fine_pen.at(w).finite(), coarse_pen.at(w).finite()) {
                        (_, None) => !fine_pen.at(w).is_finite(),
                        (None, Some(_)) => true,
                        (Some(f), Some(c)) => f >= c - 1e-8,
                    };
                    if !ok && pens.0 {
                        pens.0 = false;
                        pens.2 = format!("({s},{t}) atom {w}: fine {} < coarse {}", fine_pen.at(w), coarse_pen.at(w));
                    }
                }
            }
        }
    }
    let detail = if pens.0 { format!("{} shared densities", pens.1) } else { pens.2 };
    report.push("penalty fine >= penalty coarse", pens.0, CheckKind::Sampled, detail);
    Ok(RefinementOutcome { report, strict })
}

/// `x̂^n_{s,t}(X)` along a nested sequence of systems, coarsest first.
pub fn refinement_trajectory(systems: &[OperatorSystem], s: usize, t: usize, x: &RandomVariable) -> Result<Trajectory> {
    for w in systems.windows(2) {
        check_nested(&w[0], &w[1])?;
    }
    let values = systems
        .iter()
        .map(|sys| extend_system(sys)?.evaluate(s, t, x))
        .collect::<Result<Vec<_>>>()?;
    let non_increasing = values
        .windows(2)
        .all(|w| w[1].values().iter().zip(w[0].values()).all(|(f, c)| *f <= c + 1e-8));
    Ok(Trajectory { values, non_increasing })
}

#[cfg(test)]
mod tests {
    use super::super::fixtures::*;
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn strict_decrease_on_restricted_fixture() {
        let fine = fix_c_restricted((0.2, 5.0));
        let coarse = fine.coarsen(&[0, 2]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = refine_and_compare(&coarse, &fine, 20, &mut rng).unwrap();
        assert!(out.report.all_passed(), "{:#?}", out.report);
        let w = out.strict.expect("strict decrease");
        assert!(w.gap > 0.05, "{w:?}");

        let s = fine.space().clone();
        let x = RandomVariable::finest(&s, vec![0.0, 0.0, 1.0, 0.0]).unwrap();
        let (vf, vc) = (extend_system(&fine).unwrap().evaluate(0, 2, &x).unwrap(), extend_system(&coarse).unwrap().evaluate(0, 2, &x).unwrap());
        assert!((vf[0] - 0.375).abs() < 1e-9, "{vf:?}");
        assert!(vc[0] >= 0.45 - 1e-9, "{vc:?}");
    }

    #[test]
    fn identical_grids_agree() {
        let sys = fix_c_restricted((0.2, 5.0));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let out = refine_and_compare(&sys, &sys, 10, &mut rng).unwrap();
        assert!(out.report.all_passed());
        assert!(out.strict.is_none());
    }

    #[test]
    fn linear_system_has_no_gap() {
        let fine = fix_c_linear();
        let coarse = fine.coarsen(&[0, 2]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let out = refine_and_compare(&coarse, &fine, 10, &mut rng).unwrap();
        assert!(out.report.all_passed());
        assert!(out.strict.is_none());
    }

    #[test]
    fn trajectory_and_nesting() {
        let fine = fix_c_restricted((0.2, 5.0));
        let coarse = fine.coarsen(&[0, 2]).unwrap();
        let x = RandomVariable::finest(fine.space(), vec![0.0, 0.0, 1.0, 0.0]).unwrap();
        let tr = refinement_trajectory(&[coarse.clone(), fine.clone()], 0, 2, &x).unwrap();
        assert!(tr.non_increasing && tr.values.len() == 2);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(refine_and_compare(&fine, &coarse, 1, &mut rng).is_err());
    }
}
