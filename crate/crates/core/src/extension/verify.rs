use rand::Rng;

use super::extend::ExtendedOperator;
use super::{conjugate, PenaltyValue};
use crate::error::Result;
use crate::operator::{cond_dot, PolyhedralOperator};
use crate::optim::{solve_lp, ExtReal, LinearProgram, LpStatus, Sense};
use crate::prob::{FilteredSpace, RandomVariable};
use crate::report::{CheckKind, ValidationReport};

const REPRESENTATION_TOL: f64 = 1e-7;

/// Random density relative to `level_a`, strictly positive, measurable at `level_b`.
fn random_density<R: Rng + ?Sized>(space: &FilteredSpace, level_a: usize, level_b: usize, rng: &mut R) -> Result<RandomVariable> {
    let raw = RandomVariable::random(space, level_b, 0.1, 1.0, rng)?;
    let mean = space.cond_expectation_values(raw.values(), level_a)?;
    let values = raw.values().iter().zip(&mean).map(|(v, m)| v / m).collect();
    Ok(RandomVariable::from_parts(values, level_b))
}

/// Random member of the operator's domain.
fn random_member<R: Rng + ?Sized>(op: &PolyhedralOperator, rng: &mut R) -> RandomVariable {
    let mut values = vec![0.0; op.space().n_atoms()];
    for blk in op.blocks() {
        let theta: Vec<f64> = (0..blk.basis.len()).map(|_| rng.random_range(-2.0..2.0)).collect();
        for (&w, v) in blk.atoms.iter().zip(blk.combine(&theta)) {
            values[w] = v;
        }
    }
    RandomVariable::from_parts(values, op.level_b())
}

/// Reconstructs `x` on random members of its domain as a maximum over a
/// finite dual family (the pieces' densities and random perturbations of
/// them, each with its minimal penalty), and checks the splice identity of
/// the minimal penalty across level-A blocks.
pub fn verify_representation<R: Rng + ?Sized>(op: &PolyhedralOperator, samples: usize, rng: &mut R) -> Result<ValidationReport> {
    let space = op.space();
    let mut family: Vec<RandomVariable> = op.pieces().iter().map(|p| p.density.clone()).collect();
    for p in op.pieces() {
        if p.density.min_value() < 0.0 {
            continue;
        }
        for _ in 0..3 {
            let g = random_density(space, op.level_a(), op.level_b(), rng)?;
            let eps = rng.random_range(0.0..0.5);
            family.push(p.density.scale(1.0 - eps).add(&g.scale(eps)));
        }
    }
    let mut report = ValidationReport::new();
    let penalties: Vec<Option<PenaltyValue>> = family.iter().map(|f| conjugate(op, f).ok()).collect();

    let mut worst = (0.0f64, String::new());
    for _ in 0..samples {
        let x = random_member(op, rng);
        let direct = op.evaluate(&x)?;
        for blk in op.blocks() {
            let xl: Vec<f64> = blk.atoms.iter().map(|&w| x[w]).collect();
            let a0 = blk.atoms[0];
            let rebuilt = family
                .iter()
                .zip(&penalties)
                .filter_map(|(f, pen)| {
                    let c = pen.as_ref()?.at(a0).finite()?;
                    let fl: Vec<f64> = blk.atoms.iter().map(|&w| f[w]).collect();
                    Some(cond_dot(&blk.cond_probs, &fl, &xl) - c)
                })
                .fold(f64::NEG_INFINITY, f64::max);
            let err = (rebuilt - direct[a0]).abs();
            if err > worst.0 {
                worst = (err, format!("X = {:?}", x.values()));
            }
        }
    }
    report.push(
        "dual reconstruction matches evaluation",
        worst.0 <= REPRESENTATION_TOL,
        CheckKind::Exact,
        format!("max error {:.3e} over {samples} samples{}", worst.0, if worst.0 > REPRESENTATION_TOL { format!("; {}", worst.1) } else { String::new() }),
    );

    // x*(1_A V1 + 1_{A^c} V2) = 1_A x*(V1) + 1_{A^c} x*(V2)
    let part = space.level(op.level_a())?;
    let mut splice_ok = true;
    let mut detail = String::new();
    let valid: Vec<usize> = (0..family.len()).filter(|&i| penalties[i].is_some()).collect();
    for (i, &a) in valid.iter().enumerate() {
        for &b in valid.iter().skip(i + 1).take(4) {
            for blk in part.blocks() {
                let mut v = family[b].values().to_vec();
                for &w in blk {
                    v[w] = family[a][w];
                }
                let spliced = conjugate(op, &RandomVariable::from_parts(v, op.level_b()))?;
                let (pa, pb) = (penalties[a].as_ref().unwrap(), penalties[b].as_ref().unwrap());
                for w in 0..space.n_atoms() {
                    let want = if blk.contains(&w) { pa.at(w) } else { pb.at(w) };
                    if !spliced.at(w).approx_eq(want, 1e-12) {
                        splice_ok = false;
                        detail = format!("densities {a}, {b} spliced on {blk:?}: {} vs {}", spliced.at(w), want);
                    }
                }
            }
        }
    }
    report.push("penalty splice identity", splice_ok, CheckKind::Exact, detail);
    Ok(report)
}

/// Vertices of the density polytope reached by random linear objectives.
pub(crate) fn polytope_vertices<R: Rng + ?Sized>(ext: &ExtendedOperator, count: usize, rng: &mut R) -> Result<Vec<RandomVariable>> {
    let n = ext.space().n_atoms();
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let mut values = vec![0.0; n];
        for blk in ext.polytope().blocks() {
            let obj = (0..blk.n_vars()).map(|_| rng.random_range(-1.0..1.0)).collect();
            let mut lp = LinearProgram::new(Sense::Maximize, obj);
            blk.add_rows(&mut lp, 0);
            let res = solve_lp(&lp)?;
            if let (LpStatus::Optimal, Some(sol)) = (res.status, res.solution) {
                for (k, &w) in blk.atoms.iter().enumerate() {
                    values[w] = sol[k].max(0.0);
                }
            }
        }
        out.push(RandomVariable::from_parts(values, ext.level_b()));
    }
    Ok(out)
}

fn random_nonneg<R: Rng + ?Sized>(space: &FilteredSpace, level: usize, rng: &mut R) -> Result<RandomVariable> {
    RandomVariable::random(space, level, 0.0, 2.0, rng)
}

/// The invariant suite of the maximal extension: extension and projection
/// properties, preserved sandwich, the chain `m(X) <= -x̂(-X) <= x̂(X) <= M(X)`,
/// maximality over polytope vertices, the minimal-penalty identity and
/// attainment (with strict positivity when the minorant is non-degenerate).
pub fn check_extension<R: Rng + ?Sized>(ext: &ExtendedOperator, samples: usize, rng: &mut R) -> Result<ValidationReport> {
    let space = ext.space();
    let (la, lb) = (ext.level_a(), ext.level_b());
    let base = ext.base();
    let bounds = ext.bounds();
    let mut report = ValidationReport::new();

    let mut err = 0.0f64;
    for b in base.domain().basis() {
        for x in [b.clone(), b.scale(-1.0), b.scale(3.0)] {
            err = err.max(ext.evaluate(&x)?.max_abs_diff(&base.evaluate(&x)?));
        }
    }
    report.push("extends x on a basis of L", err <= 1e-7, CheckKind::Exact, format!("max error {err:.3e}"));

    let mut err = 0.0f64;
    for _ in 0..samples.min(50) {
        let x = RandomVariable::random(space, la, -3.0, 3.0, rng)?;
        err = err.max(ext.evaluate(&x)?.max_abs_diff(&x));
    }
    report.push("projection on level-A variables", err <= 1e-7, CheckKind::Sampled, format!("max error {err:.3e}"));

    let mut worst = f64::NEG_INFINITY;
    for _ in 0..samples {
        let z = random_nonneg(space, lb, rng)?;
        let y = random_nonneg(space, lb, rng)?;
        let slack = RandomVariable::random(space, lb, 0.0, 1.0, rng)?;
        let x = y.sub(&z).sub(&slack);
        let lhs = bounds.minorant(space, &z)?.add(&ext.evaluate(&x)?);
        let rhs = bounds.majorant(space, &y)?;
        worst = worst.max((0..space.n_atoms()).map(|w| lhs[w] - rhs[w]).fold(f64::NEG_INFINITY, f64::max));
    }
    report.push("sandwich preserved by the extension", worst <= 1e-8, CheckKind::Sampled, format!("max m(Z)+x̂(X)-M(Y) = {worst:.3e} over {samples} triples"));

    let mut chain = (true, String::new());
    for _ in 0..samples {
        let x = random_nonneg(space, lb, rng)?;
        let m = bounds.minorant(space, &x)?;
        let up = ext.evaluate(&x)?;
        let low = ext.evaluate(&x.scale(-1.0))?.scale(-1.0);
        let big = bounds.majorant(space, &x)?;
        for w in 0..space.n_atoms() {
            if !(m[w] <= low[w] + 1e-8 && low[w] <= up[w] + 1e-8 && up[w] <= big[w] + 1e-8) && chain.0 {
                chain = (false, format!("atom {w}: {} / {} / {} / {}", m[w], low[w], up[w], big[w]));
            }
        }
    }
    report.push("m(X) <= -x̂(-X) <= x̂(X) <= M(X)", chain.0, CheckKind::Sampled, chain.1);

    let vertices = polytope_vertices(ext, 16, rng)?;
    let pens: Vec<PenaltyValue> = vertices.iter().map(|f| ext.penalty(f)).collect::<Result<_>>()?;
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..samples.min(100) {
        let x = RandomVariable::random(space, lb, -2.0, 2.0, rng)?;
        let v = ext.evaluate(&x)?;
        for (f, pen) in vertices.iter().zip(&pens) {
            let e = space.cond_expectation_values(f.mul(&x).values(), la)?;
            for w in 0..space.n_atoms() {
                if let ExtReal::Finite(c) = pen.at(w) {
                    worst = worst.max(e[w] - c - v[w]);
                }
            }
        }
    }
    report.push("maximal over polytope vertices", worst <= 1e-8, CheckKind::Sampled, format!("max E[fX|A]-x*(f)-x̂(X) = {worst:.3e}"));

    let mut gap = 0.0f64;
    let mut members = vertices.clone();
    for w in vertices.windows(2) {
        members.push(w[0].add(&w[1]).scale(0.5));
    }
    for f in &members {
        gap = gap.max(ext.penalty(f)?.max_abs_diff(&ext.conjugate_full(f)?));
    }
    report.push("minimal penalty equals conjugate of the extension", gap <= 1e-6, CheckKind::Sampled, format!("max gap {gap:.3e} over {} densities", members.len()));

    let mut att = (0.0f64, f64::INFINITY, true);
    for _ in 0..samples.min(50) {
        let x = RandomVariable::random(space, lb, -2.0, 2.0, rng)?;
        let a = ext.attain(&x)?;
        let v = ext.evaluate(&x)?;
        let e = space.cond_expectation_values(a.density.mul(&x).values(), la)?;
        for w in 0..space.n_atoms() {
            match a.penalty.at(w) {
                ExtReal::Finite(c) => att.0 = att.0.max((e[w] - c - v[w]).abs()),
                ExtReal::PosInf => att.2 = false,
            }
        }
        att.1 = att.1.min(a.density.min_value());
        att.2 &= ext.polytope().contains(&a.density, 1e-7);
    }
    report.push("attained density reproduces x̂", att.0 <= 1e-7 && att.2, CheckKind::Sampled, format!("max error {:.3e}", att.0));
    if ext.positivity_guaranteed() {
        report.push("attained densities strictly positive", att.1 > 1e-12, CheckKind::Sampled, format!("min density {:.3e}", att.1));
    } else {
        report.push(
            "attained densities strictly positive",
            true,
            CheckKind::Structural,
            format!("not guaranteed: minorant is degenerate (min density {:.3e})", att.1),
        );
    }
    Ok(report)
}
