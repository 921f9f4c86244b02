//! Minorant/majorant pairs.
//!
//! A linear pair is `m(X) = E[m0 X | A]`, `M(X) = E[M0 X | A]` with
//! `0 <= m0 <= M0`. A polyhedral pair takes the minimum (for `m`) and the
//! maximum (for `M`) of finitely many nonnegative linear kernels, which gives
//! a superlinear minorant and a sublinear majorant.

use std::collections::BTreeMap;

use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::optim::{solve_lp, ConstraintOp, LinearProgram, LpStatus, Sense};
use crate::prob::{FilteredSpace, RandomVariable, TOL};
use crate::report::{CheckKind, ValidationReport};

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum BoundKind {
    Linear {
        lower: RandomVariable,
        upper: RandomVariable,
    },
    Polyhedral {
        lower_kernels: Vec<RandomVariable>,
        upper_kernels: Vec<RandomVariable>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BoundPair {
    level_a: usize,
    level_b: usize,
    kind: BoundKind,
}

fn check_kernel(space: &FilteredSpace, k: &RandomVariable, level_b: usize, what: &str) -> Result<()> {
    if k.len() != space.n_atoms() {
        return Err(Error::Dimension {
            expected: space.n_atoms(),
            got: k.len(),
        });
    }
    if k.level() > level_b {
        return Err(Error::InvalidBounds(format!("{what} is not measurable at level {level_b}")));
    }
    if k.min_value() < 0.0 {
        return Err(Error::InvalidBounds(format!("{what} has a negative entry")));
    }
    Ok(())
}

impl BoundPair {
    pub fn linear(
        space: &FilteredSpace,
        level_a: usize,
        level_b: usize,
        lower: RandomVariable,
        upper: RandomVariable,
    ) -> Result<Self> {
        space.level(level_b)?;
        if level_a > level_b {
            return Err(Error::InvalidLevel {
                level: level_a,
                reason: "bounds map level_b variables to a coarser level".into(),
            });
        }
        check_kernel(space, &lower, level_b, "m0")?;
        check_kernel(space, &upper, level_b, "M0")?;
        if let Some(w) = (0..space.n_atoms()).find(|&w| lower[w] > upper[w]) {
            return Err(Error::InvalidBounds(format!("m0 > M0 at atom {w}")));
        }
        Ok(Self {
            level_a,
            level_b,
            kind: BoundKind::Linear { lower, upper },
        })
    }

    /// Constant linear bounds `m0 = lo`, `M0 = hi`.
    pub fn constant(space: &FilteredSpace, level_a: usize, level_b: usize, lo: f64, hi: f64) -> Result<Self> {
        Self::linear(
            space,
            level_a,
            level_b,
            RandomVariable::constant(space, lo, 0),
            RandomVariable::constant(space, hi, 0),
        )
    }

    pub fn polyhedral(
        space: &FilteredSpace,
        level_a: usize,
        level_b: usize,
        lower_kernels: Vec<RandomVariable>,
        upper_kernels: Vec<RandomVariable>,
    ) -> Result<Self> {
        space.level(level_b)?;
        if level_a > level_b {
            return Err(Error::InvalidLevel {
                level: level_a,
                reason: "bounds map level_b variables to a coarser level".into(),
            });
        }
        if lower_kernels.is_empty() || upper_kernels.is_empty() {
            return Err(Error::InvalidBounds("polyhedral bounds need at least one kernel on each side".into()));
        }
        for k in &lower_kernels {
            check_kernel(space, k, level_b, "minorant kernel")?;
        }
        for k in &upper_kernels {
            check_kernel(space, k, level_b, "majorant kernel")?;
        }
        let pair = Self {
            level_a,
            level_b,
            kind: BoundKind::Polyhedral {
                lower_kernels,
                upper_kernels,
            },
        };
        if let Some(block) = pair.ordering_violation(space)? {
            return Err(Error::InvalidBounds(format!("m(X) > M(X) for some X >= 0 on block {block}")));
        }
        Ok(pair)
    }

    pub fn level_a(&self) -> usize {
        self.level_a
    }

    pub fn level_b(&self) -> usize {
        self.level_b
    }

    pub fn kind(&self) -> &BoundKind {
        &self.kind
    }

    pub fn is_linear(&self) -> bool {
        matches!(self.kind, BoundKind::Linear { .. })
    }

    /// Minorant kernels restricted to `atoms` (one kernel for the linear kind).
    pub fn lower_kernels_on(&self, atoms: &[usize]) -> Vec<Vec<f64>> {
        match &self.kind {
            BoundKind::Linear { lower, .. } => vec![atoms.iter().map(|&w| lower[w]).collect()],
            BoundKind::Polyhedral { lower_kernels, .. } => lower_kernels
                .iter()
                .map(|k| atoms.iter().map(|&w| k[w]).collect())
                .collect(),
        }
    }

    pub fn upper_kernels_on(&self, atoms: &[usize]) -> Vec<Vec<f64>> {
        match &self.kind {
            BoundKind::Linear { upper, .. } => vec![atoms.iter().map(|&w| upper[w]).collect()],
            BoundKind::Polyhedral { upper_kernels, .. } => upper_kernels
                .iter()
                .map(|k| atoms.iter().map(|&w| k[w]).collect())
                .collect(),
        }
    }

    fn apply(&self, space: &FilteredSpace, x: &RandomVariable, upper: bool) -> Result<RandomVariable> {
        if x.len() != space.n_atoms() {
            return Err(Error::Dimension {
                expected: space.n_atoms(),
                got: x.len(),
            });
        }
        let part = space.level(self.level_a)?;
        let mut values = vec![0.0; space.n_atoms()];
        for b in part.blocks() {
            let pi = space.conditional_probs(b);
            let local: Vec<f64> = b.iter().map(|&w| x[w]).collect();
            let v = block_value(&pi, &local, if upper { self.upper_kernels_on(b) } else { self.lower_kernels_on(b) }, upper);
            for &w in b {
                values[w] = v;
            }
        }
        Ok(RandomVariable::from_parts(values, self.level_a))
    }

    /// `m(X)` for `X >= 0`.
    pub fn minorant(&self, space: &FilteredSpace, x: &RandomVariable) -> Result<RandomVariable> {
        self.apply(space, x, false)
    }

    /// `M(X)` for `X >= 0`.
    pub fn majorant(&self, space: &FilteredSpace, x: &RandomVariable) -> Result<RandomVariable> {
        self.apply(space, x, true)
    }

    /// Decides `m(X) <= M(X)` for all `X >= 0`; returns the first offending block.
    ///
    /// For each block solve `max t` s.t. `E[(k - u) X | a] >= t` for all lower
    /// kernels `k` and upper kernels `u`, `X >= 0`, `E[X | a] = 1`.
    pub fn ordering_violation(&self, space: &FilteredSpace) -> Result<Option<usize>> {
        let part = space.level(self.level_a)?;
        for (idx, b) in part.blocks().iter().enumerate() {
            let pi = space.conditional_probs(b);
            let lows = self.lower_kernels_on(b);
            let ups = self.upper_kernels_on(b);
            let n = b.len();
            let mut obj = vec![0.0; n + 1];
            obj[n] = 1.0;
            let mut lp = LinearProgram::new(Sense::Maximize, obj);
            lp.set_free(n);
            for k in &lows {
                for u in &ups {
                    let mut row: Vec<f64> = (0..n).map(|i| pi[i] * (k[i] - u[i])).collect();
                    row.push(-1.0);
                    lp.add_constraint(row, ConstraintOp::Ge, 0.0);
                }
            }
            let mut budget = pi.clone();
            budget.push(0.0);
            lp.add_constraint(budget, ConstraintOp::Eq, 1.0);
            let res = solve_lp(&lp)?;
            if res.status == LpStatus::Optimal && res.value > TOL {
                return Ok(Some(idx));
            }
        }
        Ok(None)
    }
}

fn block_value(pi: &[f64], x: &[f64], kernels: Vec<Vec<f64>>, upper: bool) -> f64 {
    let vals = kernels
        .iter()
        .map(|k| pi.iter().zip(k).zip(x).map(|((p, a), b)| p * a * b).sum::<f64>());
    if upper {
        vals.fold(f64::NEG_INFINITY, f64::max)
    } else {
        vals.fold(f64::INFINITY, f64::min)
    }
}

/// `E[m(1_w)] > 0` for every finest atom `w`.
pub fn check_nondegenerate(space: &FilteredSpace, bounds: &BoundPair) -> bool {
    match bounds.kind() {
        BoundKind::Linear { lower, .. } => lower.values().iter().all(|&v| v > 0.0),
        BoundKind::Polyhedral { lower_kernels, .. } => {
            (0..space.n_atoms()).all(|w| lower_kernels.iter().map(|k| k[w]).fold(f64::INFINITY, f64::min) > 0.0)
        }
    }
}

/// Weak time-consistency of the minorant and majorant families, non-degeneracy
/// of the minorant on the outermost pair, and `m <= M` on every pair.
///
/// Linear families are decided exactly: the composed kernel of `m_{r,s} o m_{s,t}`
/// is the product `m0_{rs} m0_{st}`, so testing finest-atom indicators suffices.
/// Polyhedral families are tested on indicators and `samples` random
/// nonnegative vectors, and the entries say so.
pub fn check_mm1<R: Rng + ?Sized>(
    space: &FilteredSpace,
    grid: &[usize],
    family: &BTreeMap<(usize, usize), BoundPair>,
    samples: usize,
    rng: &mut R,
) -> Result<ValidationReport> {
    for (i, &s) in grid.iter().enumerate() {
        for &t in &grid[i + 1..] {
            if !family.contains_key(&(s, t)) {
                return Err(Error::InvalidSystem(format!("no bounds for pair ({s}, {t})")));
            }
        }
    }
    let mut report = ValidationReport::new();
    let n = space.n_atoms();
    let all_linear = family.values().all(BoundPair::is_linear);
    let kind = if all_linear { CheckKind::Exact } else { CheckKind::Sampled };

    let mut tests: Vec<RandomVariable> = (0..n)
        .map(|w| {
            let mut v = vec![0.0; n];
            v[w] = 1.0;
            RandomVariable::from_parts(v, space.last_level())
        })
        .collect();
    if !all_linear {
        for _ in 0..samples {
            let v = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
            tests.push(RandomVariable::from_parts(v, space.last_level()));
        }
    }

    let mut wtc_m = (true, String::new());
    let mut wtc_big_m = (true, String::new());
    for (i, &r) in grid.iter().enumerate() {
        for (j, &s) in grid.iter().enumerate().skip(i + 1) {
            for &t in &grid[j + 1..] {
                let (rs, st, rt) = (&family[&(r, s)], &family[&(s, t)], &family[&(r, t)]);
                for x in &tests {
                    let x = &project_to_level(space, x, t)?;
                    let lhs = rs.minorant(space, &st.minorant(space, x)?)?;
                    let rhs = rt.minorant(space, x)?;
                    if wtc_m.0 && (0..n).any(|w| lhs[w] < rhs[w] - TOL) {
                        wtc_m = (false, format!("m_{{{r},{s}}} o m_{{{s},{t}}} < m_{{{r},{t}}} at X = {:?}", x.values()));
                    }
                    let lhs = rs.majorant(space, &st.majorant(space, x)?)?;
                    let rhs = rt.majorant(space, x)?;
                    if wtc_big_m.0 && (0..n).any(|w| lhs[w] > rhs[w] + TOL) {
                        wtc_big_m = (false, format!("M_{{{r},{s}}} o M_{{{s},{t}}} > M_{{{r},{t}}} at X = {:?}", x.values()));
                    }
                }
            }
        }
    }
    report.push("minorant weak time-consistency", wtc_m.0, kind, wtc_m.1);
    report.push("majorant weak time-consistency", wtc_big_m.0, kind, wtc_big_m.1);

    let outer = &family[&(grid[0], *grid.last().expect("nonempty grid"))];
    report.push(
        "outer minorant non-degenerate",
        check_nondegenerate(space, outer),
        CheckKind::Exact,
        "",
    );
    let mut ordered = (true, String::new());
    for (&(s, t), b) in family {
        if let Some(block) = b.ordering_violation(space)? {
            ordered = (false, format!("pair ({s}, {t}), block {block}"));
            break;
        }
    }
    report.push("m <= M on every pair", ordered.0, CheckKind::Exact, ordered.1);
    report.push(
        "majorant regularity",
        true,
        CheckKind::Structural,
        "monotone convergence on finitely many atoms",
    );
    Ok(report)
}

/// Averages a finest-level test vector down to the measurability level `t`.
fn project_to_level(space: &FilteredSpace, x: &RandomVariable, t: usize) -> Result<RandomVariable> {
    let values = space.cond_expectation_values(x.values(), t)?;
    Ok(RandomVariable::from_parts(values, t))
}
