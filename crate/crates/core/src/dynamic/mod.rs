//! Systems of operators on a finite time grid: validation, time-consistent
//! extension by backward composition, product-density pricing, penalty
//! cocycles and grid refinement.

mod extend;
mod refine;

pub use extend::{check_cocycle_and_local, check_composed_extension, extend_system, ExtendedSystem, Price};
pub use refine::{refine_and_compare, refinement_trajectory, RefinementOutcome, StrictDecrease, Trajectory};

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::Rng;

use crate::error::{Error, Result};
use crate::operator::{check_mm1, check_sandwich, validate_operator, BoundPair, PolyhedralOperator};
use crate::prob::{FilteredSpace, RandomVariable, TOL};
use crate::report::{CheckKind, ValidationReport};

#[derive(Clone, Debug)]
pub struct OperatorSystem {
    space: Arc<FilteredSpace>,
    grid: Vec<usize>,
    one_step: Vec<PolyhedralOperator>,
    long_ops: BTreeMap<(usize, usize), PolyhedralOperator>,
    bounds: BTreeMap<(usize, usize), BoundPair>,
}

impl OperatorSystem {
    /// `grid` lists level indices, starting at 0 and ending at the last level.
    /// `one_step[i]` maps level `grid[i + 1]` to `grid[i]`; bounds are needed
    /// for every grid pair.
    pub fn new(
        space: Arc<FilteredSpace>,
        grid: Vec<usize>,
        one_step: Vec<PolyhedralOperator>,
        long_ops: BTreeMap<(usize, usize), PolyhedralOperator>,
        bounds: BTreeMap<(usize, usize), BoundPair>,
    ) -> Result<Self> {
        if grid.len() < 2 {
            return Err(Error::InvalidSystem("grid needs at least two levels".into()));
        }
        if grid[0] != 0 || *grid.last().unwrap() != space.last_level() {
            return Err(Error::InvalidSystem(format!(
                "grid must start at level 0 and end at level {}",
                space.last_level()
            )));
        }
        if grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidSystem("grid must be strictly increasing".into()));
        }
        if one_step.len() != grid.len() - 1 {
            return Err(Error::InvalidSystem(format!(
                "expected {} one-step operators, got {}",
                grid.len() - 1,
                one_step.len()
            )));
        }
        for (i, op) in one_step.iter().enumerate() {
            if (op.level_a(), op.level_b()) != (grid[i], grid[i + 1]) {
                return Err(Error::InvalidSystem(format!(
                    "one-step operator {i} acts between levels ({}, {}), expected ({}, {})",
                    op.level_a(),
                    op.level_b(),
                    grid[i],
                    grid[i + 1]
                )));
            }
        }
        for (&(s, t), op) in &long_ops {
            if !grid.contains(&s) || !grid.contains(&t) || s >= t {
                return Err(Error::InvalidSystem(format!("long operator ({s}, {t}) is not a grid pair")));
            }
            if (op.level_a(), op.level_b()) != (s, t) {
                return Err(Error::InvalidSystem(format!("long operator ({s}, {t}) has levels ({}, {})", op.level_a(), op.level_b())));
            }
        }
        for (i, &s) in grid.iter().enumerate() {
            for &t in &grid[i + 1..] {
                let b = bounds
                    .get(&(s, t))
                    .ok_or_else(|| Error::InvalidSystem(format!("no bounds for pair ({s}, {t})")))?;
                if (b.level_a(), b.level_b()) != (s, t) {
                    return Err(Error::InvalidSystem(format!("bounds for ({s}, {t}) act between ({}, {})", b.level_a(), b.level_b())));
                }
            }
        }
        Ok(Self {
            space,
            grid,
            one_step,
            long_ops,
            bounds,
        })
    }

    pub fn space(&self) -> &Arc<FilteredSpace> {
        &self.space
    }

    pub fn grid(&self) -> &[usize] {
        &self.grid
    }

    pub fn one_step(&self) -> &[PolyhedralOperator] {
        &self.one_step
    }

    pub fn long_ops(&self) -> &BTreeMap<(usize, usize), PolyhedralOperator> {
        &self.long_ops
    }

    pub fn bounds(&self) -> &BTreeMap<(usize, usize), BoundPair> {
        &self.bounds
    }

    /// Position of `level` on the grid.
    pub fn position(&self, level: usize) -> Result<usize> {
        self.grid.iter().position(|&g| g == level).ok_or_else(|| Error::InvalidLevel {
            level,
            reason: format!("not on the grid {:?}", self.grid),
        })
    }

    /// The declared operator for a grid pair, if any.
    pub fn operator(&self, s: usize, t: usize) -> Option<&PolyhedralOperator> {
        let (i, j) = (self.position(s).ok()?, self.position(t).ok()?);
        if j == i + 1 {
            Some(&self.one_step[i])
        } else {
            self.long_ops.get(&(s, t))
        }
    }

    /// The system restricted to a coarser grid. Coarse one-step operators are
    /// declared long operators where available, else compositions of the
    /// one-step operators in between; bounds are inherited.
    pub fn coarsen(&self, coarse_grid: &[usize]) -> Result<Self> {
        let pos = coarse_grid.iter().map(|&l| self.position(l)).collect::<Result<Vec<_>>>()?;
        let mut ops = Vec::new();
        for w in pos.windows(2) {
            let (i, j) = (w[0], w[1]);
            let (s, t) = (self.grid[i], self.grid[j]);
            let op = match self.operator(s, t) {
                Some(op) => op.clone(),
                None => {
                    let mut op = self.one_step[j - 1].clone();
                    for l in (i..j - 1).rev() {
                        op = PolyhedralOperator::compose(&self.one_step[l], &op)?;
                    }
                    op
                }
            };
            ops.push(op);
        }
        let bounds = self
            .bounds
            .iter()
            .filter(|((s, t), _)| coarse_grid.contains(s) && coarse_grid.contains(t))
            .map(|(k, v)| (*k, v.clone()))
            .collect();
        Self::new(self.space.clone(), coarse_grid.to_vec(), ops, BTreeMap::new(), bounds)
    }

    fn basis_probes(op: &PolyhedralOperator) -> Vec<RandomVariable> {
        let mut out = Vec::new();
        for b in op.domain().basis() {
            out.push(b.scale(-1.0));
            out.push(b);
        }
        out
    }
}

/// Per-pair axioms and sandwich, the mM1 condition of the bounds, nestedness
/// of the domains, and consistency of declared long operators.
pub fn validate_system<R: Rng + ?Sized>(sys: &OperatorSystem, samples: usize, rng: &mut R) -> Result<ValidationReport> {
    let mut report = ValidationReport::new();
    let grid = sys.grid();
    let mut pairs: Vec<(usize, usize, &PolyhedralOperator)> = grid.windows(2).zip(sys.one_step()).map(|(w, op)| (w[0], w[1], op)).collect();
    pairs.extend(sys.long_ops().iter().map(|(&(s, t), op)| (s, t, op)));
    for &(s, t, op) in &pairs {
        report.absorb(&format!("x_{{{s},{t}}}: "), validate_operator(op));
        let check = check_sandwich(op, &sys.bounds()[&(s, t)])?;
        let detail = match &check.witness {
            Some(w) => format!(
                "block {}, piece {}: m(Z)+x(X) = {} > M(Y) = {} at X = {:?}, Z = {:?}, Y = {:?}",
                w.block,
                w.piece,
                w.lhs,
                w.rhs,
                w.x.values(),
                w.z.values(),
                w.y.values()
            ),
            None if check.fast_path => "every piece density admissible".into(),
            None => "cone programs have value 0".into(),
        };
        report.push(format!("x_{{{s},{t}}}: sandwich"), check.holds, CheckKind::Exact, detail);
    }
    report.absorb("mM1: ", check_mm1(sys.space(), grid, sys.bounds(), samples, rng)?);

    let last = sys.one_step().last().expect("nonempty grid").domain();
    let mut nested = (true, String::new());
    for op in sys.one_step() {
        for b in op.domain().basis() {
            if !last.contains(&b, TOL) && nested.0 {
                nested = (false, format!("L_{} not inside L_T: {:?}", op.level_b(), b.values()));
            }
        }
    }
    report.push("L_t inside L_T", nested.0, CheckKind::Exact, nested.1);

    // x_{s,u} = x_{s,t} o x_{t,u} wherever both sides are declared and composable
    let mut consistent = (true, String::new(), 0usize);
    for (&(s, u), long) in sys.long_ops() {
        for &t in grid.iter().filter(|&&t| s < t && t < u) {
            let (Some(outer), Some(inner)) = (sys.operator(s, t), sys.operator(t, u)) else {
                continue;
            };
            for x in OperatorSystem::basis_probes(long) {
                let y = inner.evaluate(&x)?;
                if outer.check_domain(&y).is_err() {
                    continue;
                }
                consistent.2 += 1;
                let lhs = long.evaluate(&x)?;
                let rhs = outer.evaluate(&y)?;
                if lhs.max_abs_diff(&rhs) > TOL && consistent.0 {
                    consistent.0 = false;
                    consistent.1 = format!(
                        "x_{{{s},{u}}}(X) = {:?} but x_{{{s},{t}}}(x_{{{t},{u}}}(X)) = {:?} at X = {:?}",
                        lhs.values(),
                        rhs.values(),
                        x.values()
                    );
                }
            }
        }
    }
    let detail = if consistent.0 { format!("{} composable probes", consistent.2) } else { consistent.1 };
    report.push("time-consistency of declared operators", consistent.0, CheckKind::Exact, detail);

    // x_{s,t} is the restriction of x_{s,T} to L_t
    let big_t = *grid.last().unwrap();
    let mut restrict = (true, String::new());
    for &s in &grid[..grid.len() - 1] {
        let Some(whole) = sys.operator(s, big_t) else { continue };
        for &t in grid.iter().filter(|&&t| s < t && t < big_t) {
            let Some(part) = sys.operator(s, t) else { continue };
            for x in OperatorSystem::basis_probes(part) {
                let diff = whole.evaluate(&x)?.max_abs_diff(&part.evaluate(&x)?);
                if diff > TOL && restrict.0 {
                    restrict = (false, format!("x_{{{s},{big_t}}} and x_{{{s},{t}}} differ by {diff:.3e} at X = {:?}", x.values()));
                }
            }
        }
    }
    report.push("x_{s,t} restricts x_{s,T}", restrict.0, CheckKind::Exact, restrict.1);
    Ok(report)
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::*;
    use crate::subspace::Subspace;

    pub fn fix_c_space() -> Arc<FilteredSpace> {
        Arc::new(
            FilteredSpace::uniform(
                4,
                vec![
                    vec![vec![0, 1, 2, 3]],
                    vec![vec![0, 1], vec![2, 3]],
                    vec![vec![0], vec![1], vec![2], vec![3]],
                ],
            )
            .unwrap(),
        )
    }

    pub fn bounds(s: &FilteredSpace, long: (f64, f64)) -> BTreeMap<(usize, usize), BoundPair> {
        let mut b = BTreeMap::new();
        b.insert((0, 1), BoundPair::constant(s, 0, 1, 0.5, 2.0).unwrap());
        b.insert((1, 2), BoundPair::constant(s, 1, 2, 0.5, 2.0).unwrap());
        b.insert((0, 2), BoundPair::constant(s, 0, 2, long.0, long.1).unwrap());
        b
    }

    /// Conditional expectations on full spaces.
    pub fn fix_c_linear() -> OperatorSystem {
        let s = fix_c_space();
        let ops = vec![
            PolyhedralOperator::conditional_expectation(Subspace::full(s.clone(), 1, 0).unwrap()).unwrap(),
            PolyhedralOperator::conditional_expectation(Subspace::full(s.clone(), 2, 1).unwrap()).unwrap(),
        ];
        OperatorSystem::new(s.clone(), vec![0, 1, 2], ops, BTreeMap::new(), bounds(&s, (0.25, 4.0))).unwrap()
    }

    /// Second-period domain restricted to the closure of {1, (1,-1,0,0)}.
    pub fn fix_c_restricted(long_bounds: (f64, f64)) -> OperatorSystem {
        let s = fix_c_space();
        let g = RandomVariable::finest(&s, vec![1.0, -1.0, 0.0, 0.0]).unwrap();
        let l2 = Subspace::span_closure(s.clone(), 2, 1, &[g]).unwrap();
        let step2 = PolyhedralOperator::from_vectors(
            l2,
            vec![(vec![1.0; 4], vec![0.0; 4]), (vec![1.2, 0.8, 1.0, 1.0], vec![0.05, 0.05, 0.0, 0.0])],
        )
        .unwrap();
        let step1 = PolyhedralOperator::from_vectors(
            Subspace::full(s.clone(), 1, 0).unwrap(),
            vec![(vec![1.0; 4], vec![0.0; 4]), (vec![1.3, 1.3, 0.7, 0.7], vec![0.02; 4])],
        )
        .unwrap();
        let long = PolyhedralOperator::compose(&step1, &step2).unwrap();
        let mut longs = BTreeMap::new();
        longs.insert((0, 2), long);
        OperatorSystem::new(s.clone(), vec![0, 1, 2], vec![step1, step2], longs, bounds(&s, long_bounds)).unwrap()
    }
}
