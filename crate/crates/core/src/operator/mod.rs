//! Max-of-affine operators `x(X) = max_j (E[f_j X | A] - c_j)` on a subspace,
//! their bounds, and exact checks of the axioms.

mod bounds;
mod polytope;
mod sandwich;

pub use bounds::{check_mm1, check_nondegenerate, BoundKind, BoundPair};
pub use polytope::{DensityPolytope, PolytopeBlock};
pub use sandwich::{check_sandwich, SandwichCheck, SandwichWitness};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::prob::{FilteredSpace, RandomVariable, TOL};
use crate::report::{CheckKind, ValidationReport};
use crate::subspace::Subspace;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Piece {
    pub density: RandomVariable,
    pub penalty: RandomVariable,
}

/// Everything needed to work on one level-A block in subspace coordinates.
#[derive(Clone, Debug)]
pub struct OperatorBlock {
    pub atoms: Vec<usize>,
    pub cond_probs: Vec<f64>,
    /// Orthonormal basis of the subspace on the block (conditional weights).
    pub basis: Vec<Vec<f64>>,
    /// `densities[j][k]`: piece `j` at the block's `k`-th atom.
    pub densities: Vec<Vec<f64>>,
    pub penalties: Vec<f64>,
    /// `moments[j][i] = E[f_j b_i | block]`.
    pub moments: Vec<Vec<f64>>,
}

impl OperatorBlock {
    fn new(atoms: Vec<usize>, cond_probs: Vec<f64>, basis: Vec<Vec<f64>>, pieces: &[Piece]) -> Self {
        let densities: Vec<Vec<f64>> = pieces
            .iter()
            .map(|p| atoms.iter().map(|&w| p.density[w]).collect())
            .collect();
        let penalties = pieces.iter().map(|p| p.penalty[atoms[0]]).collect();
        let moments = densities
            .iter()
            .map(|f| basis.iter().map(|b| cond_dot(&cond_probs, f, b)).collect())
            .collect();
        Self {
            atoms,
            cond_probs,
            basis,
            densities,
            penalties,
            moments,
        }
    }

    /// `E[f_j X | block] - c_j` for every piece.
    pub fn scores(&self, x: &[f64]) -> Vec<f64> {
        self.densities
            .iter()
            .zip(&self.penalties)
            .map(|(f, c)| cond_dot(&self.cond_probs, f, x) - c)
            .collect()
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        self.scores(x).into_iter().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Value from subspace coordinates.
    pub fn value_at_coords(&self, theta: &[f64]) -> f64 {
        self.moments
            .iter()
            .zip(&self.penalties)
            .map(|(m, c)| m.iter().zip(theta).map(|(a, b)| a * b).sum::<f64>() - c)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn combine(&self, theta: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.atoms.len()];
        for (t, b) in theta.iter().zip(&self.basis) {
            for (o, bi) in out.iter_mut().zip(b) {
                *o += t * bi;
            }
        }
        out
    }
}

/// Conditional inner product on a block: `sum_k pi_k a_k b_k`.
pub fn cond_dot(pi: &[f64], a: &[f64], b: &[f64]) -> f64 {
    pi.iter().zip(a).zip(b).map(|((p, x), y)| p * x * y).sum()
}

#[derive(Clone, Debug)]
pub struct PolyhedralOperator {
    domain: Subspace,
    pieces: Vec<Piece>,
    blocks: Vec<OperatorBlock>,
}

impl PolyhedralOperator {
    /// Checks shapes and measurability only; the axioms are reported by
    /// [`validate_operator`].
    pub fn new(domain: Subspace, pieces: Vec<Piece>) -> Result<Self> {
        if pieces.is_empty() {
            return Err(Error::Empty("operator needs at least one piece".into()));
        }
        let n = domain.space().n_atoms();
        for (j, p) in pieces.iter().enumerate() {
            for v in [&p.density, &p.penalty] {
                if v.len() != n {
                    return Err(Error::Dimension {
                        expected: n,
                        got: v.len(),
                    });
                }
            }
            if p.density.level() > domain.level_b() {
                return Err(Error::InvalidOperator(format!(
                    "density of piece {j} is not measurable at level {}",
                    domain.level_b()
                )));
            }
            if p.penalty.level() > domain.level_a() {
                return Err(Error::InvalidOperator(format!(
                    "penalty of piece {j} is not measurable at level {}",
                    domain.level_a()
                )));
            }
        }
        let blocks = domain
            .blocks()
            .iter()
            .map(|b| OperatorBlock::new(b.atoms.clone(), b.cond_probs.clone(), b.vectors.clone(), &pieces))
            .collect();
        Ok(Self { domain, pieces, blocks })
    }

    /// Pieces given as raw `(density, penalty)` vectors, checked for
    /// measurability at level B and level A respectively.
    pub fn from_vectors(domain: Subspace, pieces: Vec<(Vec<f64>, Vec<f64>)>) -> Result<Self> {
        let space = domain.space().clone();
        let pieces = pieces
            .into_iter()
            .map(|(f, c)| {
                Ok(Piece {
                    density: RandomVariable::new(&space, f, domain.level_b())?,
                    penalty: RandomVariable::new(&space, c, domain.level_a())?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(domain, pieces)
    }

    /// `X -> E[X | A]` on the domain.
    pub fn conditional_expectation(domain: Subspace) -> Result<Self> {
        let space = domain.space().clone();
        let piece = Piece {
            density: RandomVariable::constant(&space, 1.0, 0),
            penalty: RandomVariable::constant(&space, 0.0, 0),
        };
        Self::new(domain, vec![piece])
    }

    pub fn domain(&self) -> &Subspace {
        &self.domain
    }

    pub fn space(&self) -> &FilteredSpace {
        self.domain.space()
    }

    pub fn level_a(&self) -> usize {
        self.domain.level_a()
    }

    pub fn level_b(&self) -> usize {
        self.domain.level_b()
    }

    pub fn pieces(&self) -> &[Piece] {
        &self.pieces
    }

    pub fn blocks(&self) -> &[OperatorBlock] {
        &self.blocks
    }

    /// Domain membership with a tolerance relative to the size of `x`.
    pub fn check_domain(&self, x: &RandomVariable) -> Result<()> {
        let n = self.space().n_atoms();
        if x.len() != n {
            return Err(Error::Dimension { expected: n, got: x.len() });
        }
        let residual = self.domain.residual_norm(x);
        if residual >= TOL * x.norm(self.space()).max(1.0) {
            return Err(Error::OutsideDomain { residual });
        }
        Ok(())
    }

    pub fn evaluate(&self, x: &RandomVariable) -> Result<RandomVariable> {
        self.check_domain(x)?;
        let mut values = vec![0.0; self.space().n_atoms()];
        for blk in &self.blocks {
            let local: Vec<f64> = blk.atoms.iter().map(|&w| x[w]).collect();
            let v = blk.value(&local);
            for &w in &blk.atoms {
                values[w] = v;
            }
        }
        Ok(RandomVariable::from_parts(values, self.level_a()))
    }

    /// `outer o inner` as a polyhedral operator on `inner`'s domain.
    ///
    /// With `outer = max_i (E[g_i . | R] - d_i)` and nonnegative `g_i`, the
    /// composition on an `R`-block is the max over `i` and over a choice of
    /// inner piece per intermediate block of product-density pieces. Local
    /// piece lists of different `R`-blocks are spliced into global pieces.
    pub fn compose(outer: &PolyhedralOperator, inner: &PolyhedralOperator) -> Result<Self> {
        if outer.level_b() != inner.level_a() {
            return Err(Error::InvalidOperator(format!(
                "cannot compose: outer maps level {} but inner lands in level {}",
                outer.level_b(),
                inner.level_a()
            )));
        }
        if outer.pieces.iter().any(|p| p.density.min_value() < 0.0) {
            return Err(Error::InvalidOperator("composition needs nonnegative outer densities".into()));
        }
        let space = inner.space();
        let n = space.n_atoms();
        let mid = space.level(inner.level_a())?;
        let top = space.level(outer.level_a())?;
        let mut local: Vec<(Vec<usize>, Vec<(Vec<f64>, f64)>)> = Vec::new();
        for r_block in top.blocks() {
            let pi_r = |atoms: &[usize]| space.prob_of(atoms) / space.prob_of(r_block);
            let mids: Vec<&Vec<usize>> = mid.blocks().iter().filter(|b| r_block.contains(&b[0])).collect();
            let mut out = Vec::new();
            for p in &outer.pieces {
                let mut choice = vec![0usize; mids.len()];
                loop {
                    let mut f = vec![0.0; n];
                    let mut c = p.penalty[r_block[0]];
                    for (b, &j) in mids.iter().zip(&choice) {
                        let q = &inner.pieces[j];
                        for &w in b.iter() {
                            f[w] = p.density[w] * q.density[w];
                        }
                        c += pi_r(b) * p.density[b[0]] * q.penalty[b[0]];
                    }
                    out.push((f, c));
                    // odometer over inner-piece choices
                    let mut pos = 0;
                    while pos < choice.len() {
                        choice[pos] += 1;
                        if choice[pos] < inner.pieces.len() {
                            break;
                        }
                        choice[pos] = 0;
                        pos += 1;
                    }
                    if pos == choice.len() {
                        break;
                    }
                }
            }
            local.push((r_block.clone(), out));
        }
        let count = local.iter().map(|(_, v)| v.len()).max().unwrap_or(0);
        let pieces = (0..count)
            .map(|k| {
                let mut f = vec![0.0; n];
                let mut c = vec![0.0; n];
                for (atoms, list) in &local {
                    let (lf, lc) = &list[k.min(list.len() - 1)];
                    for &w in atoms {
                        f[w] = lf[w];
                        c[w] = *lc;
                    }
                }
                Piece {
                    density: RandomVariable::from_parts(f, inner.level_b()),
                    penalty: RandomVariable::from_parts(c, outer.level_a()),
                }
            })
            .collect();
        Self::new(inner.domain.with_level_a(outer.level_a())?, pieces)
    }
}

/// Pass/fail per axiom. Monotonicity, the normalisation `E[f_j|A] = 1` and the
/// projection property are decided from the piece data; convexity, weak
/// A-homogeneity and lower semicontinuity hold by the form of the operator.
pub fn validate_operator(op: &PolyhedralOperator) -> ValidationReport {
    let mut report = ValidationReport::new();
    let space = op.space();

    let negative: Vec<String> = op
        .pieces
        .iter()
        .enumerate()
        .filter_map(|(j, p)| {
            let w = (0..p.density.len()).find(|&w| p.density[w] < 0.0)?;
            Some(format!("piece {j} has density {} at atom {w}", p.density[w]))
        })
        .collect();
    report.push("monotone (densities >= 0)", negative.is_empty(), CheckKind::Exact, negative.join("; "));

    let mut worst = (0.0f64, String::new());
    for (j, p) in op.pieces.iter().enumerate() {
        let e = space
            .cond_expectation_values(p.density.values(), op.level_a())
            .expect("level validated");
        for (w, v) in e.iter().enumerate() {
            if (v - 1.0).abs() > worst.0 {
                worst = ((v - 1.0).abs(), format!("piece {j}: E[f|A] = {v} at atom {w}"));
            }
        }
    }
    report.push("densities normalised (E[f|A] = 1)", worst.0 <= TOL, CheckKind::Exact, if worst.0 > TOL { worst.1 } else { String::new() });

    let bad: Vec<String> = op
        .blocks
        .iter()
        .enumerate()
        .filter_map(|(k, b)| {
            let min = b.penalties.iter().copied().fold(f64::INFINITY, f64::min);
            (min.abs() > TOL).then(|| format!("block {k}: x(0) = {}", -min))
        })
        .collect();
    report.push("projection (min penalty = 0 per block)", bad.is_empty(), CheckKind::Exact, bad.join("; "));

    for (name, ok) in op.domain.check_invariants() {
        report.push(format!("domain: {name}"), ok, CheckKind::Exact, "");
    }
    report.push("convex", true, CheckKind::Structural, "maximum of affine maps");
    report.push("weak A-homogeneous", true, CheckKind::Structural, "evaluated block by block");
    report.push("lower semicontinuous", true, CheckKind::Structural, "finite dimension");
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::sync::Arc;

    fn fix_a() -> Arc<FilteredSpace> {
        Arc::new(FilteredSpace::uniform(2, vec![vec![vec![0, 1]], vec![vec![0], vec![1]]]).unwrap())
    }

    fn fix_c() -> Arc<FilteredSpace> {
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

    fn fix_a_op() -> PolyhedralOperator {
        let s = fix_a();
        let dom = Subspace::full(s, 1, 0).unwrap();
        PolyhedralOperator::from_vectors(dom, vec![(vec![1.0, 1.0], vec![0.0; 2]), (vec![1.5, 0.5], vec![0.25; 2])]).unwrap()
    }

    fn rv(s: &FilteredSpace, v: &[f64]) -> RandomVariable {
        RandomVariable::finest(s, v.to_vec()).unwrap()
    }

    /// Hand oracle: enumerate the pieces.
    fn oracle(x: [f64; 2]) -> f64 {
        let a = 0.5 * (x[0] + x[1]);
        let b = 0.5 * (1.5 * x[0] + 0.5 * x[1]) - 0.25;
        a.max(b)
    }

    #[test]
    fn evaluate_examples() {
        let op = fix_a_op();
        let s = op.space().clone();
        for (x, want) in [([2.0, 0.0], 1.25), ([0.0, 2.0], 1.0)] {
            let v = op.evaluate(&rv(&s, &x)).unwrap();
            assert!((v[0] - want).abs() < 1e-12);
            assert!((v[0] - oracle(x)).abs() < 1e-12);
        }
        for a in [-3.0, 0.0, 0.7, 5.0] {
            assert!((op.evaluate(&rv(&s, &[a, a])).unwrap()[0] - a).abs() < 1e-12);
        }
    }

    #[test]
    fn outside_domain() {
        let s = fix_a();
        let dom = Subspace::span_closure(s.clone(), 1, 0, &[]).unwrap();
        let op = PolyhedralOperator::conditional_expectation(dom).unwrap();
        assert!(matches!(op.evaluate(&rv(&s, &[1.0, 0.0])), Err(Error::OutsideDomain { .. })));
    }

    #[test]
    fn validate_examples() {
        assert!(validate_operator(&fix_a_op()).all_passed());
        let s = fix_a();
        let dom = Subspace::full(s.clone(), 1, 0).unwrap();
        let op = PolyhedralOperator::from_vectors(dom.clone(), vec![(vec![1.0, 1.0], vec![0.0; 2]), (vec![-0.5, 2.5], vec![0.0; 2])]).unwrap();
        let r = validate_operator(&op);
        assert!(!r.get("monotone (densities >= 0)").unwrap().passed);
        assert!(r.get("densities normalised (E[f|A] = 1)").unwrap().passed);

        let op = PolyhedralOperator::from_vectors(dom, vec![(vec![1.0, 1.0], vec![0.1; 2]), (vec![1.5, 0.5], vec![0.2; 2])]).unwrap();
        let r = validate_operator(&op);
        let e = r.get("projection (min penalty = 0 per block)").unwrap();
        assert!(!e.passed);
        assert!(e.detail.contains("-0.1"));
        assert!((op.evaluate(&rv(&s, &[0.0, 0.0])).unwrap()[0] + 0.1).abs() < 1e-12);
    }

    #[test]
    fn rejects_unmeasurable_penalty() {
        let s = fix_a();
        let dom = Subspace::full(s, 1, 0).unwrap();
        assert!(PolyhedralOperator::from_vectors(dom, vec![(vec![1.0, 1.0], vec![0.0, 1.0])]).is_err());
    }

    fn restricted_c() -> (PolyhedralOperator, PolyhedralOperator) {
        let s = fix_c();
        let g = rv(&s, &[1.0, -1.0, 0.0, 0.0]);
        let l2 = Subspace::span_closure(s.clone(), 2, 1, &[g]).unwrap();
        let step2 = PolyhedralOperator::from_vectors(
            l2,
            vec![(vec![1.0; 4], vec![0.0; 4]), (vec![1.2, 0.8, 1.0, 1.0], vec![0.05, 0.05, 0.0, 0.0])],
        )
        .unwrap();
        let l1 = Subspace::full(s, 1, 0).unwrap();
        let step1 = PolyhedralOperator::from_vectors(
            l1,
            vec![(vec![1.0; 4], vec![0.0; 4]), (vec![1.3, 1.3, 0.7, 0.7], vec![0.02; 4])],
        )
        .unwrap();
        (step1, step2)
    }

    #[test]
    fn composition_matches_nested_evaluation() {
        let (step1, step2) = restricted_c();
        let long = PolyhedralOperator::compose(&step1, &step2).unwrap();
        assert_eq!(long.level_a(), 0);
        assert!(validate_operator(&long).all_passed());
        let s = step2.space().clone();
        for x in [[1.0, 0.0, 0.0, 0.0], [0.3, -2.0, 1.0, 1.0], [5.0, 1.0, -1.0, -1.0]] {
            let x = rv(&s, &x);
            let nested = step1.evaluate(&step2.evaluate(&x).unwrap()).unwrap();
            let direct = long.evaluate(&x).unwrap();
            assert!(nested.max_abs_diff(&direct) < 1e-12);
        }
    }

    fn random_instance() -> impl Strategy<Value = (Vec<[f64; 4]>, Vec<[f64; 2]>)> {
        // densities on the binomial tree over the F_1 blocks {0,1}, {2,3}: (1+a, 1-a, 1+b, 1-b)
        (
            proptest::collection::vec((-0.9f64..0.9, -0.9f64..0.9).prop_map(|(a, b)| [1.0 + a, 1.0 - a, 1.0 + b, 1.0 - b]), 1..4),
            proptest::collection::vec((0.0f64..0.5, 0.0f64..0.5).prop_map(|(a, b)| [a, b]), 3),
        )
    }

    fn build(dens: &[[f64; 4]], pens: &[[f64; 2]]) -> PolyhedralOperator {
        let s = fix_c();
        let dom = Subspace::full(s, 2, 1).unwrap();
        let mut pieces: Vec<(Vec<f64>, Vec<f64>)> = dens
            .iter()
            .zip(pens)
            .map(|(f, c)| (f.to_vec(), vec![c[0], c[0], c[1], c[1]]))
            .collect();
        pieces[0].1 = vec![0.0; 4];
        PolyhedralOperator::from_vectors(dom, pieces).unwrap()
    }

    proptest! {
        #[test]
        fn monotone_convex_homogeneous(
            (dens, pens) in random_instance(),
            x in proptest::array::uniform4(-3.0f64..3.0),
            d in proptest::array::uniform4(0.0f64..2.0),
            y in proptest::array::uniform4(-3.0f64..3.0),
            lam in 0.0f64..1.0,
        ) {
            let op = build(&dens, &pens);
            let s = op.space().clone();
            let xv = rv(&s, &x);
            let hi = rv(&s, &[x[0] + d[0], x[1] + d[1], x[2] + d[2], x[3] + d[3]]);
            let (ex, eh) = (op.evaluate(&xv).unwrap(), op.evaluate(&hi).unwrap());
            for w in 0..4 {
                prop_assert!(ex[w] <= eh[w] + 1e-12);
            }
            let yv = rv(&s, &y);
            let mix = xv.scale(lam).add(&yv.scale(1.0 - lam));
            let (em, ey) = (op.evaluate(&mix).unwrap(), op.evaluate(&yv).unwrap());
            for w in 0..4 {
                prop_assert!(em[w] <= lam * ex[w] + (1.0 - lam) * ey[w] + 1e-12);
            }
            for b in [[0usize, 1], [2, 3]] {
                let ind = crate::prob::indicator(&s, &b, 1).unwrap();
                let lhs = op.evaluate(&ind.mul(&xv)).unwrap();
                let rhs = ind.mul(&ex);
                prop_assert!(lhs.max_abs_diff(&rhs) < 1e-12);
            }
            // projection on F_1-measurable members
            let z = RandomVariable::new(&s, vec![x[0], x[0], x[2], x[2]], 1).unwrap();
            prop_assert!(op.evaluate(&z).unwrap().max_abs_diff(&z) < 1e-9);
        }

        #[test]
        fn splice_attains_max_of_scores(
            (dens, pens) in random_instance(),
            x1 in proptest::array::uniform4(-3.0f64..3.0),
            x2 in proptest::array::uniform4(-3.0f64..3.0),
            j in 0usize..3,
        ) {
            let op = build(&dens, &pens);
            let s = op.space().clone();
            let f = rv(&s, &dens[j % dens.len()]);
            let score = |x: &RandomVariable| -> Vec<f64> {
                let e = s.cond_expectation_values(f.mul(x).values(), 1).unwrap();
                let v = op.evaluate(x).unwrap();
                e.iter().zip(v.values()).map(|(a, b)| a - b).collect()
            };
            let (a, b) = (rv(&s, &x1), rv(&s, &x2));
            let (sa, sb) = (score(&a), score(&b));
            let spliced: Vec<f64> = (0..4).map(|w| if sa[w] >= sb[w] { x1[w] } else { x2[w] }).collect();
            let sx = score(&rv(&s, &spliced));
            for w in 0..4 {
                prop_assert!((sx[w] - sa[w].max(sb[w])).abs() < 1e-12);
            }
        }
    }
}
