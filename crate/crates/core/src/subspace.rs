//! Domains of operators: linear subspaces of `L_p(F_b)` that contain the
//! constants and are stable under multiplication by indicators of the atoms
//! of a coarser level `a`.
//!
//! Stability under indicators means the subspace splits as a direct sum of
//! its restrictions to the level-`a` blocks; that decomposition is computed
//! once and every downstream optimization runs block by block.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::prob::{FilteredSpace, RandomVariable, TOL};

/// Rank tolerance used while building bases.
pub const RANK_TOL: f64 = 1e-10;

/// Orthonormal basis of the subspace restricted to one level-`a` block.
///
/// Vectors are indexed like `atoms` and orthonormal for the conditional
/// probabilities on the block.
#[derive(Clone, Debug)]
pub struct BlockBasis {
    pub atoms: Vec<usize>,
    pub cond_probs: Vec<f64>,
    pub vectors: Vec<Vec<f64>>,
}

impl BlockBasis {
    pub fn dim(&self) -> usize {
        self.vectors.len()
    }

    /// Coordinates of `x` (indexed by block position) in the block basis.
    pub fn coordinates(&self, x: &[f64]) -> Vec<f64> {
        self.vectors.iter().map(|b| weighted_dot(&self.cond_probs, b, x)).collect()
    }

    /// Conditional-probability norm of the part of `x` orthogonal to the block span.
    pub fn residual_norm(&self, x: &[f64]) -> f64 {
        let mut r = x.to_vec();
        for b in &self.vectors {
            let c = weighted_dot(&self.cond_probs, b, &r);
            for (ri, bi) in r.iter_mut().zip(b) {
                *ri -= c * bi;
            }
        }
        weighted_dot(&self.cond_probs, &r, &r).sqrt()
    }

    pub fn combine(&self, coords: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.atoms.len()];
        for (c, b) in coords.iter().zip(&self.vectors) {
            for (o, bi) in out.iter_mut().zip(b) {
                *o += c * bi;
            }
        }
        out
    }
}

fn weighted_dot(w: &[f64], x: &[f64], y: &[f64]) -> f64 {
    w.iter().zip(x).zip(y).map(|((p, a), b)| p * a * b).sum()
}

/// Modified Gram-Schmidt with one re-orthogonalization pass.
fn orthonormalize(weights: &[f64], candidates: impl IntoIterator<Item = Vec<f64>>) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = Vec::new();
    for v in candidates {
        let norm0 = weighted_dot(weights, &v, &v).sqrt();
        if norm0 == 0.0 {
            continue;
        }
        let mut r = v;
        for _ in 0..2 {
            for b in &basis {
                let c = weighted_dot(weights, b, &r);
                for (ri, bi) in r.iter_mut().zip(b) {
                    *ri -= c * bi;
                }
            }
        }
        let norm = weighted_dot(weights, &r, &r).sqrt();
        if norm > RANK_TOL * norm0.max(1.0) {
            basis.push(r.into_iter().map(|x| x / norm).collect());
        }
    }
    basis
}

#[derive(Clone, Debug)]
pub struct Subspace {
    space: Arc<FilteredSpace>,
    level_b: usize,
    level_a: usize,
    blocks: Vec<BlockBasis>,
}

impl Subspace {
    /// Smallest subspace containing the constants and `generators` that is
    /// stable under multiplication by indicators of level-`a` blocks.
    pub fn span_closure(
        space: Arc<FilteredSpace>,
        level_b: usize,
        level_a: usize,
        generators: &[RandomVariable],
    ) -> Result<Self> {
        space.level(level_b)?;
        space.level(level_a)?;
        if level_a > level_b {
            return Err(Error::InvalidLevel {
                level: level_a,
                reason: format!("coarse level must not exceed level_b = {level_b}"),
            });
        }
        for g in generators {
            if g.len() != space.n_atoms() {
                return Err(Error::Dimension {
                    expected: space.n_atoms(),
                    got: g.len(),
                });
            }
            if g.level() > level_b {
                return Err(Error::InvalidLevel {
                    level: g.level(),
                    reason: format!("generator is not measurable at level_b = {level_b}"),
                });
            }
        }
        let blocks = space
            .level(level_a)?
            .blocks()
            .iter()
            .map(|atoms| {
                let cond_probs = space.conditional_probs(atoms);
                let candidates = std::iter::once(vec![1.0; atoms.len()])
                    .chain(generators.iter().map(|g| atoms.iter().map(|&w| g[w]).collect()));
                let vectors = orthonormalize(&cond_probs, candidates);
                BlockBasis {
                    atoms: atoms.clone(),
                    cond_probs,
                    vectors,
                }
            })
            .collect();
        Ok(Self {
            space,
            level_b,
            level_a,
            blocks,
        })
    }

    /// All of `L_p(F_b)`.
    pub fn full(space: Arc<FilteredSpace>, level_b: usize, level_a: usize) -> Result<Self> {
        let gens = space
            .level(level_b)?
            .blocks()
            .iter()
            .map(|b| crate::prob::indicator(&space, b, level_b))
            .collect::<Result<Vec<_>>>()?;
        Self::span_closure(space, level_b, level_a, &gens)
    }

    /// The same set of random variables decomposed along a different coarse level.
    ///
    /// Only meaningful when the subspace is also stable under the new level's
    /// indicators, which holds whenever `level_a` is coarser than the current one.
    pub fn with_level_a(&self, level_a: usize) -> Result<Self> {
        Self::span_closure(self.space.clone(), self.level_b, level_a, &self.basis())
    }

    pub fn space(&self) -> &Arc<FilteredSpace> {
        &self.space
    }

    pub fn level_b(&self) -> usize {
        self.level_b
    }

    pub fn level_a(&self) -> usize {
        self.level_a
    }

    pub fn blocks(&self) -> &[BlockBasis] {
        &self.blocks
    }

    pub fn dim(&self) -> usize {
        self.blocks.iter().map(BlockBasis::dim).sum()
    }

    pub fn is_full(&self) -> bool {
        self.dim() == self.space.level(self.level_b).map(|p| p.len()).unwrap_or(0)
    }

    /// Basis orthonormal for the `P`-weighted inner product `E[XY]`.
    pub fn basis(&self) -> Vec<RandomVariable> {
        let n = self.space.n_atoms();
        let mut out = Vec::with_capacity(self.dim());
        for blk in &self.blocks {
            let scale = 1.0 / self.space.prob_of(&blk.atoms).sqrt();
            for v in &blk.vectors {
                let mut values = vec![0.0; n];
                for (&w, &x) in blk.atoms.iter().zip(v) {
                    values[w] = x * scale;
                }
                out.push(RandomVariable::from_parts(values, self.level_b));
            }
        }
        out
    }

    /// Orthogonal projection onto the subspace.
    pub fn project(&self, x: &RandomVariable) -> RandomVariable {
        let mut values = vec![0.0; self.space.n_atoms()];
        for blk in &self.blocks {
            let local: Vec<f64> = blk.atoms.iter().map(|&w| x[w]).collect();
            let proj = blk.combine(&blk.coordinates(&local));
            for (&w, v) in blk.atoms.iter().zip(proj) {
                values[w] = v;
            }
        }
        RandomVariable::from_parts(values, self.level_b)
    }

    /// `P`-weighted norm of the component of `x` orthogonal to the subspace.
    pub fn residual_norm(&self, x: &RandomVariable) -> f64 {
        self.blocks
            .iter()
            .map(|blk| {
                let local: Vec<f64> = blk.atoms.iter().map(|&w| x[w]).collect();
                let r = blk.residual_norm(&local);
                self.space.prob_of(&blk.atoms) * r * r
            })
            .sum::<f64>()
            .sqrt()
    }

    pub fn contains(&self, x: &RandomVariable, tol: f64) -> bool {
        x.len() == self.space.n_atoms() && x.level() <= self.level_b && self.residual_norm(x) < tol
    }

    /// Checks the defining properties: constants inside, indicator stability,
    /// and agreement of the global basis with the per-block decomposition.
    pub fn check_invariants(&self) -> Vec<(String, bool)> {
        let one = RandomVariable::constant(&self.space, 1.0, 0);
        let basis = self.basis();
        let part = self.space.level(self.level_a).expect("level validated at construction");
        let stable = part.blocks().iter().all(|b| {
            basis.iter().all(|x| {
                let mut v = x.values().to_vec();
                for (w, vi) in v.iter_mut().enumerate() {
                    if !b.contains(&w) {
                        *vi = 0.0;
                    }
                }
                self.contains(&RandomVariable::from_parts(v, self.level_b), TOL)
            })
        });
        let mut orthonormal = true;
        for (i, x) in basis.iter().enumerate() {
            for (j, y) in basis.iter().enumerate() {
                let target = if i == j { 1.0 } else { 0.0 };
                orthonormal &= (self.space.inner(x.values(), y.values()) - target).abs() < TOL;
            }
        }
        vec![
            ("constants in domain".to_string(), self.contains(&one, TOL)),
            ("indicator stability".to_string(), stable),
            ("orthonormal basis".to_string(), orthonormal),
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prob::indicator;

    fn fix_a() -> Arc<FilteredSpace> {
        Arc::new(FilteredSpace::uniform(2, vec![vec![vec![0, 1]], vec![vec![0], vec![1]]]).unwrap())
    }

    fn fix_b() -> Arc<FilteredSpace> {
        Arc::new(FilteredSpace::uniform(3, vec![vec![vec![0, 1, 2]], vec![vec![0], vec![1], vec![2]]]).unwrap())
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

    /// Rank of a family by Gaussian elimination with partial pivoting.
    fn rank(rows: &[Vec<f64>]) -> usize {
        let mut m: Vec<Vec<f64>> = rows.to_vec();
        let cols = m.first().map_or(0, Vec::len);
        let mut r = 0;
        for c in 0..cols {
            let Some(p) = (r..m.len()).max_by(|&i, &j| m[i][c].abs().total_cmp(&m[j][c].abs())) else {
                break;
            };
            if m[p][c].abs() < 1e-10 {
                continue;
            }
            m.swap(r, p);
            for i in 0..m.len() {
                if i != r {
                    let f = m[i][c] / m[r][c];
                    for k in 0..cols {
                        m[i][k] -= f * m[r][k];
                    }
                }
            }
            r += 1;
        }
        r
    }

    #[test]
    fn constants_only() {
        let l = Subspace::span_closure(fix_a(), 1, 0, &[]).unwrap();
        assert_eq!(l.dim(), 1);
        let one = RandomVariable::constant(&fix_a(), 1.0, 0);
        assert!(l.contains(&one, TOL));
    }

    #[test]
    fn trivial_coarse_level_adds_nothing() {
        let s = fix_b();
        let g = RandomVariable::finest(&s, vec![1.0, 0.0, -1.0]).unwrap();
        let l = Subspace::span_closure(s.clone(), 1, 0, &[g]).unwrap();
        assert_eq!(l.dim(), 2);
        let x = RandomVariable::finest(&s, vec![3.0, 2.0, 1.0]).unwrap();
        assert!(l.contains(&x, TOL));
        let y = RandomVariable::finest(&s, vec![1.0, 0.0, 0.0]).unwrap();
        assert!(!l.contains(&y, TOL));
        // least-squares residual of (1,0,0) against span{1,(1,0,-1)} is (1/6,-1/3,1/6)
        assert!((l.residual_norm(&y) - (1.0f64 / 18.0).sqrt()).abs() < 1e-12);
        assert!(l.residual_norm(&y) > 0.2);
        assert!(l.contains(&RandomVariable::constant(&s, 0.0, 1), TOL));
    }

    #[test]
    fn indicator_closure_fills_fix_c() {
        let s = fix_c();
        let g = RandomVariable::finest(&s, vec![1.0, -1.0, 1.0, -1.0]).unwrap();
        let l = Subspace::span_closure(s.clone(), 2, 1, &[g.clone()]).unwrap();
        // oracle: rank of {1_a * h : a in level-1 blocks, h in {1, g}}
        let mut family = Vec::new();
        for b in s.level(1).unwrap().blocks() {
            let ind = indicator(&s, b, 1).unwrap();
            family.push(ind.values().to_vec());
            family.push(ind.mul(&g).values().to_vec());
        }
        assert_eq!(rank(&family), 4);
        assert_eq!(l.dim(), 4);
        assert!(l.is_full());
        assert!(l.check_invariants().iter().all(|(_, ok)| *ok));
    }

    #[test]
    fn relevel_keeps_the_set() {
        let s = fix_c();
        let g = RandomVariable::finest(&s, vec![1.0, -1.0, 0.0, 0.0]).unwrap();
        let l = Subspace::span_closure(s.clone(), 2, 1, &[g]).unwrap();
        assert_eq!(l.dim(), 3);
        let l0 = l.with_level_a(0).unwrap();
        assert_eq!(l0.dim(), 3);
        for b in l.basis() {
            assert!(l0.contains(&b, TOL));
        }
    }

    #[test]
    fn rejects_generator_finer_than_level_b() {
        let s = fix_c();
        let g = RandomVariable::finest(&s, vec![1.0, -1.0, 0.0, 0.0]).unwrap();
        assert!(Subspace::span_closure(s, 1, 0, &[g]).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn projection_is_member(vals in proptest::collection::vec(-5.0f64..5.0, 4),
                                    gen in proptest::collection::vec(-3.0f64..3.0, 4),
                                    x in proptest::collection::vec(-5.0f64..5.0, 4)) {
                let s = fix_c();
                let g = RandomVariable::finest(&s, gen).unwrap();
                let h = RandomVariable::finest(&s, vals).unwrap();
                let l = Subspace::span_closure(s.clone(), 2, 0, &[g, h]).unwrap();
                let x = RandomVariable::finest(&s, x).unwrap();
                prop_assert!(l.contains(&l.project(&x), TOL));
            }

            #[test]
            fn membership_is_indicator_stable(gen in proptest::collection::vec(-3.0f64..3.0, 4),
                                               a in -2.0f64..2.0, b in -2.0f64..2.0) {
                let s = fix_c();
                let g = RandomVariable::finest(&s, gen).unwrap();
                let l = Subspace::span_closure(s.clone(), 2, 1, std::slice::from_ref(&g)).unwrap();
                let one = RandomVariable::constant(&s, 1.0, 0);
                let x = g.scale(a).add(&one.scale(b));
                prop_assert!(l.contains(&x, TOL));
                for blk in s.level(1).unwrap().blocks() {
                    let ind = indicator(&s, blk, 1).unwrap();
                    prop_assert!(l.contains(&ind.mul(&x), TOL));
                }
            }
        }
    }
}
