//! Finite filtered probability spaces.
//!
//! A [`FilteredSpace`] is a finite sample space `{0, .., n-1}` with strictly
//! positive atom probabilities and a chain of refining partitions. Each
//! partition plays the role of a sigma-algebra; level `k + 1` refines level
//! `k` and the last level is the discrete partition. A [`RandomVariable`] is a
//! value per finest atom together with the level it is declared measurable at.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Absolute tolerance used when comparing values in this crate.
pub const TOL: f64 = 1e-9;

const PROB_SUM_TOL: f64 = 1e-12;
const MEASURABILITY_TOL: f64 = 1e-12;

/// A partition of the atoms into blocks.
///
/// Atoms inside a block are sorted and blocks are ordered by their smallest
/// atom, so two partitions describing the same sets compare equal.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Partition {
    blocks: Vec<Vec<usize>>,
    block_of: Vec<usize>,
}

impl Partition {
    pub fn new(n_atoms: usize, blocks: Vec<Vec<usize>>) -> Result<Self> {
        let mut blocks: Vec<Vec<usize>> = blocks
            .into_iter()
            .map(|mut b| {
                b.sort_unstable();
                b
            })
            .collect();
        if blocks.iter().any(|b| b.is_empty()) {
            return Err(Error::InvalidSpace("partition has an empty block".into()));
        }
        blocks.sort_by_key(|b| b[0]);
        let mut block_of = vec![usize::MAX; n_atoms];
        for (k, b) in blocks.iter().enumerate() {
            for &w in b {
                if w >= n_atoms {
                    return Err(Error::InvalidSpace(format!(
                        "atom {w} out of range (n_atoms = {n_atoms})"
                    )));
                }
                if block_of[w] != usize::MAX {
                    return Err(Error::InvalidSpace(format!("atom {w} appears in two blocks")));
                }
                block_of[w] = k;
            }
        }
        if let Some(w) = block_of.iter().position(|&k| k == usize::MAX) {
            return Err(Error::InvalidSpace(format!("atom {w} is not covered by the partition")));
        }
        Ok(Self { blocks, block_of })
    }

    pub fn trivial(n_atoms: usize) -> Self {
        Self {
            blocks: vec![(0..n_atoms).collect()],
            block_of: vec![0; n_atoms],
        }
    }

    pub fn discrete(n_atoms: usize) -> Self {
        Self {
            blocks: (0..n_atoms).map(|w| vec![w]).collect(),
            block_of: (0..n_atoms).collect(),
        }
    }

    pub fn blocks(&self) -> &[Vec<usize>] {
        &self.blocks
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    /// Index of the block containing `atom`.
    pub fn block_of(&self, atom: usize) -> usize {
        self.block_of[atom]
    }

    /// True when every block of `self` lies inside a block of `coarser`.
    pub fn refines(&self, coarser: &Partition) -> bool {
        self.blocks.iter().all(|b| {
            let k = coarser.block_of(b[0]);
            b.iter().all(|&w| coarser.block_of(w) == k)
        })
    }

    /// True when `set` is a union of blocks.
    pub fn is_union_of_blocks(&self, set: &[usize]) -> bool {
        let n = self.block_of.len();
        let mut member = vec![false; n];
        for &w in set {
            if w >= n {
                return false;
            }
            member[w] = true;
        }
        self.blocks
            .iter()
            .all(|b| b.iter().all(|&w| member[w]) || b.iter().all(|&w| !member[w]))
    }
}

/// Finite sample space with a filtration of refining partitions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FilteredSpace {
    probs: Vec<f64>,
    levels: Vec<Partition>,
    time_labels: Vec<f64>,
    /// Integrability exponent, kept as metadata (all L_p coincide on a finite space).
    exponent: f64,
}

impl FilteredSpace {
    pub fn new(probs: Vec<f64>, levels: Vec<Vec<Vec<usize>>>, time_labels: Vec<f64>) -> Result<Self> {
        let n = probs.len();
        if n == 0 {
            return Err(Error::InvalidSpace("no atoms".into()));
        }
        if let Some(w) = probs.iter().position(|&p| !(p > 0.0) || !p.is_finite()) {
            return Err(Error::InvalidSpace(format!(
                "atom {w} has non-positive probability {}",
                probs[w]
            )));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > PROB_SUM_TOL {
            return Err(Error::InvalidSpace(format!("probabilities sum to {total}, not 1")));
        }
        if levels.is_empty() {
            return Err(Error::InvalidSpace("filtration has no levels".into()));
        }
        let levels = levels
            .into_iter()
            .map(|b| Partition::new(n, b))
            .collect::<Result<Vec<_>>>()?;
        for k in 1..levels.len() {
            if !levels[k].refines(&levels[k - 1]) {
                return Err(Error::InvalidSpace(format!(
                    "level {k} does not refine level {}",
                    k - 1
                )));
            }
        }
        if levels.last().map(|p| p.len()) != Some(n) {
            return Err(Error::InvalidSpace("last level must be the discrete partition".into()));
        }
        if time_labels.len() != levels.len() {
            return Err(Error::Dimension {
                expected: levels.len(),
                got: time_labels.len(),
            });
        }
        if time_labels.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidSpace("time labels must be strictly increasing".into()));
        }
        Ok(Self {
            probs,
            levels,
            time_labels,
            exponent: 2.0,
        })
    }

    /// Uniform probabilities over `n` atoms.
    pub fn uniform(n: usize, levels: Vec<Vec<Vec<usize>>>) -> Result<Self> {
        let k = levels.len();
        Self::new(vec![1.0 / n as f64; n], levels, (0..k).map(|t| t as f64).collect())
    }

    pub fn with_exponent(mut self, p: f64) -> Result<Self> {
        if !(p >= 1.0) {
            return Err(Error::InvalidSpace(format!("exponent p = {p} must lie in [1, inf]")));
        }
        self.exponent = p;
        Ok(self)
    }

    pub fn n_atoms(&self) -> usize {
        self.probs.len()
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn n_levels(&self) -> usize {
        self.levels.len()
    }

    pub fn last_level(&self) -> usize {
        self.levels.len() - 1
    }

    pub fn time_labels(&self) -> &[f64] {
        &self.time_labels
    }

    pub fn exponent(&self) -> f64 {
        self.exponent
    }

    pub fn level(&self, level: usize) -> Result<&Partition> {
        self.levels.get(level).ok_or_else(|| Error::InvalidLevel {
            level,
            reason: format!("space has {} levels", self.levels.len()),
        })
    }

    pub fn levels(&self) -> &[Partition] {
        &self.levels
    }

    /// Probability of a set of atoms.
    pub fn prob_of(&self, atoms: &[usize]) -> f64 {
        atoms.iter().map(|&w| self.probs[w]).sum()
    }

    /// Conditional probabilities of the atoms of `block` given the block.
    pub fn conditional_probs(&self, block: &[usize]) -> Vec<f64> {
        let total = self.prob_of(block);
        block.iter().map(|&w| self.probs[w] / total).collect()
    }

    /// `E[X Y]` under `P`.
    pub fn inner(&self, x: &[f64], y: &[f64]) -> f64 {
        self.probs.iter().zip(x).zip(y).map(|((p, a), b)| p * a * b).sum()
    }

    pub fn expectation(&self, x: &[f64]) -> f64 {
        self.probs.iter().zip(x).map(|(p, a)| p * a).sum()
    }

    /// `E[X | F_level]` on raw values, as a per-atom vector.
    pub fn cond_expectation_values(&self, x: &[f64], level: usize) -> Result<Vec<f64>> {
        let part = self.level(level)?;
        let mut out = vec![0.0; self.n_atoms()];
        for b in part.blocks() {
            let mass = self.prob_of(b);
            let v = b.iter().map(|&w| self.probs[w] * x[w]).sum::<f64>() / mass;
            for &w in b {
                out[w] = v;
            }
        }
        Ok(out)
    }

    /// Smallest level at which `values` is measurable.
    pub fn measurability_level(&self, values: &[f64]) -> usize {
        (0..self.n_levels())
            .find(|&k| is_measurable(&self.levels[k], values))
            .unwrap_or(self.last_level())
    }
}

fn is_measurable(part: &Partition, values: &[f64]) -> bool {
    part.blocks().iter().all(|b| {
        let v = values[b[0]];
        b.iter().all(|&w| (values[w] - v).abs() <= MEASURABILITY_TOL)
    })
}

/// A real value per finest atom with a declared measurability level.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RandomVariable {
    values: Vec<f64>,
    level: usize,
}

impl RandomVariable {
    pub fn new(space: &FilteredSpace, values: Vec<f64>, level: usize) -> Result<Self> {
        if values.len() != space.n_atoms() {
            return Err(Error::Dimension {
                expected: space.n_atoms(),
                got: values.len(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidSpace("random variable has non-finite values".into()));
        }
        let part = space.level(level)?;
        for b in part.blocks() {
            let v = values[b[0]];
            if let Some(&w) = b.iter().find(|&&w| (values[w] - v).abs() > MEASURABILITY_TOL) {
                return Err(Error::NotMeasurable { level, atom: w });
            }
        }
        Ok(Self { values, level })
    }

    /// Measurable at the finest level.
    pub fn finest(space: &FilteredSpace, values: Vec<f64>) -> Result<Self> {
        Self::new(space, values, space.last_level())
    }

    pub fn constant(space: &FilteredSpace, c: f64, level: usize) -> Self {
        Self {
            values: vec![c; space.n_atoms()],
            level,
        }
    }

    pub(crate) fn from_parts(values: Vec<f64>, level: usize) -> Self {
        Self { values, level }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn level(&self) -> usize {
        self.level
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Re-declare at a finer level (always valid).
    pub fn at_level(&self, level: usize) -> Self {
        debug_assert!(level >= self.level);
        Self {
            values: self.values.clone(),
            level,
        }
    }

    pub fn scale(&self, c: f64) -> Self {
        Self {
            values: self.values.iter().map(|v| c * v).collect(),
            level: self.level,
        }
    }

    pub fn add(&self, other: &RandomVariable) -> Self {
        Self {
            values: self.values.iter().zip(&other.values).map(|(a, b)| a + b).collect(),
            level: self.level.max(other.level),
        }
    }

    pub fn sub(&self, other: &RandomVariable) -> Self {
        self.add(&other.scale(-1.0))
    }

    /// Atomwise product.
    pub fn mul(&self, other: &RandomVariable) -> Self {
        Self {
            values: self.values.iter().zip(&other.values).map(|(a, b)| a * b).collect(),
            level: self.level.max(other.level),
        }
    }

    pub fn min_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_abs_diff(&self, other: &RandomVariable) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// `P`-weighted `L_p` norm with the space's exponent.
    pub fn norm(&self, space: &FilteredSpace) -> f64 {
        let p = space.exponent();
        if p.is_infinite() {
            return self.values.iter().fold(0.0, |m, v| m.max(v.abs()));
        }
        space
            .probs()
            .iter()
            .zip(&self.values)
            .map(|(q, v)| q * v.abs().powf(p))
            .sum::<f64>()
            .powf(1.0 / p)
    }
}

impl RandomVariable {
    /// Uniform draw in `[lo, hi)` per block of `level`.
    pub fn random<R: rand::Rng + ?Sized>(space: &FilteredSpace, level: usize, lo: f64, hi: f64, rng: &mut R) -> Result<Self> {
        let mut values = vec![0.0; space.n_atoms()];
        for b in space.level(level)?.blocks() {
            let v = rng.random_range(lo..hi);
            for &w in b {
                values[w] = v;
            }
        }
        Ok(Self { values, level })
    }
}

impl std::ops::Index<usize> for RandomVariable {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.values[i]
    }
}

/// `E[X | F_level]`.
pub fn cond_expectation(space: &FilteredSpace, x: &RandomVariable, level: usize) -> Result<RandomVariable> {
    space.level(level)?;
    if level > x.level() {
        return Err(Error::InvalidLevel {
            level,
            reason: format!("target level is finer than the variable's level {}", x.level()),
        });
    }
    if level == x.level() {
        return Ok(x.clone());
    }
    let values = space.cond_expectation_values(x.values(), level)?;
    Ok(RandomVariable::from_parts(values, level))
}

/// Atomwise maximum of a nonempty family at a common level.
pub fn pointwise_max(xs: &[RandomVariable]) -> Result<RandomVariable> {
    let first = xs
        .first()
        .ok_or_else(|| Error::Empty("pointwise_max of an empty family".into()))?;
    if let Some(x) = xs.iter().find(|x| x.level() != first.level()) {
        return Err(Error::InvalidLevel {
            level: x.level(),
            reason: format!("mixed levels in pointwise_max (expected {})", first.level()),
        });
    }
    if let Some(x) = xs.iter().find(|x| x.len() != first.len()) {
        return Err(Error::Dimension {
            expected: first.len(),
            got: x.len(),
        });
    }
    let mut values = first.values().to_vec();
    for x in &xs[1..] {
        for (v, &w) in values.iter_mut().zip(x.values()) {
            *v = v.max(w);
        }
    }
    Ok(RandomVariable::from_parts(values, first.level()))
}

/// Indicator of `block`, which must be a union of blocks of `level`.
pub fn indicator(space: &FilteredSpace, block: &[usize], level: usize) -> Result<RandomVariable> {
    let part = space.level(level)?;
    if !part.is_union_of_blocks(block) {
        return Err(Error::NotMeasurable {
            level,
            atom: block.first().copied().unwrap_or(0),
        });
    }
    let mut values = vec![0.0; space.n_atoms()];
    for &w in block {
        values[w] = 1.0;
    }
    Ok(RandomVariable::from_parts(values, level))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fix_a() -> FilteredSpace {
        FilteredSpace::uniform(2, vec![vec![vec![0, 1]], vec![vec![0], vec![1]]]).unwrap()
    }

    fn fix_c() -> FilteredSpace {
        FilteredSpace::uniform(
            4,
            vec![
                vec![vec![0, 1, 2, 3]],
                vec![vec![0, 1], vec![2, 3]],
                vec![vec![0], vec![1], vec![2], vec![3]],
            ],
        )
        .unwrap()
    }

    #[test]
    fn rejects_zero_probability() {
        let err = FilteredSpace::new(vec![1.0, 0.0], vec![vec![vec![0], vec![1]]], vec![0.0]);
        assert!(matches!(err, Err(Error::InvalidSpace(_))));
    }

    #[test]
    fn rejects_non_refining_levels() {
        let err = FilteredSpace::uniform(
            4,
            vec![
                vec![vec![0, 1], vec![2, 3]],
                vec![vec![0, 2], vec![1, 3]],
                vec![vec![0], vec![1], vec![2], vec![3]],
            ],
        );
        assert!(err.is_err());
        let not_discrete = FilteredSpace::uniform(2, vec![vec![vec![0, 1]]]);
        assert!(not_discrete.is_err());
    }

    #[test]
    fn rejects_unmeasurable_values() {
        let s = fix_c();
        assert!(RandomVariable::new(&s, vec![1.0, 2.0, 3.0, 3.0], 1).is_err());
        assert!(RandomVariable::new(&s, vec![1.0, 1.0, 3.0, 3.0], 1).is_ok());
    }

    #[test]
    fn cond_expectation_examples() {
        let a = fix_a();
        let x = RandomVariable::finest(&a, vec![2.0, 0.0]).unwrap();
        let e = cond_expectation(&a, &x, 0).unwrap();
        assert_eq!(e.values(), &[1.0, 1.0]);
        assert_eq!(cond_expectation(&a, &x, 1).unwrap(), x);

        let c = fix_c();
        let x = RandomVariable::finest(&c, vec![4.0, 0.0, 2.0, 2.0]).unwrap();
        let e = cond_expectation(&c, &x, 1).unwrap();
        assert_eq!(e.values(), &[2.0, 2.0, 2.0, 2.0]);
        assert_eq!(e.level(), 1);
    }

    #[test]
    fn cond_expectation_rejects_finer_target() {
        let c = fix_c();
        let x = RandomVariable::new(&c, vec![1.0, 1.0, 0.0, 0.0], 1).unwrap();
        assert!(matches!(cond_expectation(&c, &x, 2), Err(Error::InvalidLevel { .. })));
        assert!(matches!(cond_expectation(&c, &x, 7), Err(Error::InvalidLevel { .. })));
    }

    #[test]
    fn pointwise_max_examples() {
        let a = fix_a();
        let x = RandomVariable::finest(&a, vec![1.0, 0.0]).unwrap();
        let y = RandomVariable::finest(&a, vec![0.0, 1.0]).unwrap();
        assert_eq!(pointwise_max(&[x.clone(), y]).unwrap().values(), &[1.0, 1.0]);
        assert_eq!(pointwise_max(std::slice::from_ref(&x)).unwrap(), x);
        assert!(pointwise_max(&[]).is_err());

        let c = fix_c();
        let u = RandomVariable::finest(&c, vec![2.0, 0.0, 2.0, 2.0]).unwrap();
        let v = RandomVariable::finest(&c, vec![1.0; 4]).unwrap();
        assert_eq!(pointwise_max(&[u, v.clone()]).unwrap().values(), &[2.0, 1.0, 2.0, 2.0]);
        let coarse = RandomVariable::constant(&c, 1.0, 0);
        assert!(pointwise_max(&[v, coarse]).is_err());
    }

    #[test]
    fn indicator_examples() {
        let a = fix_a();
        assert_eq!(indicator(&a, &[0, 1], 0).unwrap().values(), &[1.0, 1.0]);
        let c = fix_c();
        assert_eq!(indicator(&c, &[0, 1], 1).unwrap().values(), &[1.0, 1.0, 0.0, 0.0]);
        assert!(indicator(&c, &[0], 1).is_err());
    }
}
