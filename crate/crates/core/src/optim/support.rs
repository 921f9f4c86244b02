use super::simplex::{solve_lp, ConstraintOp, LinearProgram, LpStatus, Sense};
use crate::error::{Error, Result};

/// Densities on one block: `lower <= f <= upper` and `sum_k pi_k f_k = 1`.
#[derive(Clone, Debug)]
pub struct BoxBudget {
    pub cond_probs: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl BoxBudget {
    pub fn new(cond_probs: Vec<f64>, lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        let n = cond_probs.len();
        if lower.len() != n || upper.len() != n {
            return Err(Error::Dimension {
                expected: n,
                got: lower.len().min(upper.len()),
            });
        }
        if lower.iter().zip(&upper).any(|(l, u)| l > u) {
            return Err(Error::InvalidBounds("lower bound exceeds upper bound".into()));
        }
        Ok(Self {
            cond_probs,
            lower,
            upper,
        })
    }

    pub fn is_feasible(&self) -> bool {
        let lo: f64 = self.cond_probs.iter().zip(&self.lower).map(|(p, l)| p * l).sum();
        let hi: f64 = self.cond_probs.iter().zip(&self.upper).map(|(p, u)| p * u).sum();
        lo <= 1.0 + 1e-12 && hi >= 1.0 - 1e-12
    }
}

#[derive(Clone, Debug)]
pub struct SupportValue {
    pub value: f64,
    pub maximizer: Vec<f64>,
}

/// `max { sum_k pi_k f_k w_k : f in box, budget }` by the fractional-knapsack
/// greedy: atoms are raised from their lower bound in decreasing order of `w`
/// (ties by index) until the budget is spent.
pub fn support_function(w: &[f64], poly: &BoxBudget) -> Result<SupportValue> {
    let n = poly.cond_probs.len();
    if w.len() != n {
        return Err(Error::Dimension { expected: n, got: w.len() });
    }
    if !poly.is_feasible() {
        return Err(Error::InfeasiblePolytope {
            block: 0,
            atoms: (0..n).collect(),
        });
    }
    let mut f = poly.lower.clone();
    let mut remaining = 1.0 - poly.cond_probs.iter().zip(&f).map(|(p, x)| p * x).sum::<f64>();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| w[j].total_cmp(&w[i]).then(i.cmp(&j)));
    for k in order {
        if remaining <= 0.0 {
            break;
        }
        let cap = (poly.upper[k] - poly.lower[k]) * poly.cond_probs[k];
        let take = cap.min(remaining);
        f[k] += take / poly.cond_probs[k];
        remaining -= take;
    }
    let value = poly.cond_probs.iter().zip(&f).zip(w).map(|((p, x), y)| p * x * y).sum();
    Ok(SupportValue { value, maximizer: f })
}

/// The same quantity through the simplex solver.
pub fn support_function_lp(w: &[f64], poly: &BoxBudget) -> Result<SupportValue> {
    let n = poly.cond_probs.len();
    let obj = poly.cond_probs.iter().zip(w).map(|(p, x)| p * x).collect();
    let mut lp = LinearProgram::new(Sense::Maximize, obj);
    for k in 0..n {
        lp.set_bounds(k, poly.lower[k], poly.upper[k]);
    }
    lp.add_constraint(poly.cond_probs.clone(), ConstraintOp::Eq, 1.0);
    let res = solve_lp(&lp)?;
    match res.status {
        LpStatus::Optimal => Ok(SupportValue {
            value: res.value,
            maximizer: res.solution.unwrap_or_default(),
        }),
        _ => Err(Error::InfeasiblePolytope {
            block: 0,
            atoms: (0..n).collect(),
        }),
    }
}
