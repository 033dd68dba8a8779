//! Truncated time-variant HDMR baseline with Legendre polynomial bases.
//!
//! The model is
//! `sum_q a_q P_q(t) + sum_i sum_{p+q<=o} b P_p(x_i) P_q(t)
//!  + sum_{i<j} sum_{p+q+r<=o} c P_p(x_i) P_q(x_j) P_r(t)`
//! with `p, q >= 1` on input factors so the three groups do not share columns.
//! Every variable is first mapped into `[-1, 1]`, and the coefficients are
//! estimated by ridge least squares.

use faer::linalg::solvers::SolveLstsq;
use faer::Mat;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::effects::{EffectIndex, EffectTable};
use crate::error::{FoagpError, Result};
use crate::sim::InputDistribution;

pub const DEFAULT_ORDER: usize = 4;

/// Legendre polynomial `P_p(x)` on `[-1, 1]`.
pub fn legendre(p: usize, x: f64) -> Result<f64> {
    if !(x.abs() <= 1.0 + 1e-12) {
        return Err(FoagpError::Domain { value: x });
    }
    Ok(legendre_unchecked(p, x))
}

fn legendre_unchecked(p: usize, x: f64) -> f64 {
    let (mut prev, mut cur) = (1.0, x);
    if p == 0 {
        return prev;
    }
    for k in 1..p {
        let kf = k as f64;
        let next = ((2.0 * kf + 1.0) * x * cur - kf * prev) / (kf + 1.0);
        prev = cur;
        cur = next;
    }
    cur
}

/// `[P_0(x), .., P_o(x)]`.
fn legendre_all(o: usize, x: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(o + 1);
    out.push(1.0);
    if o >= 1 {
        out.push(x);
    }
    for k in 1..o {
        let kf = k as f64;
        out.push(((2.0 * kf + 1.0) * x * out[k] - kf * out[k - 1]) / (kf + 1.0));
    }
    out
}

/// Map of one variable into `[-1, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Uniformizer {
    /// `2 F(x) - 1` with a known distribution.
    Known { distribution: InputDistribution },
    /// `2 F_N(x) - 1` with the piecewise-linear empirical CDF through
    /// `(s_k, (k + 1/2) / N)` over the sorted training values.
    Empirical { sorted: Vec<f64> },
}

impl Uniformizer {
    pub fn empirical(values: &[f64]) -> Self {
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        Uniformizer::Empirical { sorted }
    }

    pub fn apply(&self, x: f64) -> f64 {
        match self {
            Uniformizer::Known { distribution } => distribution.to_unit(x).clamp(-1.0, 1.0),
            Uniformizer::Empirical { sorted } => {
                let n = sorted.len() as f64;
                let j = sorted.partition_point(|&v| v <= x);
                let f = if j == 0 {
                    0.5 / n
                } else if j == sorted.len() {
                    (n - 0.5) / n
                } else {
                    let (lo, hi) = (sorted[j - 1], sorted[j]);
                    let frac = if hi > lo { (x - lo) / (hi - lo) } else { 0.0 };
                    (j as f64 - 0.5 + frac) / n
                };
                2.0 * f - 1.0
            }
        }
    }
}

/// How to map each variable into `[-1, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub enum Scaling {
    /// Generating distributions of `x1..xd` followed by `t`.
    Known(Vec<InputDistribution>),
    Empirical,
}

/// One basis column: Legendre degrees of the inputs it involves and of `t`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Term {
    /// `(input index, degree)`, 0-based indices, degrees at least 1.
    pub inputs: Vec<(usize, usize)>,
    pub t_degree: usize,
}

fn basis_terms(d: usize, o: usize) -> Vec<Term> {
    let mut terms = Vec::new();
    for q in 0..=o {
        terms.push(Term { inputs: vec![], t_degree: q });
    }
    for i in 0..d {
        for p in 1..=o {
            for q in 0..=o - p {
                terms.push(Term { inputs: vec![(i, p)], t_degree: q });
            }
        }
    }
    for i in 0..d {
        for j in i + 1..d {
            for p in 1..=o {
                for q in 1..=o.saturating_sub(p) {
                    for r in 0..=o - p - q {
                        terms.push(Term { inputs: vec![(i, p), (j, q)], t_degree: r });
                    }
                }
            }
        }
    }
    terms
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HdmrModel {
    pub dims: usize,
    pub order: usize,
    pub ridge: f64,
    /// Maps of `x1..xd` followed by `t`.
    pub scalers: Vec<Uniformizer>,
    pub terms: Vec<Term>,
    pub coefficients: Vec<f64>,
    pub training_rmse: f64,
}

/// The three effect groups at one point.
#[derive(Clone, Debug, PartialEq)]
pub struct HdmrEffects {
    pub mean: f64,
    pub main: Vec<f64>,
    /// `((i, j), value)` with 1-based `i < j`.
    pub pairs: Vec<((usize, usize), f64)>,
}

impl HdmrEffects {
    pub fn total(&self) -> f64 {
        self.mean + self.main.iter().sum::<f64>() + self.pairs.iter().map(|p| p.1).sum::<f64>()
    }
}

impl HdmrModel {
    fn unit_point(&self, x: &[f64], t: f64) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
        if x.len() != self.dims {
            return Err(FoagpError::Shape(format!("expected {} inputs, got {}", self.dims, x.len())));
        }
        if let Some(bad) = x.iter().chain([&t]).find(|v| !v.is_finite()) {
            return Err(FoagpError::InvalidInput(format!("non-finite coordinate {bad}")));
        }
        let px = x.iter().zip(&self.scalers).map(|(&v, s)| legendre_all(self.order, s.apply(v))).collect();
        let pt = legendre_all(self.order, self.scalers[self.dims].apply(t));
        Ok((px, pt))
    }

    fn term_value(term: &Term, px: &[Vec<f64>], pt: &[f64]) -> f64 {
        term.inputs.iter().fold(pt[term.t_degree], |acc, &(i, p)| acc * px[i][p])
    }

    pub fn predict(&self, x: &[f64], t: f64) -> Result<f64> {
        Ok(self.effects(x, t)?.total())
    }

    /// Mean-in-`t`, main and pairwise groups at `(x, t)`.
    pub fn effects(&self, x: &[f64], t: f64) -> Result<HdmrEffects> {
        let (px, pt) = self.unit_point(x, t)?;
        let d = self.dims;
        let mut out = HdmrEffects {
            mean: 0.0,
            main: vec![0.0; d],
            pairs: (0..d).flat_map(|i| (i + 1..d).map(move |j| ((i + 1, j + 1), 0.0))).collect(),
        };
        for (term, c) in self.terms.iter().zip(&self.coefficients) {
            let v = c * Self::term_value(term, &px, &pt);
            match term.inputs.as_slice() {
                [] => out.mean += v,
                [(i, _)] => out.main[*i] += v,
                [(i, _), (j, _)] => {
                    let k = out.pairs.iter().position(|p| p.0 == (i + 1, j + 1)).expect("pair present");
                    out.pairs[k].1 += v;
                }
                _ => unreachable!("terms have at most two inputs"),
            }
        }
        Ok(out)
    }

    /// Effect table with columns `f0`, main effects and pairs, matching the
    /// layout of the GP decomposition.
    pub fn decompose(&self, x: &[Vec<f64>], t: &[f64]) -> Result<EffectTable> {
        if x.len() != t.len() {
            return Err(FoagpError::Shape(format!("{} input rows but {} positions", x.len(), t.len())));
        }
        let d = self.dims;
        let mut subsets = vec![EffectIndex::empty()];
        subsets.extend((1..=d).map(|i| EffectIndex::new(vec![i], d).expect("valid index")));
        subsets.extend((1..=d).flat_map(|i| (i + 1..=d).map(move |j| EffectIndex::new(vec![i, j], d).expect("valid pair"))));
        let mut values = vec![Vec::with_capacity(t.len()); subsets.len()];
        let mut total = Vec::with_capacity(t.len());
        for (xp, &tp) in x.iter().zip(t) {
            let e = self.effects(xp, tp)?;
            let row = std::iter::once(e.mean).chain(e.main.iter().copied()).chain(e.pairs.iter().map(|p| p.1));
            for (col, v) in values.iter_mut().zip(row) {
                col.push(v);
            }
            total.push(e.total());
        }
        let names = subsets.iter().map(|u| u.name(d)).collect();
        Ok(EffectTable { dims: d, x: x.to_vec(), t: t.to_vec(), subsets, names, values, total, complete: true })
    }
}

/// Ridge least-squares fit of the truncated expansion of order `order`.
pub fn fit_hdmr(data: &Dataset, order: usize, ridge: f64, scaling: &Scaling) -> Result<HdmrModel> {
    if order == 0 {
        return Err(FoagpError::InvalidInput("HDMR order must be at least 1".into()));
    }
    if !(ridge >= 0.0 && ridge.is_finite()) {
        return Err(FoagpError::InvalidInput(format!("ridge must be finite and non-negative, got {ridge}")));
    }
    let d = data.dims();
    let scalers: Vec<Uniformizer> = match scaling {
        Scaling::Known(dists) => {
            if dists.len() != d + 1 {
                return Err(FoagpError::Shape(format!("need {} distributions (inputs and t), got {}", d + 1, dists.len())));
            }
            dists.iter().map(|&distribution| Uniformizer::Known { distribution }).collect()
        }
        Scaling::Empirical => data
            .columns()
            .iter()
            .map(|c| Uniformizer::empirical(c))
            .chain([Uniformizer::empirical(data.positions())])
            .collect(),
    };
    let terms = basis_terms(d, order);
    let mut model = HdmrModel {
        dims: d,
        order,
        ridge,
        scalers,
        terms,
        coefficients: Vec::new(),
        training_rmse: f64::NAN,
    };
    let n = data.len();
    let p = model.terms.len();
    let mut design = Mat::<f64>::zeros(n + p, p);
    for r in 0..n {
        let (px, pt) = model.unit_point(&data.row(r), data.positions()[r])?;
        for (c, term) in model.terms.iter().enumerate() {
            design[(r, c)] = HdmrModel::term_value(term, &px, &pt);
        }
    }
    let root = ridge.sqrt();
    for c in 0..p {
        design[(n + c, c)] = root;
    }
    let mut rhs = Mat::<f64>::zeros(n + p, 1);
    for (r, &y) in data.responses().iter().enumerate() {
        rhs[(r, 0)] = y;
    }
    let qr = design.col_piv_qr();
    let r = qr.thin_R();
    let lead = r[(0, 0)].abs();
    if (0..p).any(|k| !(r[(k, k)].abs() > 1e-10 * lead)) {
        return Err(FoagpError::Solver(format!(
            "HDMR design with {p} columns is rank deficient on {n} samples; use ridge > 0"
        )));
    }
    let sol = qr.solve_lstsq(&rhs);
    model.coefficients = (0..p).map(|c| sol[(c, 0)]).collect();
    let mut sse = 0.0;
    for r in 0..n {
        let fitted = model.predict(&data.row(r), data.positions()[r])?;
        sse += (data.responses()[r] - fitted).powi(2);
    }
    model.training_rmse = (sse / n as f64).sqrt();
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::integrate;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn uniform_data(n: usize, seed: u64, f: impl Fn(f64, f64, f64) -> f64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = || (0..n).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect::<Vec<_>>();
        let (x1, x2, t) = (draw(), draw(), draw());
        let y = (0..n).map(|a| f(x1[a], x2[a], t[a])).collect();
        Dataset::new(vec![x1, x2], t, y).unwrap()
    }

    fn unit_box() -> Scaling {
        Scaling::Known(vec![InputDistribution::Uniform { lo: -1.0, hi: 1.0 }; 3])
    }

    #[test]
    fn legendre_values() {
        assert_eq!(legendre(0, 0.3).unwrap(), 1.0);
        assert_eq!(legendre(1, 0.5).unwrap(), 0.5);
        assert!((legendre(2, 1.0).unwrap() - 1.0).abs() < 1e-15);
        assert!((legendre(3, 0.5).unwrap() + 0.4375).abs() < 1e-15);
        assert!(matches!(legendre(2, 1.1), Err(FoagpError::Domain { .. })));
        assert!(legendre(2, 1.0 + 1e-13).is_ok());
        let all = legendre_all(6, 0.37);
        for (p, v) in all.iter().enumerate() {
            assert_eq!(*v, legendre_unchecked(p, 0.37));
        }
    }

    #[test]
    fn basis_is_orthogonal() {
        for p in 0..=8 {
            for q in 0..=8 {
                let v = integrate(|x| legendre_unchecked(p, x) * legendre_unchecked(q, x), -1.0, 1.0, 1e-13).unwrap();
                if p == q {
                    assert!((v - 2.0 / (2.0 * p as f64 + 1.0)).abs() < 1e-10);
                } else {
                    assert!(v.abs() < 1e-10, "{p} {q} {v}");
                }
            }
        }
    }

    #[test]
    fn term_counts() {
        // d = 2, o = 4: 5 mean, 2 * 10 main, 10 pair columns.
        assert_eq!(basis_terms(2, 4).len(), 35);
        assert_eq!(basis_terms(1, 1).len(), 3);
    }

    #[test]
    fn exact_expansion_is_recovered() {
        let p = |k, x| legendre_unchecked(k, x);
        let f = |x1, x2, t| 0.5 + 1.5 * p(1, t) - 0.7 * p(2, x1) + 0.3 * p(1, x2) * p(1, t) + 2.0 * p(1, x1) * p(1, x2);
        let data = uniform_data(200, 1, f);
        let m = fit_hdmr(&data, 2, 0.0, &unit_box()).unwrap();
        let find = |inputs: Vec<(usize, usize)>, t_degree| {
            let k = m.terms.iter().position(|t| *t == Term { inputs: inputs.clone(), t_degree }).unwrap();
            m.coefficients[k]
        };
        assert!((find(vec![], 0) - 0.5).abs() < 1e-8);
        assert!((find(vec![], 1) - 1.5).abs() < 1e-8);
        assert!((find(vec![(0, 2)], 0) + 0.7).abs() < 1e-8);
        assert!((find(vec![(1, 1)], 1) - 0.3).abs() < 1e-8);
        assert!((find(vec![(0, 1), (1, 1)], 0) - 2.0).abs() < 1e-8);
        assert!(m.training_rmse < 1e-10);
    }

    #[test]
    fn first_order_cannot_represent_interaction() {
        let data = uniform_data(200, 2, |a, b, t| a * b * t);
        let m = fit_hdmr(&data, 1, 0.0, &unit_box()).unwrap();
        assert!(m.training_rmse > 0.05);
    }

    #[test]
    fn residual_does_not_grow_with_order() {
        let data = uniform_data(300, 3, |a, b, t| (2.0 * a).sin() * t + (a * b * t).exp());
        let mut last = f64::INFINITY;
        for o in 1..=5 {
            let r = fit_hdmr(&data, o, 0.0, &unit_box()).unwrap().training_rmse;
            assert!(r <= last + 1e-12);
            last = r;
        }
    }

    #[test]
    fn groups_sum_to_prediction_and_zero_coefficients_vanish() {
        let data = uniform_data(150, 4, |a, b, t| a * t + b * b + a * b);
        let mut m = fit_hdmr(&data, 3, 1e-8, &Scaling::Empirical).unwrap();
        let e = m.effects(&[0.2, -0.4], 0.6).unwrap();
        assert!((e.total() - m.predict(&[0.2, -0.4], 0.6).unwrap()).abs() < 1e-12);
        let table = m.decompose(&[vec![0.2, -0.4], vec![0.9, 0.1]], &[0.6, -0.3]).unwrap();
        assert_eq!(table.names, vec!["f0", "f1", "f2", "f12"]);
        assert!(table.sum_residual() < 1e-12);
        m.coefficients.iter_mut().for_each(|c| *c = 0.0);
        let e = m.effects(&[0.2, -0.4], 0.6).unwrap();
        assert_eq!(e.total(), 0.0);
    }

    #[test]
    fn rank_deficiency_needs_ridge() {
        let data = uniform_data(5, 5, |a, _, _| a);
        assert!(matches!(fit_hdmr(&data, 4, 0.0, &unit_box()), Err(FoagpError::Solver(_))));
        assert!(fit_hdmr(&data, 4, 1e-6, &unit_box()).is_ok());
    }

    #[test]
    fn empirical_map_is_monotone_and_bounded() {
        let u = Uniformizer::empirical(&[3.0, 1.0, 2.0, 2.0, 5.0]);
        let xs = [-10.0, 1.0, 1.5, 2.0, 2.5, 4.0, 5.0, 10.0];
        let vals: Vec<f64> = xs.iter().map(|&x| u.apply(x)).collect();
        assert!(vals.windows(2).all(|w| w[0] <= w[1]));
        assert!(vals.iter().all(|v| v.abs() < 1.0));
    }
}
