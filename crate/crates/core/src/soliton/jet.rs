//! Exact differential polynomials in the jet variables `v_c^(k)` with
//! rational coefficients, used to generate the hierarchy in closed form.

use std::collections::btree_map::Entry;
use std::collections::BTreeMap;
use std::fmt;

use num_rational::Ratio;
use num_traits::{One, Zero};

use super::SolitonError;

pub type Q = Ratio<i64>;

/// `(order, component)`; ordered by order first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct JetVar {
    pub order: u32,
    pub comp: usize,
}

/// Sorted factors with positive powers.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Mono(Vec<(JetVar, u32)>);

impl Mono {
    pub fn one() -> Self {
        Mono(Vec::new())
    }

    pub fn var(v: JetVar) -> Self {
        Mono(vec![(v, 1)])
    }

    pub fn factors(&self) -> &[(JetVar, u32)] {
        &self.0
    }

    pub fn mul(&self, other: &Mono) -> Mono {
        let mut out: BTreeMap<JetVar, u32> = self.0.iter().copied().collect();
        for &(v, k) in &other.0 {
            *out.entry(v).or_insert(0) += k;
        }
        Mono(out.into_iter().collect())
    }

    pub fn power_of(&self, v: JetVar) -> u32 {
        self.0.iter().find(|f| f.0 == v).map_or(0, |f| f.1)
    }

    /// Removes `v` entirely and returns the remaining factors.
    fn without(&self, v: JetVar) -> Mono {
        Mono(self.0.iter().copied().filter(|f| f.0 != v).collect())
    }

    fn with_power(&self, v: JetVar, k: u32) -> Mono {
        let mut out = self.without(v);
        if k > 0 {
            out.0.push((v, k));
            out.0.sort();
        }
        out
    }

    pub fn max_order(&self) -> Option<u32> {
        self.0.iter().map(|f| f.0.order).max()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Poly(BTreeMap<Mono, Q>);

impl Poly {
    pub fn zero() -> Self {
        Poly(BTreeMap::new())
    }

    pub fn constant(c: Q) -> Self {
        let mut p = Poly::zero();
        p.add_term(Mono::one(), c);
        p
    }

    pub fn var(order: u32, comp: usize) -> Self {
        let mut p = Poly::zero();
        p.add_term(Mono::var(JetVar { order, comp }), Q::one());
        p
    }

    pub fn is_zero(&self) -> bool {
        self.0.is_empty()
    }

    pub fn terms(&self) -> impl Iterator<Item = (&Mono, &Q)> {
        self.0.iter()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    fn add_term(&mut self, m: Mono, c: Q) {
        if c.is_zero() {
            return;
        }
        match self.0.entry(m) {
            Entry::Vacant(e) => {
                e.insert(c);
            }
            Entry::Occupied(mut e) => {
                *e.get_mut() += c;
                if e.get().is_zero() {
                    e.remove();
                }
            }
        }
    }

    pub fn add(&self, other: &Poly) -> Poly {
        let mut out = self.clone();
        for (m, c) in &other.0 {
            out.add_term(m.clone(), *c);
        }
        out
    }

    pub fn sub(&self, other: &Poly) -> Poly {
        self.add(&other.scale(-Q::one()))
    }

    pub fn scale(&self, s: Q) -> Poly {
        if s.is_zero() {
            return Poly::zero();
        }
        Poly(self.0.iter().map(|(m, c)| (m.clone(), c * s)).collect())
    }

    pub fn mul(&self, other: &Poly) -> Poly {
        let mut out = Poly::zero();
        for (ma, ca) in &self.0 {
            for (mb, cb) in &other.0 {
                out.add_term(ma.mul(mb), ca * cb);
            }
        }
        out
    }

    /// Total derivative `D = Σ v^(k+1) ∂/∂v^(k)`.
    pub fn total_derivative(&self) -> Poly {
        let mut out = Poly::zero();
        for (m, c) in &self.0 {
            for &(v, k) in m.factors() {
                let next = JetVar {
                    order: v.order + 1,
                    comp: v.comp,
                };
                let dm = m.with_power(v, k - 1).mul(&Mono::var(next));
                out.add_term(dm, c * Q::from_integer(k as i64));
            }
        }
        out
    }

    /// Local antiderivative `F` with `D F = self` and no constant term.
    /// Fails when `self` is not a total derivative.
    pub fn integrate(&self) -> Result<Poly, SolitonError> {
        let mut rest = self.clone();
        let mut out = Poly::zero();
        let mut guard = 0usize;
        while let Some((mono, coef)) = rest.leading() {
            guard += 1;
            if guard > 100_000 {
                return Err(SolitonError::NotExact(format!("{self}")));
            }
            let top = mono
                .factors()
                .iter()
                .map(|f| f.0)
                .max()
                .expect("leading term has a factor");
            let top_order_factors: u32 = mono
                .factors()
                .iter()
                .filter(|f| f.0.order == top.order)
                .map(|f| f.1)
                .sum();
            if top.order == 0 || top_order_factors != 1 {
                return Err(SolitonError::NotExact(format!("{self}")));
            }
            // c·M·(v^(n-1))^k·v^(n)  →  c/(k+1)·M·(v^(n-1))^(k+1)
            let below = JetVar {
                order: top.order - 1,
                comp: top.comp,
            };
            let k = mono.power_of(below);
            let rest_mono = mono.without(top);
            let f_mono = rest_mono.with_power(below, k + 1);
            let f = {
                let mut p = Poly::zero();
                p.add_term(f_mono, coef / Q::from_integer(k as i64 + 1));
                p
            };
            rest = rest.sub(&f.total_derivative());
            out = out.add(&f);
        }
        Ok(out)
    }

    /// The term whose highest jet variable is largest.
    fn leading(&self) -> Option<(Mono, Q)> {
        self.0
            .iter()
            .max_by(|a, b| {
                let ka = a.0.factors().iter().map(|f| f.0).max();
                let kb = b.0.factors().iter().map(|f| f.0).max();
                ka.cmp(&kb).then_with(|| a.0.cmp(b.0))
            })
            .map(|(m, c)| (m.clone(), *c))
    }

    pub fn max_order(&self) -> u32 {
        self.0.keys().filter_map(Mono::max_order).max().unwrap_or(0)
    }
}

impl fmt::Display for Poly {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_empty() {
            return write!(f, "0");
        }
        for (i, (m, c)) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, " + ")?;
            }
            write!(f, "({c})")?;
            for (v, k) in m.factors() {
                write!(f, "*v{}_{}", v.comp + 1, v.order)?;
                if *k > 1 {
                    write!(f, "^{k}")?;
                }
            }
        }
        Ok(())
    }
}

/// A vector of differential polynomials, one per component.
pub type VecPoly = Vec<Poly>;

pub fn v_field(p: usize, order: u32) -> VecPoly {
    (0..p).map(|c| Poly::var(order, c)).collect()
}

pub fn dot(a: &[Poly], b: &[Poly]) -> Poly {
    a.iter().zip(b).fold(Poly::zero(), |acc, (x, y)| acc.add(&x.mul(y)))
}

fn d_all(a: &[Poly]) -> VecPoly {
    a.iter().map(Poly::total_derivative).collect()
}

/// `J(e) = D e + D⁻¹(v·e) v` in the local gauge.
pub fn op_j(v: &[Poly], e: &[Poly]) -> Result<VecPoly, SolitonError> {
    let f = dot(v, e).integrate()?;
    Ok(d_all(e)
        .iter()
        .zip(v)
        .map(|(de, vc)| de.add(&f.mul(vc)))
        .collect())
}

/// `H(w)_j = D w_j + Σ_i v_i D⁻¹(v_i w_j − w_i v_j)` in the local gauge.
pub fn op_h(v: &[Poly], w: &[Poly]) -> Result<VecPoly, SolitonError> {
    let p = v.len();
    let mut out = d_all(w);
    for i in 0..p {
        for j in (i + 1)..p {
            let m = v[i].mul(&w[j]).sub(&w[i].mul(&v[j])).integrate()?;
            // M_ij = m, M_ji = −m
            out[j] = out[j].add(&v[i].mul(&m));
            out[i] = out[i].sub(&v[j].mul(&m));
        }
    }
    Ok(out)
}

pub fn recursion(v: &[Poly], e: &[Poly]) -> Result<VecPoly, SolitonError> {
    op_h(v, &op_j(v, e)?)
}

/// `e^(0) = v_l` and `e^(k+1) = R(e^(k))` up to `levels`.
pub fn hierarchy(p: usize, levels: usize) -> Result<Vec<VecPoly>, SolitonError> {
    let v = v_field(p, 0);
    let mut out = vec![v_field(p, 1)];
    for k in 0..levels {
        let next = recursion(&v, &out[k])?;
        out.push(next);
    }
    Ok(out)
}

/// A polynomial flattened for fast pointwise evaluation against a table of
/// derivative columns `table[order][comp][point]`.
#[derive(Debug, Clone)]
pub struct Compiled {
    terms: Vec<(f64, Vec<(usize, usize, i32)>)>,
    pub max_order: u32,
}

impl Compiled {
    pub fn new(p: &Poly) -> Self {
        let terms = p
            .terms()
            .map(|(m, c)| {
                let c = *c.numer() as f64 / *c.denom() as f64;
                let f = m
                    .factors()
                    .iter()
                    .map(|(v, k)| (v.order as usize, v.comp, *k as i32))
                    .collect();
                (c, f)
            })
            .collect();
        Compiled {
            terms,
            max_order: p.max_order(),
        }
    }

    pub fn eval(&self, table: &[Vec<Vec<f64>>], n_pts: usize) -> Vec<f64> {
        let mut out = vec![0.0; n_pts];
        for (c, factors) in &self.terms {
            for (i, o) in out.iter_mut().enumerate() {
                let mut t = *c;
                for &(ord, comp, k) in factors {
                    t *= table[ord][comp][i].powi(k);
                }
                *o += t;
            }
        }
        out
    }
}
