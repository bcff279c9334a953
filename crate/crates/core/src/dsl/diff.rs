use std::collections::HashMap;

use super::{BinaryOp, Expr, Node, UnaryOp, Var};

/// Symbolic differentiation with a per-variable memo table.
///
/// The table is keyed by node identity, so shared subexpressions are
/// differentiated once and their derivatives are shared in turn. Reusing one
/// `Differentiator` across a family of related expressions (all partials of a
/// Lagrangian, say) keeps repeated differentiation roughly linear in the DAG
/// size.
#[derive(Default)]
pub struct Differentiator {
    // source kept alongside the result so the key address stays valid
    memo: HashMap<(usize, Var), (Expr, Expr)>,
}

impl Differentiator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn diff(&mut self, e: &Expr, v: Var) -> Expr {
        let key = (e.id(), v);
        if let Some((_, d)) = self.memo.get(&key) {
            return d.clone();
        }
        let d = self.diff_uncached(e, v);
        self.memo.insert(key, (e.clone(), d.clone()));
        d
    }

    fn diff_uncached(&mut self, e: &Expr, v: Var) -> Expr {
        match e.node() {
            Node::Const(_) => Expr::zero(),
            Node::Var(w) => {
                if *w == v {
                    Expr::one()
                } else {
                    Expr::zero()
                }
            }
            Node::Unary(op, a) => {
                let da = self.diff(a, v);
                if da.is_zero() {
                    return Expr::zero();
                }
                let outer = match op {
                    UnaryOp::Neg => return Expr::neg(da),
                    UnaryOp::Sin => a.clone().cos(),
                    UnaryOp::Cos => Expr::neg(a.clone().sin()),
                    UnaryOp::Exp => e.clone(),
                    UnaryOp::Log => return Expr::div(da, a.clone()),
                    UnaryOp::Sqrt => return Expr::div(da, Expr::mul(Expr::constant(2.0), e.clone())),
                    UnaryOp::Sinh => Expr::unary(UnaryOp::Cosh, a.clone()),
                    UnaryOp::Cosh => Expr::unary(UnaryOp::Sinh, a.clone()),
                    UnaryOp::Tanh => Expr::sub(Expr::one(), Expr::pow(e.clone(), 2.0)),
                };
                Expr::mul(outer, da)
            }
            Node::Binary(op, a, b) => match op {
                BinaryOp::Add => Expr::add(self.diff(a, v), self.diff(b, v)),
                BinaryOp::Sub => Expr::sub(self.diff(a, v), self.diff(b, v)),
                BinaryOp::Mul => {
                    let da = self.diff(a, v);
                    let db = self.diff(b, v);
                    Expr::add(Expr::mul(da, b.clone()), Expr::mul(a.clone(), db))
                }
                BinaryOp::Div => {
                    // (a/b)' = (a' - (a/b) b') / b
                    let da = self.diff(a, v);
                    let db = self.diff(b, v);
                    Expr::div(Expr::sub(da, Expr::mul(e.clone(), db)), b.clone())
                }
                BinaryOp::Pow => {
                    let p = b.as_const().expect("pow exponent is constant");
                    let da = self.diff(a, v);
                    if da.is_zero() {
                        return Expr::zero();
                    }
                    let outer = Expr::mul(Expr::constant(p), Expr::pow(a.clone(), p - 1.0));
                    Expr::mul(outer, da)
                }
            },
        }
    }

    /// Iterated partial derivative, applied left to right.
    pub fn diff_many(&mut self, e: &Expr, vars: &[Var]) -> Expr {
        vars.iter().fold(e.clone(), |acc, &v| self.diff(&acc, v))
    }
}

/// One-shot derivative. Prefer a shared [`Differentiator`] for batches.
pub fn differentiate(e: &Expr, v: Var) -> Expr {
    Differentiator::new().diff(e, v)
}
