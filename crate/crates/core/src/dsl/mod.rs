//! Scalar expression language for Lagrangians and metric coefficients.
//!
//! Expressions are immutable, reference-counted DAGs over the bundle
//! coordinates `x1..xn` (base) and `y1..ym` (fiber). Construction goes through
//! folding constructors, so `0 * e`, `e + 0`, `e ^ 1` and constant subtrees
//! never survive into the graph. Derivatives share structure with their
//! source, which keeps fourth-order mixed partials of moderately sized
//! Lagrangians tractable.

mod diff;
mod parse;
mod tape;

use std::fmt;
use std::ops;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use diff::{differentiate, Differentiator};
pub use parse::{parse, parse_expr, parse_field_expr, ParseError, VarScope};
pub use tape::{evaluate, EvalError, Tape};

/// A coordinate on the bundle. Indices are zero-based internally and
/// printed one-based (`Base(0)` is `x1`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Var {
    Base(usize),
    Fiber(usize),
}

impl fmt::Display for Var {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Var::Base(i) => write!(f, "x{}", i + 1),
            Var::Fiber(a) => write!(f, "y{}", a + 1),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum UnaryOp {
    Neg,
    Sin,
    Cos,
    Exp,
    Log,
    Sqrt,
    Sinh,
    Cosh,
    Tanh,
}

impl UnaryOp {
    pub fn name(self) -> &'static str {
        match self {
            UnaryOp::Neg => "-",
            UnaryOp::Sin => "sin",
            UnaryOp::Cos => "cos",
            UnaryOp::Exp => "exp",
            UnaryOp::Log => "log",
            UnaryOp::Sqrt => "sqrt",
            UnaryOp::Sinh => "sinh",
            UnaryOp::Cosh => "cosh",
            UnaryOp::Tanh => "tanh",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Some(match name {
            "sin" => UnaryOp::Sin,
            "cos" => UnaryOp::Cos,
            "exp" => UnaryOp::Exp,
            "log" => UnaryOp::Log,
            "sqrt" => UnaryOp::Sqrt,
            "sinh" => UnaryOp::Sinh,
            "cosh" => UnaryOp::Cosh,
            "tanh" => UnaryOp::Tanh,
            _ => return None,
        })
    }

    /// Plain IEEE application; domain checks live in the evaluator.
    pub(crate) fn apply(self, a: f64) -> f64 {
        match self {
            UnaryOp::Neg => -a,
            UnaryOp::Sin => a.sin(),
            UnaryOp::Cos => a.cos(),
            UnaryOp::Exp => a.exp(),
            UnaryOp::Log => a.ln(),
            UnaryOp::Sqrt => a.sqrt(),
            UnaryOp::Sinh => a.sinh(),
            UnaryOp::Cosh => a.cosh(),
            UnaryOp::Tanh => a.tanh(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

impl BinaryOp {
    fn symbol(self) -> &'static str {
        match self {
            BinaryOp::Add => "+",
            BinaryOp::Sub => "-",
            BinaryOp::Mul => "*",
            BinaryOp::Div => "/",
            BinaryOp::Pow => "^",
        }
    }

    fn precedence(self) -> u8 {
        match self {
            BinaryOp::Add | BinaryOp::Sub => 1,
            BinaryOp::Mul | BinaryOp::Div => 2,
            BinaryOp::Pow => 4,
        }
    }
}

#[derive(Debug)]
pub enum Node {
    Const(f64),
    Var(Var),
    Unary(UnaryOp, Expr),
    /// For `Pow` the right operand is always a `Const`.
    Binary(BinaryOp, Expr, Expr),
}

#[derive(Clone)]
pub struct Expr(Arc<Node>);

fn placeholder() -> Expr {
    static LEAF: std::sync::OnceLock<Expr> = std::sync::OnceLock::new();
    LEAF.get_or_init(|| Expr(Arc::new(Node::Const(0.0)))).clone()
}

impl Node {
    fn take_unique_children(&mut self, out: &mut Vec<Expr>) {
        let mut grab = |slot: &mut Expr| {
            if Arc::strong_count(&slot.0) == 1 && !matches!(*slot.0, Node::Const(_) | Node::Var(_)) {
                out.push(std::mem::replace(slot, placeholder()));
            }
        };
        match self {
            Node::Unary(_, a) => grab(a),
            Node::Binary(_, a, b) => {
                grab(a);
                grab(b);
            }
            _ => {}
        }
    }
}

impl Drop for Node {
    // unlinks uniquely owned subtrees iteratively; long sums would
    // otherwise recurse once per term on drop
    fn drop(&mut self) {
        let mut pending = Vec::new();
        self.take_unique_children(&mut pending);
        while let Some(e) = pending.pop() {
            if let Ok(mut node) = Arc::try_unwrap(e.0) {
                node.take_unique_children(&mut pending);
            }
        }
    }
}

impl Expr {
    fn wrap(node: Node) -> Self {
        Expr(Arc::new(node))
    }

    pub fn node(&self) -> &Node {
        &self.0
    }

    pub(crate) fn id(&self) -> usize {
        Arc::as_ptr(&self.0) as usize
    }

    pub fn constant(c: f64) -> Self {
        Expr::wrap(Node::Const(c))
    }

    pub fn zero() -> Self {
        Expr::constant(0.0)
    }

    pub fn one() -> Self {
        Expr::constant(1.0)
    }

    pub fn var(v: Var) -> Self {
        Expr::wrap(Node::Var(v))
    }

    pub fn x(i: usize) -> Self {
        Expr::var(Var::Base(i))
    }

    pub fn y(a: usize) -> Self {
        Expr::var(Var::Fiber(a))
    }

    pub fn as_const(&self) -> Option<f64> {
        match self.node() {
            Node::Const(c) => Some(*c),
            _ => None,
        }
    }

    pub fn is_zero(&self) -> bool {
        self.as_const() == Some(0.0)
    }

    pub fn is_one(&self) -> bool {
        self.as_const() == Some(1.0)
    }

    pub fn unary(op: UnaryOp, a: Expr) -> Expr {
        if let Some(c) = a.as_const() {
            let in_domain = match op {
                UnaryOp::Log => c > 0.0,
                UnaryOp::Sqrt => c >= 0.0,
                _ => true,
            };
            // out-of-domain constants stay in the graph so evaluation reports them
            if in_domain {
                return Expr::constant(op.apply(c));
            }
        }
        if op == UnaryOp::Neg {
            if let Node::Unary(UnaryOp::Neg, inner) = a.node() {
                return inner.clone();
            }
        }
        Expr::wrap(Node::Unary(op, a))
    }

    pub fn neg(a: Expr) -> Expr {
        Expr::unary(UnaryOp::Neg, a)
    }

    pub fn add(a: Expr, b: Expr) -> Expr {
        match (a.as_const(), b.as_const()) {
            (Some(p), Some(q)) => Expr::constant(p + q),
            (Some(p), _) if p == 0.0 => b,
            (_, Some(q)) if q == 0.0 => a,
            _ => {
                if let Node::Unary(UnaryOp::Neg, inner) = b.node() {
                    return Expr::wrap(Node::Binary(BinaryOp::Sub, a, inner.clone()));
                }
                Expr::wrap(Node::Binary(BinaryOp::Add, a, b))
            }
        }
    }

    pub fn sub(a: Expr, b: Expr) -> Expr {
        match (a.as_const(), b.as_const()) {
            (Some(p), Some(q)) => Expr::constant(p - q),
            (Some(p), _) if p == 0.0 => Expr::neg(b),
            (_, Some(q)) if q == 0.0 => a,
            _ => {
                if let Node::Unary(UnaryOp::Neg, inner) = b.node() {
                    return Expr::wrap(Node::Binary(BinaryOp::Add, a, inner.clone()));
                }
                Expr::wrap(Node::Binary(BinaryOp::Sub, a, b))
            }
        }
    }

    pub fn mul(a: Expr, b: Expr) -> Expr {
        match (a.as_const(), b.as_const()) {
            (Some(p), Some(q)) => Expr::constant(p * q),
            (Some(p), _) if p == 0.0 => Expr::zero(),
            (_, Some(q)) if q == 0.0 => Expr::zero(),
            (Some(p), _) if p == 1.0 => b,
            (_, Some(q)) if q == 1.0 => a,
            (Some(p), _) if p == -1.0 => Expr::neg(b),
            (_, Some(q)) if q == -1.0 => Expr::neg(a),
            (None, Some(_)) => Expr::mul(b, a),
            (Some(p), None) => {
                // constants are kept leftmost, so c1 * (c2 * e) folds to (c1 c2) * e
                if let Node::Binary(BinaryOp::Mul, l, r) = b.node() {
                    if let Some(q) = l.as_const() {
                        return Expr::mul(Expr::constant(p * q), r.clone());
                    }
                }
                Expr::wrap(Node::Binary(BinaryOp::Mul, a, b))
            }
            _ => Expr::wrap(Node::Binary(BinaryOp::Mul, a, b)),
        }
    }

    pub fn div(a: Expr, b: Expr) -> Expr {
        match (a.as_const(), b.as_const()) {
            // leave c/0 in the graph so evaluation reports it
            (Some(p), Some(q)) if q != 0.0 => Expr::constant(p / q),
            (Some(p), _) if p == 0.0 => Expr::zero(),
            (_, Some(q)) if q == 1.0 => a,
            (_, Some(q)) if q == -1.0 => Expr::neg(a),
            _ => Expr::wrap(Node::Binary(BinaryOp::Div, a, b)),
        }
    }

    /// `base ^ exponent` with a constant exponent.
    pub fn pow(base: Expr, exponent: f64) -> Expr {
        if exponent == 0.0 {
            return Expr::one();
        }
        if exponent == 1.0 {
            return base;
        }
        if let Some(b) = base.as_const() {
            let v = b.powf(exponent);
            if v.is_finite() {
                return Expr::constant(v);
            }
        }
        if let Node::Binary(BinaryOp::Pow, inner, e) = base.node() {
            let e = e.as_const().unwrap_or(1.0);
            // (u^p)^q = u^(pq) is safe for integer q
            if exponent.fract() == 0.0 {
                return Expr::pow(inner.clone(), e * exponent);
            }
        }
        Expr::wrap(Node::Binary(BinaryOp::Pow, base, Expr::constant(exponent)))
    }

    pub fn sin(self) -> Expr {
        Expr::unary(UnaryOp::Sin, self)
    }
    pub fn cos(self) -> Expr {
        Expr::unary(UnaryOp::Cos, self)
    }
    pub fn exp(self) -> Expr {
        Expr::unary(UnaryOp::Exp, self)
    }
    pub fn ln(self) -> Expr {
        Expr::unary(UnaryOp::Log, self)
    }
    pub fn sqrt(self) -> Expr {
        Expr::unary(UnaryOp::Sqrt, self)
    }

    /// Sum of an iterator of expressions, folding zeros.
    pub fn sum<I: IntoIterator<Item = Expr>>(terms: I) -> Expr {
        terms.into_iter().fold(Expr::zero(), Expr::add)
    }

    /// Number of distinct nodes reachable from this expression.
    pub fn dag_size(&self) -> usize {
        let mut seen = std::collections::HashSet::new();
        let mut stack = vec![self.clone()];
        while let Some(e) = stack.pop() {
            if !seen.insert(e.id()) {
                continue;
            }
            match e.node() {
                Node::Const(_) | Node::Var(_) => {}
                Node::Unary(_, a) => stack.push(a.clone()),
                Node::Binary(_, a, b) => {
                    stack.push(a.clone());
                    stack.push(b.clone());
                }
            }
        }
        seen.len()
    }

    /// Largest variable index of each kind appearing in the expression,
    /// as one-based counts `(n_needed, m_needed)`.
    pub fn dims_needed(&self) -> (usize, usize) {
        let mut seen = std::collections::HashSet::new();
        let mut stack = vec![self.clone()];
        let (mut n, mut m) = (0, 0);
        while let Some(e) = stack.pop() {
            if !seen.insert(e.id()) {
                continue;
            }
            match e.node() {
                Node::Const(_) => {}
                Node::Var(Var::Base(i)) => n = n.max(i + 1),
                Node::Var(Var::Fiber(a)) => m = m.max(a + 1),
                Node::Unary(_, a) => stack.push(a.clone()),
                Node::Binary(_, a, b) => {
                    stack.push(a.clone());
                    stack.push(b.clone());
                }
            }
        }
        (n, m)
    }
}

impl fmt::Debug for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Expr({})", self)
    }
}

impl From<f64> for Expr {
    fn from(c: f64) -> Self {
        Expr::constant(c)
    }
}

impl From<Var> for Expr {
    fn from(v: Var) -> Self {
        Expr::var(v)
    }
}

macro_rules! impl_binop {
    ($tr:ident, $method:ident, $ctor:ident) => {
        impl ops::$tr<Expr> for Expr {
            type Output = Expr;
            fn $method(self, rhs: Expr) -> Expr {
                Expr::$ctor(self, rhs)
            }
        }
        impl ops::$tr<&Expr> for &Expr {
            type Output = Expr;
            fn $method(self, rhs: &Expr) -> Expr {
                Expr::$ctor(self.clone(), rhs.clone())
            }
        }
        impl ops::$tr<&Expr> for Expr {
            type Output = Expr;
            fn $method(self, rhs: &Expr) -> Expr {
                Expr::$ctor(self, rhs.clone())
            }
        }
        impl ops::$tr<Expr> for &Expr {
            type Output = Expr;
            fn $method(self, rhs: Expr) -> Expr {
                Expr::$ctor(self.clone(), rhs)
            }
        }
        impl ops::$tr<f64> for Expr {
            type Output = Expr;
            fn $method(self, rhs: f64) -> Expr {
                Expr::$ctor(self, Expr::constant(rhs))
            }
        }
        impl ops::$tr<f64> for &Expr {
            type Output = Expr;
            fn $method(self, rhs: f64) -> Expr {
                Expr::$ctor(self.clone(), Expr::constant(rhs))
            }
        }
        impl ops::$tr<Expr> for f64 {
            type Output = Expr;
            fn $method(self, rhs: Expr) -> Expr {
                Expr::$ctor(Expr::constant(self), rhs)
            }
        }
        impl ops::$tr<&Expr> for f64 {
            type Output = Expr;
            fn $method(self, rhs: &Expr) -> Expr {
                Expr::$ctor(Expr::constant(self), rhs.clone())
            }
        }
    };
}

impl_binop!(Add, add, add);
impl_binop!(Sub, sub, sub);
impl_binop!(Mul, mul, mul);
impl_binop!(Div, div, div);

impl ops::Neg for Expr {
    type Output = Expr;
    fn neg(self) -> Expr {
        Expr::neg(self)
    }
}

impl ops::Neg for &Expr {
    type Output = Expr;
    fn neg(self) -> Expr {
        Expr::neg(self.clone())
    }
}

fn write_const(f: &mut fmt::Formatter<'_>, c: f64) -> fmt::Result {
    // `{:?}` on f64 is the shortest representation that round-trips.
    if c < 0.0 || (c == 0.0 && c.is_sign_negative()) {
        write!(f, "(-{:?})", -c)
    } else {
        write!(f, "{:?}", c)
    }
}

fn write_expr(f: &mut fmt::Formatter<'_>, e: &Expr, parent_prec: u8) -> fmt::Result {
    match e.node() {
        Node::Const(c) => write_const(f, *c),
        Node::Var(v) => write!(f, "{}", v),
        Node::Unary(UnaryOp::Neg, a) => {
            let wrap = parent_prec >= 2;
            if wrap {
                write!(f, "(")?;
            }
            write!(f, "-")?;
            write_expr(f, a, 3)?;
            if wrap {
                write!(f, ")")?;
            }
            Ok(())
        }
        Node::Unary(op, a) => {
            write!(f, "{}(", op.name())?;
            write_expr(f, a, 0)?;
            write!(f, ")")
        }
        Node::Binary(op, a, b) => {
            let prec = op.precedence();
            let wrap = prec < parent_prec;
            if wrap {
                write!(f, "(")?;
            }
            // left-assoc printing keeps the tree shape on reparse
            if *op == BinaryOp::Pow {
                write_expr(f, a, prec + 1)?;
                write!(f, "^")?;
                write_expr(f, b, prec + 1)?;
            } else {
                write_expr(f, a, prec)?;
                write!(f, " {} ", op.symbol())?;
                write_expr(f, b, prec + 1)?;
            }
            if wrap {
                write!(f, ")")?;
            }
            Ok(())
        }
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write_expr(f, self, 0)
    }
}

/// Structural equality of two expression trees (constants compared
/// bitwise).
pub fn same_structure(a: &Expr, b: &Expr) -> bool {
    if a.id() == b.id() {
        return true;
    }
    match (a.node(), b.node()) {
        (Node::Const(p), Node::Const(q)) => p.to_bits() == q.to_bits(),
        (Node::Var(u), Node::Var(v)) => u == v,
        (Node::Unary(o1, a1), Node::Unary(o2, a2)) => o1 == o2 && same_structure(a1, a2),
        (Node::Binary(o1, l1, r1), Node::Binary(o2, l2, r2)) => {
            o1 == o2 && same_structure(l1, l2) && same_structure(r1, r2)
        }
        _ => false,
    }
}


/// Evaluation point on the bundle: base coordinates `x` and fiber `y`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundlePoint {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

impl BundlePoint {
    pub fn new(x: Vec<f64>, y: Vec<f64>) -> Self {
        BundlePoint { x, y }
    }

    pub fn get(&self, v: Var) -> f64 {
        match v {
            Var::Base(i) => self.x[i],
            Var::Fiber(a) => self.y[a],
        }
    }

    pub fn get_mut(&mut self, v: Var) -> &mut f64 {
        match v {
            Var::Base(i) => &mut self.x[i],
            Var::Fiber(a) => &mut self.y[a],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.x.iter().chain(self.y.iter()).all(|v| v.is_finite())
    }
}

/// A parsed Lagrangian `L(x, y)` together with the bundle dimensions.
#[derive(Debug, Clone)]
pub struct LagrangianSpec {
    pub n: usize,
    pub m: usize,
    pub body: Expr,
}

impl LagrangianSpec {
    /// Wraps an already-built expression. Unlike [`parse`], this accepts
    /// one-dimensional test rigs (`n = m = 1`).
    pub fn from_expr(body: Expr, n: usize, m: usize) -> Result<Self, ParseError> {
        let (need_n, need_m) = body.dims_needed();
        if need_n > n || need_m > m || n == 0 || m == 0 {
            return Err(ParseError::IndexOutOfRange {
                offset: 0,
                name: format!("dims n={n}, m={m}, expression uses x{need_n}/y{need_m}"),
            });
        }
        Ok(LagrangianSpec { n, m, body })
    }
}
