use std::collections::HashMap;

use thiserror::Error;

use super::{BinaryOp, BundlePoint, Expr, Node, UnaryOp, Var};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("log of non-positive value {value} in `{node}`")]
    LogDomain { node: String, value: f64 },
    #[error("sqrt of negative value {value} in `{node}`")]
    SqrtDomain { node: String, value: f64 },
    #[error("division by zero in `{node}`")]
    DivisionByZero { node: String },
    #[error("power {base}^{exponent} undefined in `{node}`")]
    PowDomain {
        node: String,
        base: f64,
        exponent: f64,
    },
    #[error("variable {var} not present at evaluation point")]
    MissingVariable { var: Var },
    #[error("non-finite evaluation point")]
    NonFinitePoint,
}

const NODE_TEXT_LIMIT: usize = 120;

fn describe(e: &Expr) -> String {
    let s = e.to_string();
    if s.len() <= NODE_TEXT_LIMIT {
        return s;
    }
    let mut cut = NODE_TEXT_LIMIT;
    while !s.is_char_boundary(cut) {
        cut -= 1;
    }
    format!("{}...", &s[..cut])
}

#[derive(Debug, Clone, Copy)]
enum Instr {
    Const(f64),
    Var(Var),
    Unary(UnaryOp, u32),
    Binary(BinaryOp, u32, u32),
    Pow(u32, f64),
}

#[derive(Hash, PartialEq, Eq)]
enum Key {
    Const(u64),
    Var(Var),
    Unary(UnaryOp, u32),
    Binary(BinaryOp, u32, u32),
    Pow(u32, u64),
}

/// A batch of expressions flattened into a straight-line program.
///
/// Structurally identical subexpressions get a single slot, so evaluating all
/// coefficients of a geometry table at one point costs one pass over the
/// union of their DAGs.
#[derive(Debug, Clone)]
pub struct Tape {
    instrs: Vec<Instr>,
    sources: Vec<Expr>,
    outputs: Vec<u32>,
}

impl Tape {
    pub fn compile(roots: &[Expr]) -> Tape {
        let mut instrs = Vec::new();
        let mut sources = Vec::new();
        let mut by_ptr: HashMap<usize, u32> = HashMap::new();
        let mut by_key: HashMap<Key, u32> = HashMap::new();
        let mut outputs = Vec::with_capacity(roots.len());

        for root in roots {
            // iterative post-order so deep chains cannot overflow the stack
            let mut stack: Vec<(Expr, bool)> = vec![(root.clone(), false)];
            while let Some((e, expanded)) = stack.pop() {
                if by_ptr.contains_key(&e.id()) {
                    continue;
                }
                if !expanded {
                    stack.push((e.clone(), true));
                    match e.node() {
                        Node::Unary(_, a) => stack.push((a.clone(), false)),
                        Node::Binary(_, a, b) => {
                            stack.push((b.clone(), false));
                            stack.push((a.clone(), false));
                        }
                        _ => {}
                    }
                    continue;
                }
                let (key, instr) = match e.node() {
                    Node::Const(c) => (Key::Const(c.to_bits()), Instr::Const(*c)),
                    Node::Var(v) => (Key::Var(*v), Instr::Var(*v)),
                    Node::Unary(op, a) => {
                        let sa = by_ptr[&a.id()];
                        (Key::Unary(*op, sa), Instr::Unary(*op, sa))
                    }
                    Node::Binary(BinaryOp::Pow, a, b) => {
                        let sa = by_ptr[&a.id()];
                        let p = b.as_const().expect("pow exponent is constant");
                        (Key::Pow(sa, p.to_bits()), Instr::Pow(sa, p))
                    }
                    Node::Binary(op, a, b) => {
                        let sa = by_ptr[&a.id()];
                        let sb = by_ptr[&b.id()];
                        (Key::Binary(*op, sa, sb), Instr::Binary(*op, sa, sb))
                    }
                };
                let slot = *by_key.entry(key).or_insert_with(|| {
                    instrs.push(instr);
                    sources.push(e.clone());
                    (instrs.len() - 1) as u32
                });
                by_ptr.insert(e.id(), slot);
            }
            outputs.push(by_ptr[&root.id()]);
        }
        Tape {
            instrs,
            sources,
            outputs,
        }
    }

    pub fn len(&self) -> usize {
        self.instrs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instrs.is_empty()
    }

    pub fn n_outputs(&self) -> usize {
        self.outputs.len()
    }

    /// Evaluates every root at `p`, writing into `out` (resized to fit).
    pub fn eval_into(
        &self,
        p: &BundlePoint,
        scratch: &mut Vec<f64>,
        out: &mut Vec<f64>,
    ) -> Result<(), EvalError> {
        if !p.is_finite() {
            return Err(EvalError::NonFinitePoint);
        }
        scratch.clear();
        scratch.reserve(self.instrs.len());
        for (k, ins) in self.instrs.iter().enumerate() {
            let v = match *ins {
                Instr::Const(c) => c,
                Instr::Var(v) => {
                    let present = match v {
                        Var::Base(i) => i < p.x.len(),
                        Var::Fiber(a) => a < p.y.len(),
                    };
                    if !present {
                        return Err(EvalError::MissingVariable { var: v });
                    }
                    p.get(v)
                }
                Instr::Unary(op, a) => {
                    let x = scratch[a as usize];
                    match op {
                        UnaryOp::Log if x <= 0.0 => {
                            return Err(EvalError::LogDomain {
                                node: describe(&self.sources[k]),
                                value: x,
                            })
                        }
                        UnaryOp::Sqrt if x < 0.0 => {
                            return Err(EvalError::SqrtDomain {
                                node: describe(&self.sources[k]),
                                value: x,
                            })
                        }
                        _ => op.apply(x),
                    }
                }
                Instr::Binary(op, a, b) => {
                    let x = scratch[a as usize];
                    let y = scratch[b as usize];
                    match op {
                        BinaryOp::Add => x + y,
                        BinaryOp::Sub => x - y,
                        BinaryOp::Mul => x * y,
                        BinaryOp::Div => {
                            if y == 0.0 {
                                return Err(EvalError::DivisionByZero {
                                    node: describe(&self.sources[k]),
                                });
                            }
                            x / y
                        }
                        BinaryOp::Pow => unreachable!("pow is compiled to Instr::Pow"),
                    }
                }
                Instr::Pow(a, e) => {
                    let x = scratch[a as usize];
                    if (x < 0.0 && e.fract() != 0.0) || (x == 0.0 && e < 0.0) {
                        return Err(EvalError::PowDomain {
                            node: describe(&self.sources[k]),
                            base: x,
                            exponent: e,
                        });
                    }
                    if e.fract() == 0.0 && e.abs() <= 64.0 {
                        x.powi(e as i32)
                    } else {
                        x.powf(e)
                    }
                }
            };
            scratch.push(v);
        }
        out.clear();
        out.extend(self.outputs.iter().map(|&s| scratch[s as usize]));
        Ok(())
    }

    pub fn eval(&self, p: &BundlePoint) -> Result<Vec<f64>, EvalError> {
        let mut scratch = Vec::new();
        let mut out = Vec::new();
        self.eval_into(p, &mut scratch, &mut out)?;
        Ok(out)
    }
}

/// Evaluates a single expression at `p`.
pub fn evaluate(e: &Expr, p: &BundlePoint) -> Result<f64, EvalError> {
    Ok(Tape::compile(std::slice::from_ref(e)).eval(p)?[0])
}
