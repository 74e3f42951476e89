//! Postfix evaluation of expressions over indexed variable slots.

use nalgebra::DMatrix;

use super::{BinOp, Dual, EvalError, Expr, Func, Real};

#[derive(Clone, Debug)]
enum Op {
    Const(f64),
    Var(usize),
    Neg,
    Func(Func),
    Bin(BinOp),
    Pow(i32),
}

/// An expression with variables resolved to slot indices.
#[derive(Clone, Debug)]
pub struct CompiledExpr {
    ops: Vec<Op>,
    paths: Vec<String>,
    nvars: usize,
}

impl CompiledExpr {
    /// Resolves every variable of `expr` against `vars`.
    pub fn compile(expr: &Expr, vars: &[&str]) -> Result<Self, EvalError> {
        let mut c = CompiledExpr { ops: Vec::new(), paths: Vec::new(), nvars: vars.len() };
        c.emit(expr, vars, "root".to_string())?;
        Ok(c)
    }

    fn emit(&mut self, e: &Expr, vars: &[&str], path: String) -> Result<(), EvalError> {
        let op = match e {
            Expr::Const(c) => Op::Const(*c),
            Expr::Var(v) => match vars.iter().position(|n| n == v) {
                Some(k) => Op::Var(k),
                None => return Err(EvalError::UnboundVariable(v.clone())),
            },
            Expr::Neg(a) => {
                self.emit(a, vars, format!("{path}.0"))?;
                Op::Neg
            }
            Expr::Func(f, a) => {
                self.emit(a, vars, format!("{path}.0"))?;
                Op::Func(*f)
            }
            Expr::Pow(a, n) => {
                self.emit(a, vars, format!("{path}.0"))?;
                Op::Pow(*n)
            }
            Expr::Bin(op, a, b) => {
                self.emit(a, vars, format!("{path}.0"))?;
                self.emit(b, vars, format!("{path}.1"))?;
                Op::Bin(*op)
            }
        };
        self.ops.push(op);
        self.paths.push(path);
        Ok(())
    }

    pub fn nvars(&self) -> usize {
        self.nvars
    }

    fn domain(&self, k: usize, op: &'static str, value: f64) -> EvalError {
        EvalError::Domain { op, path: self.paths[k].clone(), value }
    }

    /// Evaluates over any scalar type.
    pub fn eval_generic<T: Real>(&self, inputs: &[T]) -> Result<T, EvalError> {
        assert_eq!(inputs.len(), self.nvars, "input count");
        let mut st: Vec<T> = Vec::with_capacity(8);
        for (k, op) in self.ops.iter().enumerate() {
            let v = match op {
                Op::Const(c) => T::cst(*c),
                Op::Var(i) => inputs[*i].clone(),
                Op::Neg => st.pop().unwrap().neg(),
                Op::Func(f) => {
                    let a = st.pop().unwrap();
                    match f {
                        Func::Sin => a.sin(),
                        Func::Cos => a.cos(),
                        Func::Exp => a.exp(),
                        Func::Ln => {
                            if a.re() <= 0.0 {
                                return Err(self.domain(k, "ln", a.re()));
                            }
                            a.ln()
                        }
                        Func::Sqrt => {
                            if a.re() < 0.0 {
                                return Err(self.domain(k, "sqrt", a.re()));
                            }
                            a.sqrt()
                        }
                    }
                }
                Op::Pow(n) => {
                    let a = st.pop().unwrap();
                    if *n < 0 && a.re() == 0.0 {
                        return Err(self.domain(k, "^", 0.0));
                    }
                    a.powi(*n)
                }
                Op::Bin(op) => {
                    let b = st.pop().unwrap();
                    let a = st.pop().unwrap();
                    match op {
                        BinOp::Add => a.add(&b),
                        BinOp::Sub => a.sub(&b),
                        BinOp::Mul => a.mul(&b),
                        BinOp::Div => {
                            if b.re() == 0.0 {
                                return Err(self.domain(k, "/", 0.0));
                            }
                            a.div(&b)
                        }
                    }
                }
            };
            st.push(v);
        }
        Ok(st.pop().expect("non-empty tape"))
    }

    pub fn eval(&self, inputs: &[f64]) -> Result<f64, EvalError> {
        self.eval_generic(inputs)
    }

    /// Value and gradient with respect to the slots listed in `wrt`.
    pub fn gradient(&self, inputs: &[f64], wrt: &[usize]) -> Result<(f64, Vec<f64>), EvalError> {
        let k = wrt.len();
        let xs: Vec<Dual<f64>> = inputs
            .iter()
            .enumerate()
            .map(|(i, &v)| match wrt.iter().position(|&w| w == i) {
                Some(s) => Dual::variable(v, s, k),
                None => Dual::constant(v),
            })
            .collect();
        let r = self.eval_generic(&xs)?;
        Ok((r.v, (0..k).map(|s| r.deriv(s)).collect()))
    }

    /// Value, gradient and Hessian with respect to the slots in `wrt`.
    /// The Hessian is filled from its upper triangle, so it is exactly
    /// symmetric.
    pub fn hessian(&self, inputs: &[f64], wrt: &[usize]) -> Result<(f64, Vec<f64>, DMatrix<f64>), EvalError> {
        let k = wrt.len();
        let xs: Vec<Dual<Dual<f64>>> = inputs
            .iter()
            .enumerate()
            .map(|(i, &v)| match wrt.iter().position(|&w| w == i) {
                Some(s) => Dual {
                    v: Dual::variable(v, s, k),
                    d: (0..k).map(|j| Dual::constant(if j == s { 1.0 } else { 0.0 })).collect(),
                },
                None => Dual::constant(Dual::constant(v)),
            })
            .collect();
        let r = self.eval_generic(&xs)?;
        let g: Vec<f64> = (0..k).map(|s| r.deriv(s).v).collect();
        let mut h = DMatrix::zeros(k, k);
        for i in 0..k {
            let row = r.deriv(i);
            for j in i..k {
                let v = row.deriv(j);
                h[(i, j)] = v;
                h[(j, i)] = v;
            }
        }
        Ok((r.v.v, g, h))
    }
}
