use super::{BinOp, ExprAst, Func};

/// Evaluation failure.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum EvalError {
    #[error("unbound variable '{0}'")]
    UnboundVariable(String),
    /// An intermediate or final value was NaN or infinite.
    #[error("non-finite value in {op}")]
    NonFinite { op: String },
}

/// Ordered identifier-to-value bindings with unique names.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Scope {
    names: Vec<String>,
    values: Vec<f64>,
}

impl Scope {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_pairs<'a>(pairs: impl IntoIterator<Item = (&'a str, f64)>) -> Self {
        let mut s = Scope::new();
        for (n, v) in pairs {
            s.set(n, v);
        }
        s
    }

    /// Binds `names[i]` to `values[i]`.
    pub fn from_slices<S: AsRef<str>>(names: &[S], values: &[f64]) -> Self {
        Scope::from_pairs(names.iter().map(AsRef::as_ref).zip(values.iter().copied()))
    }

    /// Inserts or overwrites a binding.
    pub fn set(&mut self, name: &str, value: f64) {
        match self.names.iter().position(|n| n == name) {
            Some(i) => self.values[i] = value,
            None => {
                self.names.push(name.to_string());
                self.values.push(value);
            }
        }
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| self.values[i])
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }
}

fn finite(v: f64, op: impl FnOnce() -> String) -> Result<f64, EvalError> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(EvalError::NonFinite { op: op() })
    }
}

fn apply_binop(op: BinOp, a: f64, b: f64) -> Result<f64, EvalError> {
    let v = match op {
        BinOp::Add => a + b,
        BinOp::Sub => a - b,
        BinOp::Mul => a * b,
        BinOp::Div => a / b,
        BinOp::Pow => a.powf(b),
    };
    finite(v, || format!("{a:?} {} {b:?}", op.symbol()))
}

fn apply_func(func: Func, args: &[f64]) -> Result<f64, EvalError> {
    let a = args[0];
    let v = match func {
        Func::Sin => a.sin(),
        Func::Cos => a.cos(),
        Func::Tan => a.tan(),
        Func::Cot => a.cos() / a.sin(),
        Func::Exp => a.exp(),
        Func::Ln => a.ln(),
        Func::Sqrt => a.sqrt(),
        Func::Abs => a.abs(),
        Func::Pow => a.powf(args[1]),
    };
    finite(v, || format!("{}({a:?})", func.name()))
}

impl ExprAst {
    /// Strict evaluation: any NaN or infinite intermediate is an error.
    pub fn eval(&self, scope: &Scope) -> Result<f64, EvalError> {
        match self {
            ExprAst::Const(v) => finite(*v, || "constant".into()),
            ExprAst::Var(name) => scope
                .get(name)
                .ok_or_else(|| EvalError::UnboundVariable(name.clone()))
                .and_then(|v| finite(v, || format!("variable {name}"))),
            ExprAst::Neg(inner) => Ok(-inner.eval(scope)?),
            ExprAst::Binary(op, l, r) => apply_binop(*op, l.eval(scope)?, r.eval(scope)?),
            ExprAst::Call(func, args) => {
                let vals = args
                    .iter()
                    .map(|a| a.eval(scope))
                    .collect::<Result<Vec<_>, _>>()?;
                apply_func(*func, &vals)
            }
        }
    }

    /// Resolves variables to positional slots in `names`.
    pub fn bind<S: AsRef<str>>(&self, names: &[S]) -> Result<BoundExpr, EvalError> {
        let mut code = Vec::new();
        compile(self, names, &mut code)?;
        Ok(BoundExpr {
            code,
            arity: names.len(),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Instr {
    Const(f64),
    Slot(usize),
    Neg,
    Bin(BinOp),
    Call(Func),
}

fn compile<S: AsRef<str>>(
    ast: &ExprAst,
    names: &[S],
    code: &mut Vec<Instr>,
) -> Result<(), EvalError> {
    match ast {
        ExprAst::Const(v) => code.push(Instr::Const(*v)),
        ExprAst::Var(name) => {
            let slot = names
                .iter()
                .position(|n| n.as_ref() == name)
                .ok_or_else(|| EvalError::UnboundVariable(name.clone()))?;
            code.push(Instr::Slot(slot));
        }
        ExprAst::Neg(inner) => {
            compile(inner, names, code)?;
            code.push(Instr::Neg);
        }
        ExprAst::Binary(op, l, r) => {
            compile(l, names, code)?;
            compile(r, names, code)?;
            code.push(Instr::Bin(*op));
        }
        ExprAst::Call(func, args) => {
            for a in args {
                compile(a, names, code)?;
            }
            code.push(Instr::Call(*func));
        }
    }
    Ok(())
}

/// An expression compiled against a fixed variable order, evaluated on a
/// stack machine. Produces the same bits as [`ExprAst::eval`].
#[derive(Debug, Clone, PartialEq)]
pub struct BoundExpr {
    code: Vec<Instr>,
    arity: usize,
}

impl BoundExpr {
    pub fn arity(&self) -> usize {
        self.arity
    }

    pub fn eval(&self, values: &[f64]) -> Result<f64, EvalError> {
        let mut stack: Vec<f64> = Vec::with_capacity(8);
        for ins in &self.code {
            match ins {
                Instr::Const(v) => stack.push(finite(*v, || "constant".into())?),
                Instr::Slot(i) => stack.push(finite(values[*i], || format!("slot {i}"))?),
                Instr::Neg => {
                    let a = stack.pop().expect("stack underflow");
                    stack.push(-a);
                }
                Instr::Bin(op) => {
                    let b = stack.pop().expect("stack underflow");
                    let a = stack.pop().expect("stack underflow");
                    stack.push(apply_binop(*op, a, b)?);
                }
                Instr::Call(func) => {
                    let n = func.arity();
                    let at = stack.len() - n;
                    let v = apply_func(*func, &stack[at..])?;
                    stack.truncate(at);
                    stack.push(v);
                }
            }
        }
        Ok(stack.pop().expect("empty program"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse;
    use std::f64::consts::FRAC_PI_2;

    fn eval_with(src: &str, pairs: &[(&str, f64)]) -> Result<f64, EvalError> {
        parse(src)
            .unwrap()
            .eval(&Scope::from_pairs(pairs.iter().copied()))
    }

    #[test]
    fn linear_arithmetic() {
        assert_eq!(eval_with("x1+2", &[("x1", 3.0)]).unwrap(), 5.0);
    }

    #[test]
    fn cot_vanishes_at_half_pi() {
        let v = eval_with("cot(t)", &[("t", FRAC_PI_2)]).unwrap();
        assert!(v.abs() < 1e-15);
    }

    #[test]
    fn strict_non_finite() {
        assert!(matches!(
            eval_with("1/x1", &[("x1", 0.0)]),
            Err(EvalError::NonFinite { .. })
        ));
        assert!(matches!(
            eval_with("ln(x1)", &[("x1", -1.0)]),
            Err(EvalError::NonFinite { .. })
        ));
        assert!(matches!(
            eval_with("cot(0)", &[]),
            Err(EvalError::NonFinite { .. })
        ));
        assert!(matches!(
            eval_with("0*(1/0)", &[]),
            Err(EvalError::NonFinite { .. })
        ));
    }

    #[test]
    fn unbound_variable() {
        assert_eq!(
            eval_with("x1 + x2", &[("x1", 1.0)]),
            Err(EvalError::UnboundVariable("x2".into()))
        );
        let ast = parse("x1 * y").unwrap();
        assert_eq!(
            ast.bind(&["x1"]),
            Err(EvalError::UnboundVariable("y".into()))
        );
    }

    #[test]
    fn precedence_semantics() {
        assert_eq!(eval_with("-2^2", &[]).unwrap(), -4.0);
        assert_eq!(eval_with("2^-1", &[]).unwrap(), 0.5);
        assert_eq!(eval_with("2^3^2", &[]).unwrap(), 512.0);
        assert_eq!(eval_with("8/4/2", &[]).unwrap(), 1.0);
        assert_eq!(eval_with("2*-3", &[]).unwrap(), -6.0);
        assert_eq!(eval_with("pow(2, 10) - abs(-4)", &[]).unwrap(), 1020.0);
    }

    #[test]
    fn bound_matches_tree_walk() {
        let src = "sin(x1)*exp(-x2^2) + sqrt(abs(x1 - x2)) / (1 + cot(x2)^2) - ln(pow(x1, 2) + 1)";
        let ast = parse(src).unwrap();
        let bound = ast.bind(&["x1", "x2"]).unwrap();
        for k in 1..50 {
            let x1 = 0.1 * k as f64 - 2.3;
            let x2 = 0.37 * k as f64 + 0.05;
            let tree = ast
                .eval(&Scope::from_pairs([("x1", x1), ("x2", x2)]))
                .unwrap();
            assert_eq!(bound.eval(&[x1, x2]).unwrap().to_bits(), tree.to_bits());
        }
    }

    #[test]
    fn scope_overwrites() {
        let mut s = Scope::from_pairs([("a", 1.0)]);
        s.set("a", 2.0);
        assert_eq!(s.len(), 1);
        assert_eq!(s.get("a"), Some(2.0));
    }
}
