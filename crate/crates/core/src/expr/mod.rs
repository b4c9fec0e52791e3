//! Closed-form scalar expressions over named coordinate variables.
//!
//! Grammar (whitespace ignored):
//!
//! ```text
//! expr   = term { ("+" | "-") term } ;
//! term   = unary { ("*" | "/") unary } ;
//! unary  = "-" unary | power ;
//! power  = atom [ "^" unary ] ;
//! atom   = number | ident | ident "(" expr { "," expr } ")" | "(" expr ")" ;
//! number = digits [ "." [ digits ] ] [ exponent ] | "." digits [ exponent ] ;
//! exponent = ("e" | "E") [ "+" | "-" ] digits ;
//! ```
//!
//! `^` is right-associative and binds tighter than unary minus, so `-x1^2`
//! is `-(x1^2)` and `2^-1` is `2^(-1)`.

mod eval;
mod parser;

use std::fmt;

pub use eval::{BoundExpr, EvalError, Scope};
pub use parser::{parse, ParseError};

/// Binary operators.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

impl BinOp {
    pub fn symbol(self) -> char {
        match self {
            BinOp::Add => '+',
            BinOp::Sub => '-',
            BinOp::Mul => '*',
            BinOp::Div => '/',
            BinOp::Pow => '^',
        }
    }
}

/// Built-in functions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Func {
    Sin,
    Cos,
    Tan,
    Cot,
    Exp,
    Ln,
    Sqrt,
    Abs,
    Pow,
}

impl Func {
    pub const ALL: [Func; 9] = [
        Func::Sin,
        Func::Cos,
        Func::Tan,
        Func::Cot,
        Func::Exp,
        Func::Ln,
        Func::Sqrt,
        Func::Abs,
        Func::Pow,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Tan => "tan",
            Func::Cot => "cot",
            Func::Exp => "exp",
            Func::Ln => "ln",
            Func::Sqrt => "sqrt",
            Func::Abs => "abs",
            Func::Pow => "pow",
        }
    }

    pub fn from_name(name: &str) -> Option<Func> {
        Func::ALL.into_iter().find(|f| f.name() == name)
    }

    pub fn arity(self) -> usize {
        match self {
            Func::Pow => 2,
            _ => 1,
        }
    }
}

/// Expression tree.
#[derive(Debug, Clone, PartialEq)]
pub enum ExprAst {
    Const(f64),
    Var(String),
    Neg(Box<ExprAst>),
    Binary(BinOp, Box<ExprAst>, Box<ExprAst>),
    Call(Func, Vec<ExprAst>),
}

impl ExprAst {
    pub fn binary(op: BinOp, lhs: ExprAst, rhs: ExprAst) -> ExprAst {
        ExprAst::Binary(op, Box::new(lhs), Box::new(rhs))
    }

    pub fn neg(inner: ExprAst) -> ExprAst {
        ExprAst::Neg(Box::new(inner))
    }

    pub fn var(name: impl Into<String>) -> ExprAst {
        ExprAst::Var(name.into())
    }

    /// Distinct variable names in first-occurrence order.
    pub fn variables(&self) -> Vec<String> {
        let mut out = Vec::new();
        self.collect_vars(&mut out);
        out
    }

    fn collect_vars(&self, out: &mut Vec<String>) {
        match self {
            ExprAst::Const(_) => {}
            ExprAst::Var(name) => {
                if !out.iter().any(|n| n == name) {
                    out.push(name.clone());
                }
            }
            ExprAst::Neg(inner) => inner.collect_vars(out),
            ExprAst::Binary(_, l, r) => {
                l.collect_vars(out);
                r.collect_vars(out);
            }
            ExprAst::Call(_, args) => args.iter().for_each(|a| a.collect_vars(out)),
        }
    }
}

/// Fully parenthesized rendering that reparses to the same tree.
impl fmt::Display for ExprAst {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ExprAst::Const(v) => write!(f, "{v:?}"),
            ExprAst::Var(name) => f.write_str(name),
            ExprAst::Neg(inner) => write!(f, "(-{inner})"),
            ExprAst::Binary(op, l, r) => write!(f, "({l} {} {r})", op.symbol()),
            ExprAst::Call(func, args) => {
                write!(f, "{}(", func.name())?;
                for (i, a) in args.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{a}")?;
                }
                f.write_str(")")
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn arb_ast() -> impl Strategy<Value = ExprAst> {
        let leaf = prop_oneof![
            (0.0f64..1e6).prop_map(ExprAst::Const),
            prop_oneof![Just(0.0), Just(1.0), Just(2.5), Just(1e-7), Just(3e20)]
                .prop_map(ExprAst::Const),
            prop::sample::select(vec!["x1", "x2", "u3", "t"]).prop_map(ExprAst::var),
        ];
        leaf.prop_recursive(5, 48, 3, |inner| {
            prop_oneof![
                inner.clone().prop_map(ExprAst::neg),
                (
                    prop::sample::select(vec![
                        BinOp::Add,
                        BinOp::Sub,
                        BinOp::Mul,
                        BinOp::Div,
                        BinOp::Pow
                    ]),
                    inner.clone(),
                    inner.clone()
                )
                    .prop_map(|(op, l, r)| ExprAst::binary(op, l, r)),
                (
                    prop::sample::select(Func::ALL.to_vec()),
                    inner.clone(),
                    inner
                )
                    .prop_map(|(func, a, b)| {
                        if func.arity() == 2 {
                            ExprAst::Call(func, vec![a, b])
                        } else {
                            ExprAst::Call(func, vec![a])
                        }
                    }),
            ]
        })
    }

    proptest! {
        #[test]
        fn pretty_print_round_trips(ast in arb_ast()) {
            let printed = ast.to_string();
            let reparsed = parse(&printed).unwrap();
            prop_assert_eq!(reparsed, ast);
        }

        #[test]
        fn binary_ops_match_host_arithmetic(
            a in -1e3f64..1e3,
            b in prop_oneof![-1e3f64..-1e-3, 1e-3f64..1e3],
            op in prop::sample::select(vec![BinOp::Add, BinOp::Sub, BinOp::Mul, BinOp::Div, BinOp::Pow]),
        ) {
            let src = format!("a {} b", op.symbol());
            let ast = parse(&src).unwrap();
            let scope = Scope::from_pairs([("a", a), ("b", b)]);
            let host = match op {
                BinOp::Add => a + b,
                BinOp::Sub => a - b,
                BinOp::Mul => a * b,
                BinOp::Div => a / b,
                BinOp::Pow => a.powf(b),
            };
            match ast.eval(&scope) {
                Ok(v) => prop_assert_eq!(v.to_bits(), host.to_bits()),
                Err(EvalError::NonFinite { .. }) => prop_assert!(!host.is_finite()),
                Err(e) => prop_assert!(false, "unexpected error {e}"),
            }
        }
    }

    #[test]
    fn variables_in_order() {
        let ast = parse("x2 + sin(x1) * x2 - t").unwrap();
        assert_eq!(ast.variables(), vec!["x2", "x1", "t"]);
    }

    #[test]
    fn display_is_fully_parenthesized() {
        let ast = parse("-x1^2 + 3*y").unwrap();
        assert_eq!(ast.to_string(), "((-(x1 ^ 2.0)) + (3.0 * y))");
    }
}
