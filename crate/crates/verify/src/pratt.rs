//! Table-driven Pratt parser used as an oracle for the recursive-descent
//! expression parser. It renders its trees as S-expressions directly, so the
//! two parsers share no code beyond the lexing conventions.

use bundlecalc::expr::{BinOp, ExprAst};

#[derive(Debug, Clone, PartialEq)]
enum Token {
    Number(f64),
    Name(String),
    Op(char),
}

fn tokenize(src: &str) -> Option<Vec<Token>> {
    let chars: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            i += 1;
        } else if c.is_ascii_digit() || c == '.' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
                i += 1;
            }
            if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
                i += 1;
                if i < chars.len() && (chars[i] == '+' || chars[i] == '-') {
                    i += 1;
                }
                while i < chars.len() && chars[i].is_ascii_digit() {
                    i += 1;
                }
            }
            let text: String = chars[start..i].iter().collect();
            out.push(Token::Number(text.parse().ok()?));
        } else if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            out.push(Token::Name(chars[start..i].iter().collect()));
        } else if "+-*/^(),".contains(c) {
            out.push(Token::Op(c));
            i += 1;
        } else {
            return None;
        }
    }
    Some(out)
}

/// Infix binding powers `(left, right)`; right-associative `^` has
/// `right < left`.
const INFIX: [(char, u8, u8, &str); 5] = [
    ('+', 10, 11, "add"),
    ('-', 10, 11, "sub"),
    ('*', 20, 21, "mul"),
    ('/', 20, 21, "div"),
    ('^', 40, 39, "pow"),
];

/// Prefix minus binds looser than `^` and tighter than `*`.
const PREFIX_MINUS: u8 = 30;

const FUNCTIONS: [(&str, usize); 9] = [
    ("sin", 1),
    ("cos", 1),
    ("tan", 1),
    ("cot", 1),
    ("exp", 1),
    ("ln", 1),
    ("sqrt", 1),
    ("abs", 1),
    ("pow", 2),
];

struct Pratt {
    toks: Vec<Token>,
    pos: usize,
}

impl Pratt {
    fn peek(&self) -> Option<&Token> {
        self.toks.get(self.pos)
    }

    fn next(&mut self) -> Option<Token> {
        let t = self.toks.get(self.pos).cloned();
        self.pos += 1;
        t
    }

    fn expect(&mut self, c: char) -> Option<()> {
        (self.next()? == Token::Op(c)).then_some(())
    }

    fn parse(&mut self, min_bp: u8) -> Option<String> {
        let mut lhs = match self.next()? {
            Token::Number(v) => format!("{v:?}"),
            Token::Name(name) => {
                if self.peek() == Some(&Token::Op('(')) {
                    let arity = FUNCTIONS.iter().find(|(f, _)| *f == name)?.1;
                    self.next();
                    let mut args = vec![self.parse(0)?];
                    while self.peek() == Some(&Token::Op(',')) {
                        self.next();
                        args.push(self.parse(0)?);
                    }
                    self.expect(')')?;
                    if args.len() != arity {
                        return None;
                    }
                    format!("({name} {})", args.join(" "))
                } else {
                    name
                }
            }
            Token::Op('(') => {
                let inner = self.parse(0)?;
                self.expect(')')?;
                inner
            }
            Token::Op('-') => format!("(neg {})", self.parse(PREFIX_MINUS)?),
            Token::Op(_) => return None,
        };
        loop {
            let op = match self.peek() {
                Some(Token::Op(c)) => *c,
                _ => break,
            };
            let Some(&(_, left, right, name)) = INFIX.iter().find(|(c, ..)| *c == op) else {
                break;
            };
            if left < min_bp {
                break;
            }
            self.next();
            let rhs = self.parse(right)?;
            lhs = format!("({name} {lhs} {rhs})");
        }
        Some(lhs)
    }
}

/// S-expression of `src`, or `None` when the oracle rejects it.
pub fn oracle_sexpr(src: &str) -> Option<String> {
    let mut p = Pratt {
        toks: tokenize(src)?,
        pos: 0,
    };
    let out = p.parse(0)?;
    (p.pos == p.toks.len()).then_some(out)
}

/// S-expression rendering of a tree from the main parser.
pub fn sexpr(ast: &ExprAst) -> String {
    match ast {
        ExprAst::Const(v) => format!("{v:?}"),
        ExprAst::Var(name) => name.clone(),
        ExprAst::Neg(inner) => format!("(neg {})", sexpr(inner)),
        ExprAst::Binary(op, l, r) => {
            let name = match op {
                BinOp::Add => "add",
                BinOp::Sub => "sub",
                BinOp::Mul => "mul",
                BinOp::Div => "div",
                BinOp::Pow => "pow",
            };
            format!("({name} {} {})", sexpr(l), sexpr(r))
        }
        ExprAst::Call(func, args) => {
            let args: Vec<String> = args.iter().map(sexpr).collect();
            format!("({} {})", func.name(), args.join(" "))
        }
    }
}

/// Precedence and associativity fixtures.
pub const PRECEDENCE_CASES: [&str; 56] = [
    "1 + 2 * 3",
    "1 * 2 + 3",
    "1 - 2 - 3",
    "1 / 2 / 3",
    "1 - 2 + 3",
    "1 / 2 * 3",
    "2 ^ 3 ^ 2",
    "-2 ^ 2",
    "2 ^ -1",
    "2 ^ -3 ^ 2",
    "2 ^ -3 * 4",
    "-x1 * x2",
    "--x1",
    "-(-x1)",
    "x1 * -x2",
    "x1 + -x2 * 3",
    "x1 - -x2",
    "(1 + 2) * 3",
    "1 + (2 * 3)",
    "((x1))",
    "x1 ^ 2 ^ 3 ^ 4",
    "(x1 ^ 2) ^ 3",
    "x1 * x2 ^ 2",
    "x1 / x2 ^ -2",
    "sin(x1) ^ 2",
    "sin(x1 ^ 2)",
    "-sin(x1)",
    "sin(-x1)",
    "cos(x1) * sin(x2) + 1",
    "exp(x1 + x2) / 2",
    "pow(x1, 2) + 1",
    "pow(x1 + 1, x2 * 2)",
    "pow(-x1, -2)",
    "sqrt(abs(x1 - x2))",
    "ln(exp(x1))",
    "tan(x1) - cot(x2)",
    "1e-3 * x1",
    "2.5E+2 - .5",
    "3. + 4",
    "x1*x2*x3",
    "x1 + x2 + x3 + x4",
    "x1 - x2 * x3 / x4",
    "x1 ^ x2 * x3 ^ x4",
    "-x1 ^ -x2",
    "1 - -1 - -1",
    "2 * (3 + 4) ^ 2",
    "(2 * 3 + 4) ^ (1 / 2)",
    "u1 * u3 - u2 * u4",
    "-t ^ 2 / 2",
    "t ^ 2 - t + 1",
    "sin(cos(tan(x1)))",
    "pow(pow(x1, 2), 3)",
    "x1 / (x2 / x3)",
    "(x1 / x2) / x3",
    "- 2 * - 3",
    "0.1 + 0.2 * 0.3 ^ 0.4",
];

/// Malformed inputs with the byte offset the parser must report.
pub const MALFORMED_CASES: [(&str, usize); 14] = [
    ("", 0),
    ("sin(", 4),
    ("1 +", 3),
    ("(1+2", 4),
    ("1+2)", 3),
    ("foo(1)", 0),
    ("x1 + bar(2)", 5),
    ("x $ y", 2),
    ("1e", 1),
    ("pow(1)", 0),
    ("sin(1, 2)", 0),
    ("x1 x2", 3),
    ("2*/3", 2),
    ("((x1 + 1)", 9),
];

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn oracle_basics() {
        assert_eq!(
            oracle_sexpr("1 + 2 * 3").unwrap(),
            "(add 1.0 (mul 2.0 3.0))"
        );
        assert_eq!(
            oracle_sexpr("2 ^ 3 ^ 2").unwrap(),
            "(pow 2.0 (pow 3.0 2.0))"
        );
        assert_eq!(oracle_sexpr("-2 ^ 2").unwrap(), "(neg (pow 2.0 2.0))");
        assert_eq!(oracle_sexpr("2 ^ -1").unwrap(), "(pow 2.0 (neg 1.0))");
        assert!(oracle_sexpr("sin(").is_none());
        assert!(oracle_sexpr("1 2").is_none());
    }
}
