//! A small arithmetic language for scenario files: numbers, named
//! variables, `+ - * / ^`, unary minus, comparisons (yielding 1 or 0) and
//! parentheses. Expressions can be differentiated symbolically.

use crate::error::{ExperimentError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CmpOp {
    Lt,
    Le,
    Gt,
    Ge,
    Eq,
    Ne,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Num(f64),
    Var(usize),
    Neg(Box<Expr>),
    Bin(BinOp, Box<Expr>, Box<Expr>),
    Cmp(CmpOp, Box<Expr>, Box<Expr>),
}

#[derive(Debug, Clone, PartialEq)]
enum Token {
    Num(f64),
    Ident(String),
    Op(&'static str),
    Open,
    Close,
}

fn lex(src: &str) -> Result<Vec<(usize, Token)>> {
    let err = |offset: usize, message: &str| ExperimentError::Expression {
        source_text: src.to_string(),
        offset,
        message: message.to_string(),
    };
    let bytes = src.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i] as char;
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        let start = i;
        if c.is_ascii_digit() || c == '.' {
            while i < bytes.len() && ((bytes[i] as char).is_ascii_digit() || bytes[i] == b'.') {
                i += 1;
            }
            if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                let mut j = i + 1;
                if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
                    j += 1;
                }
                if j < bytes.len() && bytes[j].is_ascii_digit() {
                    i = j;
                    while i < bytes.len() && bytes[i].is_ascii_digit() {
                        i += 1;
                    }
                }
            }
            let v: f64 = src[start..i]
                .parse()
                .map_err(|_| err(start, "malformed number"))?;
            out.push((start, Token::Num(v)));
            continue;
        }
        if c.is_ascii_alphabetic() || c == '_' {
            while i < bytes.len()
                && ((bytes[i] as char).is_ascii_alphanumeric() || bytes[i] == b'_')
            {
                i += 1;
            }
            out.push((start, Token::Ident(src[start..i].to_string())));
            continue;
        }
        let two = src.get(i..i + 2).unwrap_or("");
        let op = match two {
            "<=" => Some("<="),
            ">=" => Some(">="),
            "==" => Some("=="),
            "!=" => Some("!="),
            _ => None,
        };
        if let Some(op) = op {
            out.push((start, Token::Op(op)));
            i += 2;
            continue;
        }
        let tok = match c {
            '+' => Token::Op("+"),
            '-' => Token::Op("-"),
            '*' => Token::Op("*"),
            '/' => Token::Op("/"),
            '^' => Token::Op("^"),
            '<' => Token::Op("<"),
            '>' => Token::Op(">"),
            '(' => Token::Open,
            ')' => Token::Close,
            _ => return Err(err(start, &format!("unexpected character `{c}`"))),
        };
        out.push((start, tok));
        i += 1;
    }
    Ok(out)
}

struct Parser<'a> {
    src: &'a str,
    tokens: Vec<(usize, Token)>,
    pos: usize,
    vars: &'a [&'a str],
}

impl Parser<'_> {
    fn err(&self, message: &str) -> ExperimentError {
        let offset = self.tokens.get(self.pos).map_or(self.src.len(), |t| t.0);
        ExperimentError::Expression {
            source_text: self.src.to_string(),
            offset,
            message: message.to_string(),
        }
    }

    fn peek_op(&self) -> Option<&'static str> {
        match self.tokens.get(self.pos) {
            Some((_, Token::Op(o))) => Some(o),
            _ => None,
        }
    }

    fn comparison(&mut self) -> Result<Expr> {
        let lhs = self.sum()?;
        let op = match self.peek_op() {
            Some("<") => CmpOp::Lt,
            Some("<=") => CmpOp::Le,
            Some(">") => CmpOp::Gt,
            Some(">=") => CmpOp::Ge,
            Some("==") => CmpOp::Eq,
            Some("!=") => CmpOp::Ne,
            _ => return Ok(lhs),
        };
        self.pos += 1;
        let rhs = self.sum()?;
        Ok(Expr::Cmp(op, Box::new(lhs), Box::new(rhs)))
    }

    fn sum(&mut self) -> Result<Expr> {
        let mut lhs = self.product()?;
        while let Some(op) = self.peek_op().filter(|o| *o == "+" || *o == "-") {
            self.pos += 1;
            let rhs = self.product()?;
            let op = if op == "+" { BinOp::Add } else { BinOp::Sub };
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn product(&mut self) -> Result<Expr> {
        let mut lhs = self.unary()?;
        while let Some(op) = self.peek_op().filter(|o| *o == "*" || *o == "/") {
            self.pos += 1;
            let rhs = self.unary()?;
            let op = if op == "*" { BinOp::Mul } else { BinOp::Div };
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Expr> {
        if self.peek_op() == Some("-") {
            self.pos += 1;
            return Ok(Expr::Neg(Box::new(self.unary()?)));
        }
        if self.peek_op() == Some("+") {
            self.pos += 1;
            return self.unary();
        }
        self.power()
    }

    /// Right-associative; binds tighter than unary minus on its left.
    fn power(&mut self) -> Result<Expr> {
        let base = self.atom()?;
        if self.peek_op() == Some("^") {
            self.pos += 1;
            let exp = self.unary()?;
            return Ok(Expr::Bin(BinOp::Pow, Box::new(base), Box::new(exp)));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Expr> {
        let tok = self.tokens.get(self.pos).cloned();
        match tok {
            Some((_, Token::Num(v))) => {
                self.pos += 1;
                Ok(Expr::Num(v))
            }
            Some((_, Token::Ident(name))) => match self.vars.iter().position(|v| *v == name) {
                Some(i) => {
                    self.pos += 1;
                    Ok(Expr::Var(i))
                }
                None => Err(self.err(&format!("unknown variable `{name}`"))),
            },
            Some((_, Token::Open)) => {
                self.pos += 1;
                let e = self.comparison()?;
                match self.tokens.get(self.pos) {
                    Some((_, Token::Close)) => {
                        self.pos += 1;
                        Ok(e)
                    }
                    _ => Err(self.err("expected `)`")),
                }
            }
            _ => Err(self.err("expected a number, variable or `(`")),
        }
    }
}

impl Expr {
    /// Parses `src` with the given variable names, in index order.
    pub fn parse(src: &str, vars: &[&str]) -> Result<Expr> {
        let mut p = Parser {
            src,
            tokens: lex(src)?,
            pos: 0,
            vars,
        };
        let e = p.comparison()?;
        if p.pos != p.tokens.len() {
            return Err(p.err("unexpected trailing input"));
        }
        Ok(e)
    }

    pub fn eval(&self, vals: &[f64]) -> f64 {
        match self {
            Expr::Num(v) => *v,
            Expr::Var(i) => vals[*i],
            Expr::Neg(a) => -a.eval(vals),
            Expr::Bin(op, a, b) => {
                let (a, b) = (a.eval(vals), b.eval(vals));
                match op {
                    BinOp::Add => a + b,
                    BinOp::Sub => a - b,
                    BinOp::Mul => a * b,
                    BinOp::Div => a / b,
                    BinOp::Pow => a.powf(b),
                }
            }
            Expr::Cmp(op, a, b) => {
                let (a, b) = (a.eval(vals), b.eval(vals));
                let t = match op {
                    CmpOp::Lt => a < b,
                    CmpOp::Le => a <= b,
                    CmpOp::Gt => a > b,
                    CmpOp::Ge => a >= b,
                    CmpOp::Eq => a == b,
                    CmpOp::Ne => a != b,
                };
                t as u8 as f64
            }
        }
    }

    pub fn depends_on(&self, var: usize) -> bool {
        match self {
            Expr::Num(_) => false,
            Expr::Var(i) => *i == var,
            Expr::Neg(a) => a.depends_on(var),
            Expr::Bin(_, a, b) | Expr::Cmp(_, a, b) => a.depends_on(var) || b.depends_on(var),
        }
    }

    /// Partial derivative with respect to variable `var`. Comparisons are
    /// piecewise constant and differentiate to zero; powers need an exponent
    /// free of `var`.
    pub fn derivative(&self, var: usize) -> Result<Expr> {
        use Expr::*;
        let b = Box::new;
        Ok(match self {
            Num(_) | Cmp(..) => Num(0.0),
            Var(i) => Num((*i == var) as u8 as f64),
            Neg(a) => Neg(b(a.derivative(var)?)),
            Bin(op, l, r) => {
                let (dl, dr) = (l.derivative(var)?, r.derivative(var)?);
                match op {
                    BinOp::Add => Bin(BinOp::Add, b(dl), b(dr)),
                    BinOp::Sub => Bin(BinOp::Sub, b(dl), b(dr)),
                    BinOp::Mul => Bin(
                        BinOp::Add,
                        b(Bin(BinOp::Mul, b(dl), r.clone())),
                        b(Bin(BinOp::Mul, l.clone(), b(dr))),
                    ),
                    BinOp::Div => Bin(
                        BinOp::Div,
                        b(Bin(
                            BinOp::Sub,
                            b(Bin(BinOp::Mul, b(dl), r.clone())),
                            b(Bin(BinOp::Mul, l.clone(), b(dr))),
                        )),
                        b(Bin(BinOp::Pow, r.clone(), b(Num(2.0)))),
                    ),
                    BinOp::Pow => {
                        if r.depends_on(var) {
                            return Err(ExperimentError::Scenario(
                                "cannot differentiate a power whose exponent depends on the variable".into(),
                            ));
                        }
                        let reduced = Bin(BinOp::Sub, r.clone(), b(Num(1.0)));
                        Bin(
                            BinOp::Mul,
                            b(Bin(BinOp::Mul, r.clone(), b(Bin(BinOp::Pow, l.clone(), b(reduced))))),
                            b(dl),
                        )
                    }
                }
            }
        }
        .simplify())
    }

    /// Constant folding and removal of additive and multiplicative identities.
    pub fn simplify(self) -> Expr {
        use Expr::*;
        match self {
            Neg(a) => match a.simplify() {
                Num(v) => Num(-v),
                e => Neg(Box::new(e)),
            },
            Bin(op, l, r) => {
                let (l, r) = (l.simplify(), r.simplify());
                match (op, &l, &r) {
                    (_, Num(a), Num(c)) => {
                        Num(Bin(op, Box::new(Num(*a)), Box::new(Num(*c))).eval(&[]))
                    }
                    (BinOp::Add, Num(z), _) if *z == 0.0 => r,
                    (BinOp::Add | BinOp::Sub, _, Num(z)) if *z == 0.0 => l,
                    (BinOp::Sub, Num(z), _) if *z == 0.0 => Neg(Box::new(r)),
                    (BinOp::Mul, Num(z), _) | (BinOp::Mul, _, Num(z)) if *z == 0.0 => Num(0.0),
                    (BinOp::Mul, Num(o), _) if *o == 1.0 => r,
                    (BinOp::Mul | BinOp::Div | BinOp::Pow, _, Num(o)) if *o == 1.0 => l,
                    (BinOp::Div, Num(z), _) if *z == 0.0 => Num(0.0),
                    _ => Bin(op, Box::new(l), Box::new(r)),
                }
            }
            Cmp(op, l, r) => Cmp(op, Box::new(l.simplify()), Box::new(r.simplify())),
            e => e,
        }
    }
}

/// First case whose guard is non-zero supplies the value; the final case
/// must be unguarded so every input has a value.
#[derive(Debug, Clone, PartialEq)]
pub struct Piecewise {
    pub cases: Vec<(Option<Expr>, Expr)>,
}

impl Piecewise {
    pub fn constant(v: f64) -> Self {
        Self {
            cases: vec![(None, Expr::Num(v))],
        }
    }

    pub fn new(cases: Vec<(Option<Expr>, Expr)>) -> Result<Self> {
        match cases.last() {
            Some((None, _)) => Ok(Self { cases }),
            Some(_) => Err(ExperimentError::Scenario(
                "the last case must have no `when` guard".into(),
            )),
            None => Err(ExperimentError::Scenario(
                "a piecewise definition needs at least one case".into(),
            )),
        }
    }

    pub fn eval(&self, vals: &[f64]) -> f64 {
        for (guard, value) in &self.cases {
            if guard.as_ref().is_none_or(|g| g.eval(vals) != 0.0) {
                return value.eval(vals);
            }
        }
        f64::NAN
    }

    /// Case-wise derivative; guards are kept as they are.
    pub fn derivative(&self, var: usize) -> Result<Piecewise> {
        let cases = self
            .cases
            .iter()
            .map(|(g, v)| Ok((g.clone(), v.derivative(var)?)))
            .collect::<Result<_>>()?;
        Ok(Piecewise { cases })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(src: &str, x: f64) -> f64 {
        Expr::parse(src, &["x"]).unwrap().eval(&[x])
    }

    #[test]
    fn precedence_and_associativity() {
        assert_eq!(ev("1 + 2 * 3", 0.0), 7.0);
        assert_eq!(ev("(1 + 2) * 3", 0.0), 9.0);
        assert_eq!(ev("2 ^ 3 ^ 2", 0.0), 512.0);
        assert_eq!(ev("-x ^ 2", 3.0), -9.0);
        assert_eq!(ev("10 - 4 - 3", 0.0), 3.0);
        assert_eq!(ev("8 / 4 / 2", 0.0), 1.0);
        assert_eq!(ev("2.5e-1 * x", 4.0), 1.0);
        assert_eq!(ev("x > 1.5", 2.0), 1.0);
        assert_eq!(ev("x - 1 >= 0.5", 1.5), 1.0);
        assert_eq!(ev("x != 2", 2.0), 0.0);
    }

    #[test]
    fn errors_point_at_the_problem() {
        for (src, offset) in [
            ("x + ", 4),
            ("2 * y", 4),
            ("(x", 2),
            ("x $ 1", 2),
            ("1 2", 2),
        ] {
            match Expr::parse(src, &["x"]) {
                Err(ExperimentError::Expression { offset: o, .. }) => {
                    assert_eq!(o, offset, "{src}")
                }
                other => panic!("{src}: {other:?}"),
            }
        }
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let h = 1e-6;
        for src in [
            "x - 1",
            "3 * x ^ 2 - x / 2",
            "(x + 1) / (x ^ 2 + 1)",
            "-(2 * x) ^ 3",
            "x * x * x",
            "4",
        ] {
            let e = Expr::parse(src, &["x"]).unwrap();
            let d = e.derivative(0).unwrap();
            let dd = d.derivative(0).unwrap();
            for x in [-1.3, 0.4, 2.0] {
                let fd = (e.eval(&[x + h]) - e.eval(&[x - h])) / (2.0 * h);
                assert!((d.eval(&[x]) - fd).abs() < 1e-6, "{src} at {x}");
                let fd2 = (d.eval(&[x + h]) - d.eval(&[x - h])) / (2.0 * h);
                assert!((dd.eval(&[x]) - fd2).abs() < 1e-5, "{src} at {x}");
            }
        }
        assert_eq!(
            Expr::parse("x - 1", &["x"]).unwrap().derivative(0).unwrap(),
            Expr::Num(1.0)
        );
        assert!(Expr::parse("2 ^ x", &["x"]).unwrap().derivative(0).is_err());
    }

    #[test]
    fn piecewise_selects_first_true_guard() {
        let p = Piecewise::new(vec![
            (
                Some(Expr::parse("x > 1.5", &["x"]).unwrap()),
                Expr::Num(2.0),
            ),
            (None, Expr::Num(-3.0)),
        ])
        .unwrap();
        assert_eq!(p.eval(&[1.6]), 2.0);
        assert_eq!(p.eval(&[1.5]), -3.0);
        assert!(Piecewise::new(vec![(Some(Expr::Num(1.0)), Expr::Num(0.0))]).is_err());
    }
}
