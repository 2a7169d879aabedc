//! Odds multipliers `δ(X, N)` for the incremental propensity policy.
//!
//! Two presets cover the usual cases; anything else is written as a small
//! arithmetic expression over `n` (cluster size), `delta0`, and cluster
//! means of covariates referenced as `xbar_<column>`.

use std::fmt;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum Delta {
    Constant(f64),
    /// `δ₀ (1 + 1/n)`: larger shifts for smaller clusters.
    Varying(f64),
    Expr(DeltaExpr),
}

impl Delta {
    pub fn delta0(&self) -> f64 {
        match self {
            Delta::Constant(d) | Delta::Varying(d) => *d,
            Delta::Expr(e) => e.delta0,
        }
    }

    /// Evaluate at a cluster of size `n` with row-major covariates `x`.
    pub fn eval(&self, x: &[f64], p: usize, n: usize) -> f64 {
        match self {
            Delta::Constant(d) => *d,
            Delta::Varying(d) => d * (1.0 + 1.0 / n as f64),
            Delta::Expr(e) => e.eval(x, p, n),
        }
    }

    pub fn mode(&self) -> &'static str {
        match self {
            Delta::Constant(_) => "constant",
            Delta::Varying(_) => "varying",
            Delta::Expr(_) => "expr",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Num(f64),
    N,
    Delta0,
    ColumnMean(usize),
    Neg(Box<Node>),
    Bin(char, Box<Node>, Box<Node>),
    Call(Func, Box<Node>),
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Func {
    Exp,
    Log,
    Sqrt,
}

/// A parsed user expression for `δ`.
#[derive(Debug, Clone, PartialEq)]
pub struct DeltaExpr {
    source: String,
    delta0: f64,
    root: Node,
}

impl fmt::Display for DeltaExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.source)
    }
}

impl DeltaExpr {
    pub fn parse(source: &str, delta0: f64, columns: &[String]) -> Result<Self> {
        let tokens = tokenize(source)?;
        let mut parser = Parser {
            tokens: &tokens,
            pos: 0,
            columns,
        };
        let root = parser.expr()?;
        if parser.pos != tokens.len() {
            return Err(Error::Config(format!("trailing input in delta expression `{source}`")));
        }
        Ok(Self {
            source: source.to_string(),
            delta0,
            root,
        })
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn delta0(&self) -> f64 {
        self.delta0
    }

    pub fn set_delta0(&mut self, delta0: f64) {
        self.delta0 = delta0;
    }

    fn eval(&self, x: &[f64], p: usize, n: usize) -> f64 {
        eval_node(&self.root, self.delta0, x, p, n)
    }
}

fn eval_node(node: &Node, d0: f64, x: &[f64], p: usize, n: usize) -> f64 {
    match node {
        Node::Num(v) => *v,
        Node::N => n as f64,
        Node::Delta0 => d0,
        Node::ColumnMean(k) => (0..n).map(|j| x[j * p + k]).sum::<f64>() / n as f64,
        Node::Neg(a) => -eval_node(a, d0, x, p, n),
        Node::Bin(op, a, b) => {
            let (a, b) = (eval_node(a, d0, x, p, n), eval_node(b, d0, x, p, n));
            match op {
                '+' => a + b,
                '-' => a - b,
                '*' => a * b,
                '/' => a / b,
                _ => a.powf(b),
            }
        }
        Node::Call(f, a) => {
            let a = eval_node(a, d0, x, p, n);
            match f {
                Func::Exp => a.exp(),
                Func::Log => a.ln(),
                Func::Sqrt => a.sqrt(),
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Op(char),
}

fn tokenize(s: &str) -> Result<Vec<Tok>> {
    let chars: Vec<char> = s.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            i += 1;
        } else if c.is_ascii_digit() || c == '.' {
            let start = i;
            while i < chars.len()
                && (chars[i].is_ascii_digit()
                    || chars[i] == '.'
                    || chars[i] == 'e'
                    || ((chars[i] == '-' || chars[i] == '+') && chars[i - 1] == 'e'))
            {
                i += 1;
            }
            let text: String = chars[start..i].iter().collect();
            let v = text
                .parse()
                .map_err(|_| Error::Config(format!("bad number `{text}` in delta expression")))?;
            out.push(Tok::Num(v));
        } else if c.is_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            out.push(Tok::Ident(chars[start..i].iter().collect()));
        } else if "+-*/^()".contains(c) {
            out.push(Tok::Op(c));
            i += 1;
        } else {
            return Err(Error::Config(format!("unexpected `{c}` in delta expression")));
        }
    }
    Ok(out)
}

struct Parser<'a> {
    tokens: &'a [Tok],
    pos: usize,
    columns: &'a [String],
}

impl Parser<'_> {
    fn peek_op(&self) -> Option<char> {
        match self.tokens.get(self.pos) {
            Some(Tok::Op(c)) => Some(*c),
            _ => None,
        }
    }

    fn expr(&mut self) -> Result<Node> {
        let mut lhs = self.term()?;
        while let Some(op @ ('+' | '-')) = self.peek_op() {
            self.pos += 1;
            lhs = Node::Bin(op, Box::new(lhs), Box::new(self.term()?));
        }
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Node> {
        let mut lhs = self.factor()?;
        while let Some(op @ ('*' | '/')) = self.peek_op() {
            self.pos += 1;
            lhs = Node::Bin(op, Box::new(lhs), Box::new(self.factor()?));
        }
        Ok(lhs)
    }

    fn factor(&mut self) -> Result<Node> {
        if self.peek_op() == Some('-') {
            self.pos += 1;
            return Ok(Node::Neg(Box::new(self.factor()?)));
        }
        let base = self.atom()?;
        if self.peek_op() == Some('^') {
            self.pos += 1;
            return Ok(Node::Bin('^', Box::new(base), Box::new(self.factor()?)));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Node> {
        let tok = self
            .tokens
            .get(self.pos)
            .cloned()
            .ok_or_else(|| Error::Config("delta expression ended early".into()))?;
        self.pos += 1;
        match tok {
            Tok::Num(v) => Ok(Node::Num(v)),
            Tok::Op('(') => {
                let inner = self.expr()?;
                if self.peek_op() != Some(')') {
                    return Err(Error::Config("unbalanced parenthesis in delta expression".into()));
                }
                self.pos += 1;
                Ok(inner)
            }
            Tok::Ident(name) => {
                let func = match name.as_str() {
                    "exp" => Some(Func::Exp),
                    "log" => Some(Func::Log),
                    "sqrt" => Some(Func::Sqrt),
                    _ => None,
                };
                if let Some(f) = func {
                    if self.peek_op() != Some('(') {
                        return Err(Error::Config(format!("`{name}` must be called")));
                    }
                    return Ok(Node::Call(f, Box::new(self.atom()?)));
                }
                match name.as_str() {
                    "n" => Ok(Node::N),
                    "delta0" => Ok(Node::Delta0),
                    other => {
                        let col = other.strip_prefix("xbar_").ok_or_else(|| {
                            Error::Config(format!("unknown name `{other}` in delta expression"))
                        })?;
                        let k = self
                            .columns
                            .iter()
                            .position(|c| c == col)
                            .ok_or_else(|| Error::MissingColumn(col.to_string()))?;
                        Ok(Node::ColumnMean(k))
                    }
                }
            }
            Tok::Op(c) => Err(Error::Config(format!("unexpected `{c}` in delta expression"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets() {
        assert_eq!(Delta::Constant(2.0).eval(&[], 0, 5), 2.0);
        assert_eq!(Delta::Varying(2.0).eval(&[], 0, 4), 2.5);
    }

    #[test]
    fn expression_matches_varying_preset() {
        let e = DeltaExpr::parse("delta0 * (1 + 1/n)", 1.5, &[]).unwrap();
        for n in 1..10 {
            let a = Delta::Expr(e.clone()).eval(&[], 0, n);
            let b = Delta::Varying(1.5).eval(&[], 0, n);
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn expression_with_column_mean() {
        let cols = vec!["u".to_string(), "v".to_string()];
        let e = DeltaExpr::parse("exp(xbar_v) ^ 2 - -1", 1.0, &cols).unwrap();
        let x = [0.0, 1.0, 0.0, 3.0];
        let got = Delta::Expr(e).eval(&x, 2, 2);
        assert!((got - ((2.0f64).exp().powi(2) + 1.0)).abs() < 1e-12);
        assert!(matches!(
            DeltaExpr::parse("xbar_w", 1.0, &cols),
            Err(Error::MissingColumn(_))
        ));
        assert!(DeltaExpr::parse("(n", 1.0, &cols).is_err());
        assert!(DeltaExpr::parse("foo", 1.0, &cols).is_err());
    }
}
