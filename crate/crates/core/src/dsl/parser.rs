use thiserror::Error;

use super::{BinOp, Expr, ExprKind, Func, Span, Vector};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParseError {
    #[error("{span}: syntax error: expected {expected}, found {found}")]
    Syntax { span: Span, expected: String, found: String },
    #[error("{span}: unknown function `{name}`")]
    UnknownFunction { span: Span, name: String },
    #[error("{span}: unknown identifier `{name}`")]
    UnknownIdentifier { span: Span, name: String },
    #[error("{span}: malformed sum: {reason}")]
    MalformedSum { span: Span, reason: String },
}

impl ParseError {
    pub fn span(&self) -> Span {
        match self {
            ParseError::Syntax { span, .. }
            | ParseError::UnknownFunction { span, .. }
            | ParseError::UnknownIdentifier { span, .. }
            | ParseError::MalformedSum { span, .. } => *span,
        }
    }

    pub(crate) fn shifted(mut self, line: usize, col: usize) -> Self {
        let span = match &mut self {
            ParseError::Syntax { span, .. }
            | ParseError::UnknownFunction { span, .. }
            | ParseError::UnknownIdentifier { span, .. }
            | ParseError::MalformedSum { span, .. } => span,
        };
        if span.line == 1 {
            span.col += col;
        }
        span.line += line;
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Sym(char),
    Eof,
}

impl Tok {
    fn describe(&self) -> String {
        match self {
            Tok::Num(x) => format!("number `{x}`"),
            Tok::Ident(s) => format!("`{s}`"),
            Tok::Sym(c) => format!("`{c}`"),
            Tok::Eof => "end of input".to_string(),
        }
    }
}

fn lex(source: &str) -> Result<Vec<(Tok, Span)>, ParseError> {
    let chars: Vec<char> = source.chars().collect();
    let mut out = Vec::new();
    let (mut line, mut col) = (1, 1);
    let mut pos = 0;
    while pos < chars.len() {
        let c = chars[pos];
        let span = Span { line, col };
        if c == '\n' {
            line += 1;
            col = 1;
            pos += 1;
            continue;
        }
        if c.is_whitespace() {
            col += 1;
            pos += 1;
            continue;
        }
        let start = pos;
        if c.is_ascii_digit() || (c == '.' && chars.get(pos + 1).is_some_and(|d| d.is_ascii_digit())) {
            while pos < chars.len() && (chars[pos].is_ascii_digit() || chars[pos] == '.') {
                pos += 1;
            }
            if pos < chars.len() && (chars[pos] == 'e' || chars[pos] == 'E') {
                let mut look = pos + 1;
                if look < chars.len() && (chars[look] == '+' || chars[look] == '-') {
                    look += 1;
                }
                if look < chars.len() && chars[look].is_ascii_digit() {
                    pos = look;
                    while pos < chars.len() && chars[pos].is_ascii_digit() {
                        pos += 1;
                    }
                }
            }
            let text: String = chars[start..pos].iter().collect();
            let value = text.parse::<f64>().map_err(|_| ParseError::Syntax {
                span,
                expected: "a number".into(),
                found: format!("`{text}`"),
            })?;
            out.push((Tok::Num(value), span));
        } else if c.is_alphabetic() || c == '_' {
            while pos < chars.len() && (chars[pos].is_alphanumeric() || chars[pos] == '_') {
                pos += 1;
            }
            out.push((Tok::Ident(chars[start..pos].iter().collect()), span));
        } else if "+-*/^()[],".contains(c) {
            pos += 1;
            out.push((Tok::Sym(c), span));
        } else {
            return Err(ParseError::Syntax { span, expected: "an expression".into(), found: format!("`{c}`") });
        }
        col += pos - start;
    }
    out.push((Tok::Eof, Span { line, col }));
    Ok(out)
}

const RESERVED: [&str; 7] = ["t", "i", "N", "y", "p", "n", "sum"];

struct Parser {
    toks: Vec<(Tok, Span)>,
    pos: usize,
    bound: Vec<String>,
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.pos].0
    }

    fn span(&self) -> Span {
        self.toks[self.pos].1
    }

    fn bump(&mut self) -> (Tok, Span) {
        let tok = self.toks[self.pos].clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        tok
    }

    fn error(&self, expected: &str) -> ParseError {
        ParseError::Syntax { span: self.span(), expected: expected.into(), found: self.peek().describe() }
    }

    fn expect(&mut self, sym: char) -> Result<(), ParseError> {
        if *self.peek() == Tok::Sym(sym) {
            self.bump();
            Ok(())
        } else {
            Err(self.error(&format!("`{sym}`")))
        }
    }

    fn expression(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.term()?;
        loop {
            let op = match self.peek() {
                Tok::Sym('+') => BinOp::Add,
                Tok::Sym('-') => BinOp::Sub,
                _ => return Ok(lhs),
            };
            let (_, span) = self.bump();
            let rhs = self.term()?;
            lhs = Expr::at(ExprKind::Binary { op, lhs: Box::new(lhs), rhs: Box::new(rhs) }, span);
        }
    }

    fn term(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.peek() {
                Tok::Sym('*') => BinOp::Mul,
                Tok::Sym('/') => BinOp::Div,
                _ => return Ok(lhs),
            };
            let (_, span) = self.bump();
            let rhs = self.unary()?;
            lhs = Expr::at(ExprKind::Binary { op, lhs: Box::new(lhs), rhs: Box::new(rhs) }, span);
        }
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        if *self.peek() == Tok::Sym('-') {
            let (_, span) = self.bump();
            let inner = self.unary()?;
            return Ok(Expr::at(ExprKind::Neg(Box::new(inner)), span));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr, ParseError> {
        let base = self.atom()?;
        if *self.peek() == Tok::Sym('^') {
            let (_, span) = self.bump();
            // Right operand may carry its own unary minus: 2^-1.
            let exponent = self.unary()?;
            return Ok(Expr::at(ExprKind::Binary { op: BinOp::Pow, lhs: Box::new(base), rhs: Box::new(exponent) }, span));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Expr, ParseError> {
        let span = self.span();
        match self.peek().clone() {
            Tok::Num(x) => {
                self.bump();
                Ok(Expr::at(ExprKind::Const(x), span))
            }
            Tok::Sym('(') => {
                self.bump();
                let inner = self.expression()?;
                self.expect(')')?;
                Ok(inner)
            }
            Tok::Ident(name) => {
                self.bump();
                self.identifier(name, span)
            }
            _ => Err(self.error("an expression")),
        }
    }

    fn identifier(&mut self, name: String, span: Span) -> Result<Expr, ParseError> {
        let vector = match name.as_str() {
            "y" => Some(Vector::State),
            "p" => Some(Vector::Params),
            "n" => Some(Vector::Noise),
            _ => None,
        };
        if let Some(vector) = vector {
            self.expect('[')?;
            let index = self.expression()?;
            self.expect(']')?;
            return Ok(Expr::at(ExprKind::Index { vector, index: Box::new(index) }, span));
        }
        if name == "sum" {
            return self.sum(span);
        }
        if *self.peek() == Tok::Sym('(') {
            let func = Func::from_name(&name).ok_or(ParseError::UnknownFunction { span, name })?;
            self.bump();
            let arg = self.expression()?;
            self.expect(')')?;
            return Ok(Expr::at(ExprKind::Call { func, arg: Box::new(arg) }, span));
        }
        let kind = match name.as_str() {
            "t" => ExprKind::Time,
            "i" => ExprKind::EqIndex,
            "N" => ExprKind::EqCount,
            _ => match self.bound.iter().rposition(|b| *b == name) {
                Some(depth) => ExprKind::Bound { name, depth },
                None if Func::from_name(&name).is_some() => {
                    return Err(ParseError::Syntax { span, expected: "`(` after function name".into(), found: self.peek().describe() })
                }
                None => return Err(ParseError::UnknownIdentifier { span, name }),
            },
        };
        Ok(Expr::at(kind, span))
    }

    fn sum(&mut self, span: Span) -> Result<Expr, ParseError> {
        let malformed = |reason: &str| ParseError::MalformedSum { span, reason: reason.into() };
        if *self.peek() != Tok::Sym('(') {
            return Err(malformed("expected `sum(<index>, <body>)`"));
        }
        self.bump();
        let var = match self.bump() {
            (Tok::Ident(v), _) if !RESERVED.contains(&v.as_str()) && Func::from_name(&v).is_none() => v,
            (Tok::Ident(v), _) => return Err(malformed(&format!("`{v}` is reserved and cannot be a summation index"))),
            (tok, _) => return Err(malformed(&format!("expected an index name, found {}", tok.describe()))),
        };
        if *self.peek() != Tok::Sym(',') {
            return Err(malformed(&format!("expected `,` after index, found {}", self.peek().describe())));
        }
        self.bump();
        self.bound.push(var.clone());
        let body = self.expression();
        self.bound.pop();
        let body = body?;
        self.expect(')')?;
        Ok(Expr::at(ExprKind::Sum { var, body: Box::new(body) }, span))
    }
}

/// Parses one expression. Positions in errors are relative to `source`.
pub fn parse(source: &str) -> Result<Expr, ParseError> {
    let toks = lex(source)?;
    let mut parser = Parser { toks, pos: 0, bound: Vec::new() };
    let expr = parser.expression()?;
    if *parser.peek() != Tok::Eof {
        return Err(parser.error("an operator or end of input"));
    }
    Ok(expr)
}
