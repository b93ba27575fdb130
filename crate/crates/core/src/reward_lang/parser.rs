use super::ast::{BinOp, Expr, Feature, Func};
use super::{ParseError, MAX_DEPTH, MAX_NODES, MAX_SOURCE_LEN};

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Op(char),
    LParen,
    RParen,
    Comma,
}

impl Tok {
    fn describe(&self) -> String {
        match self {
            Tok::Num(v) => format!("number {v}"),
            Tok::Ident(s) => format!("identifier '{s}'"),
            Tok::Op(c) => format!("'{c}'"),
            Tok::LParen => "'('".into(),
            Tok::RParen => "')'".into(),
            Tok::Comma => "','".into(),
        }
    }
}

fn lex(src: &str) -> Result<Vec<(Tok, usize)>, ParseError> {
    let bytes = src.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i] as char;
        if c.is_ascii_whitespace() {
            i += 1;
            continue;
        }
        let start = i;
        if c.is_ascii_digit() || c == '.' {
            while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == b'.') {
                i += 1;
            }
            if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                let mut j = i + 1;
                if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
                    j += 1;
                }
                if j < bytes.len() && bytes[j].is_ascii_digit() {
                    while j < bytes.len() && bytes[j].is_ascii_digit() {
                        j += 1;
                    }
                    i = j;
                }
            }
            let text = &src[start..i];
            let v: f64 = text.parse().map_err(|_| ParseError::InvalidNumber { text: text.into(), pos: start })?;
            if !v.is_finite() {
                return Err(ParseError::InvalidNumber { text: text.into(), pos: start });
            }
            out.push((Tok::Num(v), start));
            continue;
        }
        if c.is_ascii_alphabetic() || c == '_' {
            while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                i += 1;
            }
            out.push((Tok::Ident(src[start..i].to_string()), start));
            continue;
        }
        let tok = match c {
            '+' | '-' | '*' | '/' => Tok::Op(c),
            '(' => Tok::LParen,
            ')' => Tok::RParen,
            ',' => Tok::Comma,
            _ => {
                let ch = src[start..].chars().next().unwrap_or(c);
                return Err(ParseError::InvalidCharacter { ch, pos: start });
            }
        };
        out.push((tok, start));
        i += 1;
    }
    Ok(out)
}

struct Parser {
    toks: Vec<(Tok, usize)>,
    pos: usize,
    end: usize,
    nesting: usize,
    nodes: usize,
}

pub(super) fn parse_expr(src: &str) -> Result<Expr, ParseError> {
    let len = src.chars().count();
    if len > MAX_SOURCE_LEN {
        return Err(ParseError::TooLong { len });
    }
    if src.trim().is_empty() {
        return Err(ParseError::Empty);
    }
    let toks = lex(src)?;
    let mut p = Parser { toks, pos: 0, end: src.len(), nesting: 0, nodes: 0 };
    let expr = p.expr()?;
    if let Some((t, pos)) = p.toks.get(p.pos) {
        return Err(ParseError::Unexpected { found: t.describe(), expected: "end of input", pos: *pos });
    }
    let depth = expr.depth();
    if depth > MAX_DEPTH {
        return Err(ParseError::TooDeep { depth });
    }
    Ok(expr)
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|(t, _)| t)
    }

    fn here(&self) -> usize {
        self.toks.get(self.pos).map_or(self.end, |(_, p)| *p)
    }

    fn node(&mut self, e: Expr) -> Result<Expr, ParseError> {
        self.nodes += 1;
        if self.nodes > MAX_NODES {
            return Err(ParseError::TooManyNodes { limit: MAX_NODES });
        }
        Ok(e)
    }

    // Nesting is bounded while parsing so hostile input cannot exhaust the stack.
    fn enter(&mut self) -> Result<(), ParseError> {
        self.nesting += 1;
        if self.nesting > MAX_DEPTH {
            return Err(ParseError::TooDeep { depth: self.nesting });
        }
        Ok(())
    }

    fn expect(&mut self, tok: Tok, expected: &'static str) -> Result<(), ParseError> {
        match self.toks.get(self.pos) {
            Some((t, _)) if *t == tok => {
                self.pos += 1;
                Ok(())
            }
            Some((t, pos)) => Err(ParseError::Unexpected { found: t.describe(), expected, pos: *pos }),
            None => Err(ParseError::UnexpectedEnd { expected }),
        }
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.term()?;
        while let Some(Tok::Op(c @ ('+' | '-'))) = self.peek() {
            let op = if *c == '+' { BinOp::Add } else { BinOp::Sub };
            self.pos += 1;
            let rhs = self.term()?;
            lhs = self.node(Expr::Binary(op, Box::new(lhs), Box::new(rhs)))?;
        }
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.unary()?;
        while let Some(Tok::Op(c @ ('*' | '/'))) = self.peek() {
            let op = if *c == '*' { BinOp::Mul } else { BinOp::Div };
            self.pos += 1;
            let rhs = self.unary()?;
            lhs = self.node(Expr::Binary(op, Box::new(lhs), Box::new(rhs)))?;
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        match self.peek() {
            Some(Tok::Op('-')) => {
                self.pos += 1;
                self.enter()?;
                let inner = self.unary()?;
                self.nesting -= 1;
                self.node(Expr::Neg(Box::new(inner)))
            }
            Some(Tok::Op('+')) => {
                self.pos += 1;
                self.unary()
            }
            _ => self.primary(),
        }
    }

    fn primary(&mut self) -> Result<Expr, ParseError> {
        let pos = self.here();
        let Some((tok, _)) = self.toks.get(self.pos).cloned() else {
            return Err(ParseError::UnexpectedEnd { expected: "an operand" });
        };
        self.pos += 1;
        match tok {
            Tok::Num(v) => self.node(Expr::Num(v)),
            Tok::LParen => {
                self.enter()?;
                let e = self.expr()?;
                self.expect(Tok::RParen, "')'")?;
                self.nesting -= 1;
                Ok(e)
            }
            Tok::Ident(name) => {
                let is_call = self.peek() == Some(&Tok::LParen);
                if is_call {
                    let func = Func::from_name(&name).ok_or(ParseError::UnknownFunction { name: name.clone(), pos })?;
                    self.call(func, pos)
                } else if let Some(f) = Feature::from_name(&name) {
                    self.node(Expr::Feature(f))
                } else if Func::from_name(&name).is_some() {
                    Err(ParseError::Unexpected { found: format!("function '{name}'"), expected: "'(' after function name", pos })
                } else {
                    Err(ParseError::UnknownIdentifier { name, pos })
                }
            }
            other => Err(ParseError::Unexpected { found: other.describe(), expected: "an operand", pos }),
        }
    }

    fn call(&mut self, func: Func, pos: usize) -> Result<Expr, ParseError> {
        self.expect(Tok::LParen, "'('")?;
        self.enter()?;
        let mut args = vec![self.expr()?];
        while self.peek() == Some(&Tok::Comma) {
            self.pos += 1;
            args.push(self.expr()?);
        }
        self.expect(Tok::RParen, "')' or ','")?;
        self.nesting -= 1;
        let (lo, hi) = func.arity();
        if args.len() < lo || args.len() > hi {
            return Err(ParseError::Arity { func: func.name(), got: args.len(), pos });
        }
        self.node(Expr::Call(func, args))
    }
}
