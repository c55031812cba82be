//! The expression mini-language for feature templates.
//!
//! Grammar (whitespace-insensitive):
//!
//! ```text
//! expr  := "raw" | IDENT | FUNC "(" arg ("," arg)* ")"
//! arg   := expr | INT
//! FUNC  := shift | wmean | wmax | wmin | wsum | wstd | ewm
//!        | diff | ratio | square
//! IDENT := [A-Za-z_][A-Za-z0-9_]*
//! INT   := [0-9]+  (decimal, must be positive where used)
//! ```
//!
//! Canonical printing is whitespace-free and round-trips through the parser
//! to an equal tree; `diff` omits its smoothing argument when it is 1.

use std::fmt;

use crate::error::{Error, Result};
use crate::ops::WindowStat;

/// A feature expression over one variate's raw series.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Expr {
    /// The raw input series.
    Raw,
    /// Reference to a previously generated named feature.
    Ref(String),
    Shift(Box<Expr>, usize),
    Window(Box<Expr>, usize, WindowStat),
    /// Difference with smoothing (1 = plain subtraction).
    Diff(Box<Expr>, Box<Expr>, usize),
    Ratio(Box<Expr>, Box<Expr>),
    Square(Box<Expr>),
}

impl Expr {
    pub fn raw() -> Expr {
        Expr::Raw
    }

    pub fn reference(name: impl Into<String>) -> Expr {
        Expr::Ref(name.into())
    }

    pub fn shift(self, k: usize) -> Expr {
        Expr::Shift(Box::new(self), k)
    }

    pub fn window(self, w: usize, stat: WindowStat) -> Expr {
        Expr::Window(Box::new(self), w, stat)
    }

    pub fn diff(a: Expr, b: Expr) -> Expr {
        Expr::Diff(Box::new(a), Box::new(b), 1)
    }

    pub fn diff_smoothed(a: Expr, b: Expr, smoothing: usize) -> Expr {
        Expr::Diff(Box::new(a), Box::new(b), smoothing)
    }

    pub fn ratio(a: Expr, b: Expr) -> Expr {
        Expr::Ratio(Box::new(a), Box::new(b))
    }

    pub fn square(self) -> Expr {
        Expr::Square(Box::new(self))
    }

    /// First difference against the series lagged by one step.
    pub fn first_difference(self) -> Expr {
        Expr::diff(self.clone(), self.shift(1))
    }

    /// Order-upgrade rule: raw is order 0; shift, window, ratio and square
    /// preserve order; difference is max of child orders plus one. `lookup`
    /// resolves named references.
    pub fn order_with(&self, lookup: &dyn Fn(&str) -> Option<u32>) -> Result<u32> {
        Ok(match self {
            Expr::Raw => 0,
            Expr::Ref(name) => lookup(name).ok_or_else(|| {
                Error::Program(format!("unresolved feature reference `{name}`"))
            })?,
            Expr::Shift(e, _) | Expr::Window(e, _, _) | Expr::Square(e) => e.order_with(lookup)?,
            Expr::Diff(a, b, _) => a.order_with(lookup)?.max(b.order_with(lookup)?) + 1,
            Expr::Ratio(a, b) => a.order_with(lookup)?.max(b.order_with(lookup)?),
        })
    }

    /// Order of a closed expression (no named references).
    pub fn order(&self) -> Result<u32> {
        self.order_with(&|_| None)
    }

    /// Analytic warmup of the expression, given the warmups of referenced
    /// features. Mirrors the bookkeeping done by the operator kernels.
    pub fn warmup_with(&self, lookup: &dyn Fn(&str) -> Option<usize>) -> Result<usize> {
        Ok(match self {
            Expr::Raw => 0,
            Expr::Ref(name) => lookup(name).ok_or_else(|| {
                Error::Program(format!("unresolved feature reference `{name}`"))
            })?,
            Expr::Shift(e, k) => e.warmup_with(lookup)? + k,
            Expr::Window(e, w, _) => e.warmup_with(lookup)? + w.saturating_sub(1),
            Expr::Diff(a, b, s) => {
                a.warmup_with(lookup)?.max(b.warmup_with(lookup)?) + s.saturating_sub(1)
            }
            Expr::Ratio(a, b) => a.warmup_with(lookup)?.max(b.warmup_with(lookup)?),
            Expr::Square(e) => e.warmup_with(lookup)?,
        })
    }

    /// Substitutes every named reference by its definition, producing a
    /// closed expression over `raw` only.
    pub fn expand(&self, lookup: &dyn Fn(&str) -> Option<Expr>) -> Result<Expr> {
        Ok(match self {
            Expr::Raw => Expr::Raw,
            Expr::Ref(name) => lookup(name).ok_or_else(|| {
                Error::Program(format!("unresolved feature reference `{name}`"))
            })?,
            Expr::Shift(e, k) => Expr::Shift(Box::new(e.expand(lookup)?), *k),
            Expr::Window(e, w, stat) => Expr::Window(Box::new(e.expand(lookup)?), *w, *stat),
            Expr::Diff(a, b, s) => {
                Expr::Diff(Box::new(a.expand(lookup)?), Box::new(b.expand(lookup)?), *s)
            }
            Expr::Ratio(a, b) => {
                Expr::Ratio(Box::new(a.expand(lookup)?), Box::new(b.expand(lookup)?))
            }
            Expr::Square(e) => Expr::Square(Box::new(e.expand(lookup)?)),
        })
    }

    /// All names referenced anywhere in the expression.
    pub fn references(&self) -> Vec<&str> {
        let mut out = Vec::new();
        self.collect_refs(&mut out);
        out
    }

    fn collect_refs<'a>(&'a self, out: &mut Vec<&'a str>) {
        match self {
            Expr::Raw => {}
            Expr::Ref(name) => out.push(name),
            Expr::Shift(e, _) | Expr::Window(e, _, _) | Expr::Square(e) => e.collect_refs(out),
            Expr::Diff(a, b, _) | Expr::Ratio(a, b) => {
                a.collect_refs(out);
                b.collect_refs(out);
            }
        }
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Raw => write!(f, "raw"),
            Expr::Ref(name) => write!(f, "{name}"),
            Expr::Shift(e, k) => write!(f, "shift({e},{k})"),
            Expr::Window(e, w, stat) => write!(f, "{}({e},{w})", stat.func_name()),
            Expr::Diff(a, b, 1) => write!(f, "diff({a},{b})"),
            Expr::Diff(a, b, s) => write!(f, "diff({a},{b},{s})"),
            Expr::Ratio(a, b) => write!(f, "ratio({a},{b})"),
            Expr::Square(e) => write!(f, "square({e})"),
        }
    }
}

/// Identifiers that can never be used as feature names.
pub fn is_reserved_name(name: &str) -> bool {
    matches!(name, "raw" | "shift" | "diff" | "ratio" | "square")
        || WindowStat::from_func_name(name).is_some()
}

/// Parses one expression, requiring the whole input to be consumed.
pub fn parse_expr(src: &str) -> Result<Expr> {
    let mut parser = Parser::new(src);
    let expr = parser.expr()?;
    parser.expect_eof()?;
    Ok(expr)
}

#[derive(Debug, Clone, PartialEq)]
enum Token {
    Ident(String),
    Int(u64),
    LParen,
    RParen,
    Comma,
    Eof,
}

impl fmt::Display for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Token::Ident(s) => write!(f, "identifier `{s}`"),
            Token::Int(n) => write!(f, "integer `{n}`"),
            Token::LParen => write!(f, "`(`"),
            Token::RParen => write!(f, "`)`"),
            Token::Comma => write!(f, "`,`"),
            Token::Eof => write!(f, "end of input"),
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Pos {
    line: usize,
    col: usize,
}

struct Parser<'a> {
    chars: std::iter::Peekable<std::str::Chars<'a>>,
    line: usize,
    col: usize,
    lookahead: Option<(Token, Pos)>,
}

enum Arg {
    Expr(Expr),
    Int(u64, Pos),
}

impl<'a> Parser<'a> {
    fn new(src: &'a str) -> Self {
        Parser {
            chars: src.chars().peekable(),
            line: 1,
            col: 1,
            lookahead: None,
        }
    }

    fn err(pos: Pos, msg: impl Into<String>) -> Error {
        Error::Parse {
            line: pos.line,
            col: pos.col,
            msg: msg.into(),
        }
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.chars.next()?;
        if c == '\n' {
            self.line += 1;
            self.col = 1;
        } else {
            self.col += 1;
        }
        Some(c)
    }

    fn next_token(&mut self) -> Result<(Token, Pos)> {
        if let Some(tok) = self.lookahead.take() {
            return Ok(tok);
        }
        while matches!(self.chars.peek(), Some(c) if c.is_whitespace()) {
            self.bump();
        }
        let pos = Pos { line: self.line, col: self.col };
        let Some(&c) = self.chars.peek() else {
            return Ok((Token::Eof, pos));
        };
        match c {
            '(' => {
                self.bump();
                Ok((Token::LParen, pos))
            }
            ')' => {
                self.bump();
                Ok((Token::RParen, pos))
            }
            ',' => {
                self.bump();
                Ok((Token::Comma, pos))
            }
            '0'..='9' => {
                let mut n: u64 = 0;
                while matches!(self.chars.peek(), Some(c) if c.is_ascii_digit()) {
                    let d = self.bump().unwrap().to_digit(10).unwrap() as u64;
                    n = n
                        .checked_mul(10)
                        .and_then(|n| n.checked_add(d))
                        .ok_or_else(|| Self::err(pos, "integer literal too large"))?;
                }
                Ok((Token::Int(n), pos))
            }
            c if c.is_ascii_alphabetic() || c == '_' => {
                let mut s = String::new();
                while matches!(self.chars.peek(), Some(c) if c.is_ascii_alphanumeric() || *c == '_')
                {
                    s.push(self.bump().unwrap());
                }
                Ok((Token::Ident(s), pos))
            }
            c => Err(Self::err(pos, format!("unexpected character `{c}`"))),
        }
    }

    fn peek_token(&mut self) -> Result<&(Token, Pos)> {
        if self.lookahead.is_none() {
            let tok = self.next_token()?;
            self.lookahead = Some(tok);
        }
        Ok(self.lookahead.as_ref().unwrap())
    }

    fn expect_eof(&mut self) -> Result<()> {
        let (tok, pos) = self.next_token()?;
        if tok == Token::Eof {
            Ok(())
        } else {
            Err(Self::err(pos, format!("expected end of input, found {tok}")))
        }
    }

    fn expr(&mut self) -> Result<Expr> {
        let (tok, pos) = self.next_token()?;
        let name = match tok {
            Token::Ident(name) => name,
            Token::Int(n) => {
                return Err(Self::err(
                    pos,
                    format!("expected expression, found integer `{n}`"),
                ))
            }
            other => return Err(Self::err(pos, format!("expected expression, found {other}"))),
        };
        if !matches!(self.peek_token()?.0, Token::LParen) {
            if name == "raw" {
                return Ok(Expr::Raw);
            }
            return Ok(Expr::Ref(name));
        }
        self.next_token()?; // consume `(`
        let mut args = Vec::new();
        if !matches!(self.peek_token()?.0, Token::RParen) {
            loop {
                args.push(self.arg()?);
                let (tok, pos) = self.next_token()?;
                match tok {
                    Token::Comma => continue,
                    Token::RParen => break,
                    other => {
                        return Err(Self::err(pos, format!("expected `,` or `)`, found {other}")))
                    }
                }
            }
        } else {
            self.next_token()?; // consume `)`
        }
        self.build_call(&name, args, pos)
    }

    fn arg(&mut self) -> Result<Arg> {
        if let (Token::Int(n), pos) = *self.peek_token()? {
            self.next_token()?;
            return Ok(Arg::Int(n, pos));
        }
        Ok(Arg::Expr(self.expr()?))
    }

    fn build_call(&self, name: &str, args: Vec<Arg>, pos: Pos) -> Result<Expr> {
        let arity = |expected: &str, got: usize| {
            Self::err(pos, format!("`{name}` expects {expected}, got {got} arguments"))
        };
        match name {
            "shift" => {
                let [a, b] = take_args(args).map_err(|n| arity("(expr, int)", n))?;
                Ok(Expr::Shift(Box::new(expr_arg(a, pos, name)?), positive_int(b, pos, name)?))
            }
            "diff" => match args.len() {
                2 => {
                    let [a, b] = take_args(args).map_err(|n| arity("(expr, expr)", n))?;
                    Ok(Expr::Diff(
                        Box::new(expr_arg(a, pos, name)?),
                        Box::new(expr_arg(b, pos, name)?),
                        1,
                    ))
                }
                3 => {
                    let [a, b, s] =
                        take_args(args).map_err(|n| arity("(expr, expr, int)", n))?;
                    Ok(Expr::Diff(
                        Box::new(expr_arg(a, pos, name)?),
                        Box::new(expr_arg(b, pos, name)?),
                        positive_int(s, pos, name)?,
                    ))
                }
                n => Err(arity("(expr, expr[, int])", n)),
            },
            "ratio" => {
                let [a, b] = take_args(args).map_err(|n| arity("(expr, expr)", n))?;
                Ok(Expr::Ratio(
                    Box::new(expr_arg(a, pos, name)?),
                    Box::new(expr_arg(b, pos, name)?),
                ))
            }
            "square" => {
                let [a] = take_args(args).map_err(|n| arity("(expr)", n))?;
                Ok(Expr::Square(Box::new(expr_arg(a, pos, name)?)))
            }
            _ => match WindowStat::from_func_name(name) {
                Some(stat) => {
                    let [a, w] = take_args(args).map_err(|n| arity("(expr, int)", n))?;
                    Ok(Expr::Window(
                        Box::new(expr_arg(a, pos, name)?),
                        positive_int(w, pos, name)?,
                        stat,
                    ))
                }
                None => Err(Self::err(pos, format!("unknown function `{name}`"))),
            },
        }
    }
}

fn take_args<const N: usize>(args: Vec<Arg>) -> std::result::Result<[Arg; N], usize> {
    let n = args.len();
    <[Arg; N]>::try_from(args).map_err(|_| n)
}

fn expr_arg(arg: Arg, pos: Pos, func: &str) -> Result<Expr> {
    match arg {
        Arg::Expr(e) => Ok(e),
        Arg::Int(n, _) => Err(Parser::err(
            pos,
            format!("`{func}` expected a series expression, found integer `{n}`"),
        )),
    }
}

fn positive_int(arg: Arg, pos: Pos, func: &str) -> Result<usize> {
    match arg {
        Arg::Int(n, ipos) => {
            if n == 0 {
                Err(Parser::err(ipos, format!("`{func}` requires a positive integer")))
            } else {
                usize::try_from(n)
                    .map_err(|_| Parser::err(ipos, "integer parameter too large".to_string()))
            }
        }
        Arg::Expr(e) => Err(Parser::err(
            pos,
            format!("`{func}` expected an integer parameter, found expression `{e}`"),
        )),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_raw_and_refs() {
        assert_eq!(parse_expr("raw").unwrap(), Expr::Raw);
        assert_eq!(parse_expr("mom").unwrap(), Expr::Ref("mom".into()));
        assert_eq!(parse_expr(" raw ").unwrap(), Expr::Raw);
    }

    #[test]
    fn parses_nested_calls() {
        let e = parse_expr("ratio(diff(raw,shift(raw,5)),shift(raw,5))").unwrap();
        let lag = Expr::raw().shift(5);
        let expected = Expr::ratio(Expr::diff(Expr::raw(), lag.clone()), lag);
        assert_eq!(e, expected);
    }

    #[test]
    fn canonical_print_round_trips() {
        let exprs = [
            "raw",
            "shift(raw,7)",
            "wmean(raw,25)",
            "diff(raw,shift(raw,1))",
            "diff(wmean(raw,7),wmean(raw,25),3)",
            "ratio(square(raw),ewm(raw,4))",
            "wstd(wsum(raw,3),2)",
            "some_name",
        ];
        for src in exprs {
            let e = parse_expr(src).unwrap();
            assert_eq!(format!("{e}"), *src);
            assert_eq!(parse_expr(&format!("{e}")).unwrap(), e);
        }
    }

    #[test]
    fn order_upgrade_rule() {
        assert_eq!(parse_expr("raw").unwrap().order().unwrap(), 0);
        let d1 = "diff(raw,shift(raw,1))";
        assert_eq!(parse_expr(d1).unwrap().order().unwrap(), 1);
        let d2 = format!("diff({d1},shift({d1},1))");
        assert_eq!(parse_expr(&d2).unwrap().order().unwrap(), 2);
        assert_eq!(
            parse_expr("wmean(diff(raw,shift(raw,1)),7)").unwrap().order().unwrap(),
            1
        );
        assert_eq!(
            parse_expr("ratio(diff(raw,shift(raw,3)),shift(raw,3))")
                .unwrap()
                .order()
                .unwrap(),
            1
        );
    }

    #[test]
    fn syntax_errors_carry_positions() {
        match parse_expr("shift(raw,") {
            Err(Error::Parse { line, col, .. }) => {
                assert_eq!(line, 1);
                assert!(col >= 10);
            }
            other => panic!("expected parse error, got {other:?}"),
        }
        assert!(matches!(parse_expr("frob(raw,1)"), Err(Error::Parse { .. })));
        assert!(matches!(parse_expr("shift(raw)"), Err(Error::Parse { .. })));
        assert!(matches!(parse_expr("shift(raw,0)"), Err(Error::Parse { .. })));
        assert!(matches!(parse_expr("shift(raw,1) raw"), Err(Error::Parse { .. })));
        assert!(matches!(parse_expr("diff(raw,raw,1,2)"), Err(Error::Parse { .. })));
        assert!(matches!(parse_expr("shift(7,raw)"), Err(Error::Parse { .. })));
    }

    #[test]
    fn warmup_bookkeeping_matches_kernels() {
        let e = parse_expr("wmean(diff(raw,shift(raw,1)),7)").unwrap();
        // shift adds 1, diff (smoothing 1) takes the max, wmean(7) adds 6
        assert_eq!(e.warmup_with(&|_| None).unwrap(), 7);
    }

    #[test]
    fn expansion_substitutes_refs() {
        let def = parse_expr("diff(raw,shift(raw,1))").unwrap();
        let e = parse_expr("wmean(d1,7)").unwrap();
        let expanded = e
            .expand(&|name| (name == "d1").then(|| def.clone()))
            .unwrap();
        assert_eq!(format!("{expanded}"), "wmean(diff(raw,shift(raw,1)),7)");
    }
}
