//! Parser for the While source syntax.
//!
//! ```text
//! prog := stmt+
//! stmt := "skip" ";" | ident ":=" expr ";"
//!       | "if" expr "{" prog "}" "else" "{" prog "}"
//!       | "while" expr "{" prog "}"
//!       | "acquire" ident ";" | "release" ident ";"
//! expr := int | ident | "(" expr op expr ")"
//! ```
//!
//! `//` starts a comment that runs to the end of the line.

use super::ParseError;
use crate::lang::{BinOp, Expr, Value, Var};
use crate::while_lang::Cmd;

const KEYWORDS: [&str; 7] = ["skip", "if", "else", "while", "acquire", "release", "stop"];

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Int(i128),
    Sym(&'static str),
}

#[derive(Debug, Clone)]
struct Token {
    tok: Tok,
    line: usize,
    col: usize,
}

const SYMBOLS: [&str; 14] = [":=", "==", "!=", "&&", "||", ";", "{", "}", "(", ")", "+", "-", "*", "<"];

fn lex(text: &str) -> Result<Vec<Token>, ParseError> {
    let mut out = Vec::new();
    for (li, line) in text.lines().enumerate() {
        let line = line.split("//").next().unwrap_or("");
        let chars: Vec<char> = line.chars().collect();
        let mut i = 0;
        while i < chars.len() {
            let c = chars[i];
            let (lnum, col) = (li + 1, i + 1);
            if c.is_whitespace() {
                i += 1;
            } else if c.is_ascii_digit() {
                let start = i;
                while i < chars.len() && chars[i].is_ascii_digit() {
                    i += 1;
                }
                let s: String = chars[start..i].iter().collect();
                let n: i128 = s
                    .parse()
                    .map_err(|_| ParseError::new(lnum, col, format!("integer literal `{s}` out of range")))?;
                out.push(Token { tok: Tok::Int(n), line: lnum, col });
            } else if c.is_ascii_alphabetic() || c == '_' {
                let start = i;
                while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                    i += 1;
                }
                out.push(Token { tok: Tok::Ident(chars[start..i].iter().collect()), line: lnum, col });
            } else {
                let rest: String = chars[i..].iter().take(2).collect();
                let sym = SYMBOLS
                    .iter()
                    .find(|s| rest.starts_with(**s))
                    .ok_or_else(|| ParseError::new(lnum, col, format!("unexpected character `{c}`")))?;
                out.push(Token { tok: Tok::Sym(sym), line: lnum, col });
                i += sym.len();
            }
        }
    }
    Ok(out)
}

struct Parser {
    toks: Vec<Token>,
    pos: usize,
    eof: (usize, usize),
}

impl Parser {
    fn new(text: &str) -> Result<Self, ParseError> {
        let toks = lex(text)?;
        let lines = text.lines().count().max(1);
        let last = text.lines().last().map_or(0, |l| l.chars().count());
        Ok(Parser { toks, pos: 0, eof: (lines, last + 1) })
    }

    fn peek(&self) -> Option<&Token> {
        self.toks.get(self.pos)
    }

    fn here(&self) -> (usize, usize) {
        self.peek().map_or(self.eof, |t| (t.line, t.col))
    }

    fn err<T>(&self, msg: impl Into<String>) -> Result<T, ParseError> {
        let (l, c) = self.here();
        Err(ParseError::new(l, c, msg))
    }

    fn describe(&self) -> String {
        match self.peek().map(|t| &t.tok) {
            None => "end of input".into(),
            Some(Tok::Ident(s)) => format!("`{s}`"),
            Some(Tok::Int(n)) => format!("`{n}`"),
            Some(Tok::Sym(s)) => format!("`{s}`"),
        }
    }

    fn eat_sym(&mut self, s: &str) -> bool {
        if matches!(self.peek(), Some(Token { tok: Tok::Sym(t), .. }) if *t == s) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect_sym(&mut self, s: &str) -> Result<(), ParseError> {
        if self.eat_sym(s) {
            Ok(())
        } else {
            self.err(format!("expected `{s}`, found {}", self.describe()))
        }
    }

    fn at_keyword(&self, kw: &str) -> bool {
        matches!(self.peek(), Some(Token { tok: Tok::Ident(s), .. }) if s == kw)
    }

    fn ident(&mut self) -> Result<String, ParseError> {
        match self.peek().map(|t| t.tok.clone()) {
            Some(Tok::Ident(s)) if !KEYWORDS.contains(&s.as_str()) => {
                self.pos += 1;
                Ok(s)
            }
            _ => self.err(format!("expected identifier, found {}", self.describe())),
        }
    }

    fn int(&mut self, negative: bool) -> Result<Value, ParseError> {
        let (l, c) = self.here();
        match self.peek().map(|t| t.tok.clone()) {
            Some(Tok::Int(n)) => {
                self.pos += 1;
                let n = if negative { -n } else { n };
                Value::try_from(n).map_err(|_| ParseError::new(l, c, format!("integer literal `{n}` out of range")))
            }
            _ => self.err(format!("expected integer, found {}", self.describe())),
        }
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        match self.peek().map(|t| t.tok.clone()) {
            Some(Tok::Int(_)) => Ok(Expr::Const(self.int(false)?)),
            Some(Tok::Sym("-")) => {
                self.pos += 1;
                Ok(Expr::Const(self.int(true)?))
            }
            Some(Tok::Sym("(")) => {
                self.pos += 1;
                let a = self.expr()?;
                let op = match self.peek().map(|t| t.tok.clone()) {
                    Some(Tok::Sym(s)) => BinOp::from_symbol(s),
                    _ => None,
                };
                let Some(op) = op else {
                    return self.err(format!("expected operator, found {}", self.describe()));
                };
                self.pos += 1;
                let b = self.expr()?;
                self.expect_sym(")")?;
                Ok(Expr::bin(op, a, b))
            }
            Some(Tok::Ident(_)) => Ok(Expr::Var(Var::new(&self.ident()?))),
            _ => self.err(format!("expected expression, found {}", self.describe())),
        }
    }

    fn block(&mut self) -> Result<Cmd, ParseError> {
        self.expect_sym("{")?;
        let body = self.prog(true)?;
        self.expect_sym("}")?;
        Ok(body)
    }

    /// One or more statements; stops at `}` when `nested`.
    fn prog(&mut self, nested: bool) -> Result<Cmd, ParseError> {
        let mut stmts = Vec::new();
        loop {
            match self.peek() {
                None => break,
                Some(Token { tok: Tok::Sym("}"), .. }) if nested => break,
                _ => stmts.push(self.stmt()?),
            }
        }
        match Cmd::seq_all(stmts) {
            Some(c) => Ok(c),
            None => self.err("expected at least one statement"),
        }
    }

    fn stmt(&mut self) -> Result<Cmd, ParseError> {
        if self.at_keyword("skip") {
            self.pos += 1;
            self.expect_sym(";")?;
            return Ok(Cmd::Skip);
        }
        if self.at_keyword("acquire") || self.at_keyword("release") {
            let acq = self.at_keyword("acquire");
            self.pos += 1;
            let k = Var::new(&self.ident()?);
            self.expect_sym(";")?;
            return Ok(if acq { Cmd::LockAcq(k) } else { Cmd::LockRel(k) });
        }
        if self.at_keyword("if") {
            self.pos += 1;
            let e = self.expr()?;
            let a = self.block()?;
            if !self.at_keyword("else") {
                return self.err(format!("expected `else`, found {}", self.describe()));
            }
            self.pos += 1;
            let b = self.block()?;
            return Ok(Cmd::if_(e, a, b));
        }
        if self.at_keyword("while") {
            self.pos += 1;
            let e = self.expr()?;
            let body = self.block()?;
            return Ok(Cmd::while_(e, body));
        }
        if self.at_keyword("stop") {
            return self.err("`stop` cannot appear in source programs");
        }
        let v = self.ident()?;
        self.expect_sym(":=")?;
        let e = self.expr()?;
        self.expect_sym(";")?;
        Ok(Cmd::Assign(Var::new(&v), e))
    }
}

pub fn parse_program(text: &str) -> Result<Cmd, ParseError> {
    let mut p = Parser::new(text)?;
    let c = p.prog(false)?;
    if p.peek().is_some() {
        return p.err(format!("unexpected {}", p.describe()));
    }
    Ok(c)
}

pub fn parse_expr(text: &str) -> Result<Expr, ParseError> {
    let mut p = Parser::new(text)?;
    let e = p.expr()?;
    if p.peek().is_some() {
        return p.err(format!("unexpected {} after expression", p.describe()));
    }
    Ok(e)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn simple_assignment() {
        assert_eq!(parse_program("x := 1;").unwrap(), Cmd::assign("x", Expr::Const(1)));
    }

    #[test]
    fn expressions() {
        let e = parse_expr("(v + (v + 1))").unwrap();
        let v = Expr::var("v");
        assert_eq!(e, Expr::bin(BinOp::Add, v.clone(), Expr::bin(BinOp::Add, v, Expr::Const(1))));
        assert_eq!(parse_expr("(a - -3)").unwrap(), Expr::bin(BinOp::Sub, Expr::var("a"), Expr::Const(-3)));
        assert_eq!(parse_expr("-9223372036854775808").unwrap(), Expr::Const(i64::MIN));
        assert!(parse_expr("9223372036854775808").is_err());
        assert_eq!(
            parse_expr("((a == b) || (c != 0))").unwrap().to_string(),
            "((a == b) || (c != 0))"
        );
    }

    #[test]
    fn statements_and_comments() {
        let src = "
            // header
            acquire k;   // take it
            if (x < 2) { y := 1; } else { skip; }
            while y { y := 0; }
            release k;
        ";
        let c = parse_program(src).unwrap();
        let expect = Cmd::seq_all([
            Cmd::acquire("k"),
            Cmd::if_(
                Expr::bin(BinOp::Lt, Expr::var("x"), Expr::Const(2)),
                Cmd::assign("y", Expr::Const(1)),
                Cmd::Skip,
            ),
            Cmd::while_(Expr::var("y"), Cmd::assign("y", Expr::Const(0))),
            Cmd::release("k"),
        ])
        .unwrap();
        assert_eq!(c, expect);
    }

    #[test]
    fn printer_round_trips() {
        let src = "acquire k; if (x < 2) { y := 1; z := -4; } else { skip; } while y { y := 0; } release k;";
        let c = parse_program(src).unwrap();
        assert_eq!(parse_program(&c.to_string()).unwrap(), c);
    }

    #[test]
    fn unbalanced_brace_reports_location() {
        let err = parse_program("while x {\n  y := 1;\n").unwrap_err();
        assert_eq!(err.line, 2);
        assert!(err.msg.contains("`}`"), "{err}");
        let err = parse_program("x := 1;\n}\n").unwrap_err();
        assert_eq!((err.line, err.col), (2, 1));
    }

    #[test]
    fn other_errors() {
        assert!(parse_program("").is_err());
        assert!(parse_program("x := (1 + 2;").is_err());
        assert!(parse_program("if x { skip; }").is_err());
        assert!(parse_program("while := 1;").is_err());
        assert!(parse_program("stop;").is_err());
        let err = parse_program("x := 1 $ 2;").unwrap_err();
        assert_eq!((err.line, err.col), (1, 8));
    }
}
