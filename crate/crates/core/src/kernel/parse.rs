use std::collections::BTreeMap;

use super::check::{check_program, expr_type, Spans};
use super::{BinOp, CmpOp, Expr, KernelError, KernelProgram, Local, Param, Stmt};
use crate::model::{ElemType, Scalar};

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Int(i32),
    Float(f32),
    Punct(&'static str),
    Newline,
    Indent,
    Dedent,
    Eof,
}

#[derive(Debug, Clone)]
struct Token {
    tok: Tok,
    line: usize,
    col: usize,
}

const PUNCTS: [&str; 23] = [
    "+=", "-=", "*=", "/=", "%=", "<=", ">=", "==", "!=", "(", ")", "[", "]", ",", ":", "=", "+", "-", "*", "/", "%",
    "<", ">",
];

fn syntax(line: usize, col: usize, message: impl Into<String>) -> KernelError {
    KernelError::Syntax {
        line,
        col,
        message: message.into(),
    }
}

fn lex(text: &str) -> Result<Vec<Token>, KernelError> {
    let mut out = Vec::new();
    let mut indents = vec![0usize];
    let mut last_line = 0;
    for (lineno, raw) in text.lines().enumerate() {
        let line = lineno + 1;
        last_line = line;
        let content = match raw.find('#') {
            Some(i) => &raw[..i],
            None => raw,
        };
        if content.trim().is_empty() {
            continue;
        }
        let indent = content.len() - content.trim_start_matches(' ').len();
        if content[indent..].starts_with('\t') {
            return Err(syntax(line, indent + 1, "tabs are not allowed for indentation"));
        }
        let top = *indents.last().unwrap();
        if indent > top {
            indents.push(indent);
            out.push(Token { tok: Tok::Indent, line, col: 1 });
        } else {
            while indent < *indents.last().unwrap() {
                indents.pop();
                out.push(Token { tok: Tok::Dedent, line, col: 1 });
            }
            if indent != *indents.last().unwrap() {
                return Err(syntax(line, indent + 1, "indentation does not match any enclosing block"));
            }
        }
        let bytes = content.as_bytes();
        let mut i = indent;
        'scan: while i < bytes.len() {
            let c = bytes[i] as char;
            let col = i + 1;
            if c == ' ' || c == '\t' || c == '\r' {
                i += 1;
                continue;
            }
            if c.is_ascii_alphabetic() || c == '_' {
                let start = i;
                while i < bytes.len() && ((bytes[i] as char).is_ascii_alphanumeric() || bytes[i] == b'_') {
                    i += 1;
                }
                out.push(Token { tok: Tok::Ident(content[start..i].to_string()), line, col });
                continue;
            }
            if c.is_ascii_digit() || (c == '.' && bytes.get(i + 1).is_some_and(|b| b.is_ascii_digit())) {
                let start = i;
                let mut is_float = false;
                while i < bytes.len() && bytes[i].is_ascii_digit() {
                    i += 1;
                }
                if i < bytes.len() && bytes[i] == b'.' {
                    is_float = true;
                    i += 1;
                    while i < bytes.len() && bytes[i].is_ascii_digit() {
                        i += 1;
                    }
                }
                if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                    is_float = true;
                    i += 1;
                    if i < bytes.len() && (bytes[i] == b'+' || bytes[i] == b'-') {
                        i += 1;
                    }
                    while i < bytes.len() && bytes[i].is_ascii_digit() {
                        i += 1;
                    }
                }
                let lit = &content[start..i];
                let tok = if is_float {
                    Tok::Float(lit.parse().map_err(|_| syntax(line, col, format!("bad float literal `{lit}`")))?)
                } else {
                    Tok::Int(
                        lit.parse()
                            .map_err(|_| syntax(line, col, format!("integer literal `{lit}` out of range")))?,
                    )
                };
                out.push(Token { tok, line, col });
                continue;
            }
            for p in PUNCTS {
                if content[i..].starts_with(p) {
                    out.push(Token { tok: Tok::Punct(p), line, col });
                    i += p.len();
                    continue 'scan;
                }
            }
            return Err(syntax(line, col, format!("unexpected character `{c}`")));
        }
        out.push(Token { tok: Tok::Newline, line, col: content.len() + 1 });
    }
    while indents.len() > 1 {
        indents.pop();
        out.push(Token { tok: Tok::Dedent, line: last_line + 1, col: 1 });
    }
    out.push(Token { tok: Tok::Eof, line: last_line + 1, col: 1 });
    Ok(out)
}

struct Parser {
    toks: Vec<Token>,
    pos: usize,
    names: BTreeMap<String, (ElemType, bool)>,
    params: Vec<Param>,
    locals: Vec<Local>,
    spans: Spans,
    return_var: Option<String>,
}

const RESERVED: [&str; 8] = ["def", "while", "return", "int", "float", "len", "core_id", "num_cores"];

impl Parser {
    fn peek(&self) -> &Token {
        &self.toks[self.pos]
    }

    fn next(&mut self) -> Token {
        let t = self.toks[self.pos].clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn err_here(&self, message: impl Into<String>) -> KernelError {
        let t = self.peek();
        syntax(t.line, t.col, message)
    }

    fn describe(tok: &Tok) -> String {
        match tok {
            Tok::Ident(s) => format!("`{s}`"),
            Tok::Int(v) => format!("`{v}`"),
            Tok::Float(v) => format!("`{v}`"),
            Tok::Punct(p) => format!("`{p}`"),
            Tok::Newline => "end of line".into(),
            Tok::Indent => "indent".into(),
            Tok::Dedent => "dedent".into(),
            Tok::Eof => "end of input".into(),
        }
    }

    fn expect_punct(&mut self, p: &'static str) -> Result<Token, KernelError> {
        if self.peek().tok == Tok::Punct(p) {
            Ok(self.next())
        } else {
            Err(self.err_here(format!("expected `{p}`, found {}", Self::describe(&self.peek().tok))))
        }
    }

    fn expect(&mut self, tok: Tok) -> Result<Token, KernelError> {
        if self.peek().tok == tok {
            Ok(self.next())
        } else {
            Err(self.err_here(format!(
                "expected {}, found {}",
                Self::describe(&tok),
                Self::describe(&self.peek().tok)
            )))
        }
    }

    fn is_punct(&self, p: &str) -> bool {
        matches!(&self.peek().tok, Tok::Punct(q) if *q == p)
    }

    fn is_keyword(&self, kw: &str) -> bool {
        matches!(&self.peek().tok, Tok::Ident(s) if s == kw)
    }

    fn ident(&mut self) -> Result<(String, usize, usize), KernelError> {
        let t = self.next();
        match t.tok {
            Tok::Ident(s) if !RESERVED.contains(&s.as_str()) => Ok((s, t.line, t.col)),
            Tok::Ident(s) => Err(syntax(t.line, t.col, format!("`{s}` is reserved"))),
            other => Err(syntax(t.line, t.col, format!("expected a name, found {}", Self::describe(&other)))),
        }
    }

    fn type_name(&mut self) -> Result<ElemType, KernelError> {
        let t = self.next();
        match &t.tok {
            Tok::Ident(s) if s == "int" => Ok(ElemType::Int32),
            Tok::Ident(s) if s == "float" => Ok(ElemType::Float32),
            other => Err(syntax(t.line, t.col, format!("expected `int` or `float`, found {}", Self::describe(other)))),
        }
    }

    fn lookup(&self, name: &str, line: usize, col: usize) -> Result<(ElemType, bool), KernelError> {
        self.names.get(name).copied().ok_or(KernelError::UnboundName {
            line,
            col,
            name: name.to_string(),
        })
    }

    fn kernel(&mut self) -> Result<(String, Vec<Stmt>), KernelError> {
        if !self.is_keyword("def") {
            return Err(self.err_here("a kernel starts with `def`"));
        }
        self.next();
        let (name, _, _) = self.ident()?;
        self.expect_punct("(")?;
        if !self.is_punct(")") {
            loop {
                let (pname, line, col) = self.ident()?;
                self.expect_punct(":")?;
                let elem_type = self.type_name()?;
                let is_array = if self.is_punct("[") {
                    self.next();
                    self.expect_punct("]")?;
                    true
                } else {
                    false
                };
                if self.names.insert(pname.clone(), (elem_type, is_array)).is_some() {
                    return Err(syntax(line, col, format!("duplicate parameter `{pname}`")));
                }
                self.params.push(Param { name: pname, elem_type, is_array });
                if self.is_punct(",") {
                    self.next();
                } else {
                    break;
                }
            }
        }
        self.expect_punct(")")?;
        self.expect_punct(":")?;
        self.expect(Tok::Newline)?;
        self.expect(Tok::Indent)?;
        let body = self.block(true)?;
        self.expect(Tok::Eof)?;
        Ok((name, body))
    }

    /// Statements up to and including the closing dedent.
    fn block(&mut self, top_level: bool) -> Result<Vec<Stmt>, KernelError> {
        let mut body = Vec::new();
        loop {
            match self.peek().tok {
                Tok::Dedent => {
                    self.next();
                    return Ok(body);
                }
                Tok::Eof => return Err(self.err_here("unexpected end of input")),
                _ => {}
            }
            if let Some(stmt) = self.statement(top_level)? {
                body.push(stmt);
            }
        }
    }

    fn statement(&mut self, top_level: bool) -> Result<Option<Stmt>, KernelError> {
        let start = self.peek().clone();
        if self.is_keyword("while") {
            self.next();
            self.spans.stmts.push((start.line, start.col));
            let cond = self.expr()?;
            self.expect_punct(":")?;
            self.expect(Tok::Newline)?;
            if self.peek().tok != Tok::Indent {
                return Err(self.err_here("expected an indented loop body"));
            }
            self.next();
            let body = self.block(false)?;
            return Ok(Some(Stmt::While { cond, body }));
        }
        if self.is_keyword("return") {
            self.next();
            self.spans.stmts.push((start.line, start.col));
            let (var, line, col) = self.ident()?;
            self.lookup(&var, line, col)?;
            self.expect(Tok::Newline)?;
            self.return_var = Some(var.clone());
            return Ok(Some(Stmt::Return { var }));
        }

        let (target, line, col) = self.ident()?;
        let index = if self.is_punct("[") {
            self.next();
            let ix = self.expr()?;
            self.expect_punct("]")?;
            Some(ix)
        } else {
            None
        };
        let op_tok = self.next();
        let aug = match op_tok.tok {
            Tok::Punct("=") => None,
            Tok::Punct("+=") => Some(BinOp::Add),
            Tok::Punct("-=") => Some(BinOp::Sub),
            Tok::Punct("*=") => Some(BinOp::Mul),
            Tok::Punct("/=") => Some(BinOp::Div),
            Tok::Punct("%=") => Some(BinOp::Rem),
            other => {
                return Err(syntax(
                    op_tok.line,
                    op_tok.col,
                    format!("expected an assignment, found {}", Self::describe(&other)),
                ))
            }
        };

        if aug.is_none() && index.is_none() && self.is_punct("[") {
            if !top_level {
                return Err(syntax(line, col, "arrays can only be allocated at the top level of the kernel"));
            }
            if self.names.contains_key(&target) {
                return Err(syntax(line, col, format!("`{target}` is already defined")));
            }
            self.next();
            let neg = if self.is_punct("-") {
                self.next();
                true
            } else {
                false
            };
            let lit = self.next();
            let fill = match lit.tok {
                Tok::Int(v) => Scalar::Int(if neg { v.wrapping_neg() } else { v }),
                Tok::Float(v) => Scalar::Float(if neg { -v } else { v }),
                other => {
                    return Err(syntax(
                        lit.line,
                        lit.col,
                        format!("array fill must be a literal, found {}", Self::describe(&other)),
                    ))
                }
            };
            self.expect_punct("]")?;
            self.expect_punct("*")?;
            let length = self.expr()?;
            self.expect(Tok::Newline)?;
            let elem_type = fill.elem_type();
            self.names.insert(target.clone(), (elem_type, true));
            self.locals.push(Local {
                name: target,
                elem_type,
                is_array: true,
                length: Some(length),
                fill: Some(fill),
            });
            self.spans.locals.push((line, col));
            return Ok(None);
        }

        self.spans.stmts.push((start.line, start.col));
        let rhs = self.expr()?;
        self.expect(Tok::Newline)?;
        let value = match aug {
            None => rhs,
            Some(op) => {
                self.lookup(&target, line, col)?;
                let current = match &index {
                    Some(ix) => Expr::Index { array: target.clone(), index: Box::new(ix.clone()) },
                    None => Expr::Var { name: target.clone() },
                };
                Expr::Binary { op, lhs: Box::new(current), rhs: Box::new(rhs) }
            }
        };
        if index.is_none() && !self.names.contains_key(&target) {
            let names = &self.names;
            let t = expr_type(&value, &|n| names.get(n).copied()).map_err(|e| e.at(start.line, start.col))?;
            self.names.insert(target.clone(), (t, false));
            self.locals.push(Local { name: target.clone(), elem_type: t, is_array: false, length: None, fill: None });
            self.spans.locals.push((line, col));
        } else {
            self.lookup(&target, line, col)?;
        }
        Ok(Some(Stmt::Assign { target, index, value }))
    }

    fn expr(&mut self) -> Result<Expr, KernelError> {
        let lhs = self.additive()?;
        let op = match &self.peek().tok {
            Tok::Punct("<") => CmpOp::Lt,
            Tok::Punct("<=") => CmpOp::Le,
            Tok::Punct(">") => CmpOp::Gt,
            Tok::Punct(">=") => CmpOp::Ge,
            Tok::Punct("==") => CmpOp::Eq,
            Tok::Punct("!=") => CmpOp::Ne,
            _ => return Ok(lhs),
        };
        self.next();
        let rhs = self.additive()?;
        Ok(Expr::Compare { op, lhs: Box::new(lhs), rhs: Box::new(rhs) })
    }

    fn additive(&mut self) -> Result<Expr, KernelError> {
        let mut lhs = self.term()?;
        loop {
            let op = match &self.peek().tok {
                Tok::Punct("+") => BinOp::Add,
                Tok::Punct("-") => BinOp::Sub,
                _ => return Ok(lhs),
            };
            self.next();
            let rhs = self.term()?;
            lhs = Expr::Binary { op, lhs: Box::new(lhs), rhs: Box::new(rhs) };
        }
    }

    fn term(&mut self) -> Result<Expr, KernelError> {
        let mut lhs = self.unary()?;
        loop {
            let op = match &self.peek().tok {
                Tok::Punct("*") => BinOp::Mul,
                Tok::Punct("/") => BinOp::Div,
                Tok::Punct("%") => BinOp::Rem,
                _ => return Ok(lhs),
            };
            self.next();
            let rhs = self.unary()?;
            lhs = Expr::Binary { op, lhs: Box::new(lhs), rhs: Box::new(rhs) };
        }
    }

    fn unary(&mut self) -> Result<Expr, KernelError> {
        if self.is_punct("-") {
            self.next();
            let operand = self.unary()?;
            return Ok(Expr::Neg { operand: Box::new(operand) });
        }
        self.atom()
    }

    fn call_args(&mut self) -> Result<(), KernelError> {
        self.expect_punct("(")?;
        Ok(())
    }

    fn atom(&mut self) -> Result<Expr, KernelError> {
        let t = self.next();
        match t.tok {
            Tok::Int(value) => Ok(Expr::Int { value }),
            Tok::Float(value) => Ok(Expr::Float { value }),
            Tok::Punct("(") => {
                let e = self.expr()?;
                self.expect_punct(")")?;
                Ok(e)
            }
            Tok::Ident(name) => match name.as_str() {
                "int" | "float" => {
                    let to = if name == "int" { ElemType::Int32 } else { ElemType::Float32 };
                    self.call_args()?;
                    let operand = self.expr()?;
                    self.expect_punct(")")?;
                    Ok(Expr::Cast { to, operand: Box::new(operand) })
                }
                "len" => {
                    self.call_args()?;
                    let (array, line, col) = self.ident()?;
                    self.lookup(&array, line, col)?;
                    self.expect_punct(")")?;
                    Ok(Expr::Len { array })
                }
                "core_id" | "num_cores" => {
                    self.call_args()?;
                    self.expect_punct(")")?;
                    Ok(if name == "core_id" { Expr::CoreId } else { Expr::CoreCount })
                }
                "def" | "while" | "return" => Err(syntax(t.line, t.col, format!("unexpected `{name}`"))),
                _ => {
                    self.lookup(&name, t.line, t.col)?;
                    if self.is_punct("[") {
                        self.next();
                        let index = self.expr()?;
                        self.expect_punct("]")?;
                        Ok(Expr::Index { array: name, index: Box::new(index) })
                    } else {
                        Ok(Expr::Var { name })
                    }
                }
            },
            other => Err(syntax(t.line, t.col, format!("expected an expression, found {}", Self::describe(&other)))),
        }
    }
}

/// Parses kernel source text into a validated program.
pub fn parse_kernel(text: &str) -> Result<KernelProgram, KernelError> {
    let toks = lex(text)?;
    let mut p = Parser {
        toks,
        pos: 0,
        names: BTreeMap::new(),
        params: Vec::new(),
        locals: Vec::new(),
        spans: Spans::default(),
        return_var: None,
    };
    let (name, body) = p.kernel()?;
    let program = KernelProgram {
        name,
        params: p.params,
        locals: p.locals,
        body,
        return_var: p.return_var,
    };
    check_program(&program, &p.spans)?;
    Ok(program)
}
