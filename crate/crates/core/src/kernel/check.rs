use std::collections::BTreeMap;

use super::{Expr, KernelError, KernelProgram, Stmt};
use crate::model::ElemType;

/// Source positions recorded by the parser, in pre-order statement order.
#[derive(Debug, Default)]
pub(crate) struct Spans {
    pub stmts: Vec<(usize, usize)>,
    pub locals: Vec<(usize, usize)>,
}

impl Spans {
    fn stmt(&self, i: usize) -> (usize, usize) {
        self.stmts.get(i).copied().unwrap_or((0, 0))
    }

    fn local(&self, i: usize) -> (usize, usize) {
        self.locals.get(i).copied().unwrap_or((0, 0))
    }
}

fn mismatch(message: impl Into<String>) -> KernelError {
    KernelError::TypeMismatch {
        line: 0,
        col: 0,
        message: message.into(),
    }
}

fn unbound(name: &str) -> KernelError {
    KernelError::UnboundName {
        line: 0,
        col: 0,
        name: name.to_string(),
    }
}

fn syntax(message: impl Into<String>) -> KernelError {
    KernelError::Syntax {
        line: 0,
        col: 0,
        message: message.into(),
    }
}

/// Type of `expr` given a name lookup returning `(elem_type, is_array)`.
pub fn expr_type(expr: &Expr, lookup: &dyn Fn(&str) -> Option<(ElemType, bool)>) -> Result<ElemType, KernelError> {
    let scalar = |name: &str| match lookup(name) {
        None => Err(unbound(name)),
        Some((_, true)) => Err(mismatch(format!("array `{name}` used as a scalar"))),
        Some((t, false)) => Ok(t),
    };
    let array = |name: &str| match lookup(name) {
        None => Err(unbound(name)),
        Some((_, false)) => Err(mismatch(format!("scalar `{name}` used as an array"))),
        Some((t, true)) => Ok(t),
    };
    match expr {
        Expr::Int { .. } => Ok(ElemType::Int32),
        Expr::Float { .. } => Ok(ElemType::Float32),
        Expr::Var { name } => scalar(name),
        Expr::Index { array: name, index } => {
            let t = array(name)?;
            if expr_type(index, lookup)? != ElemType::Int32 {
                return Err(mismatch(format!("index into `{name}` must be int")));
            }
            Ok(t)
        }
        Expr::Binary { op, lhs, rhs } => {
            let l = expr_type(lhs, lookup)?;
            let r = expr_type(rhs, lookup)?;
            if l != r {
                return Err(mismatch(format!("operands of `{op}` are {l} and {r}; use int() or float()")));
            }
            Ok(l)
        }
        Expr::Compare { op, lhs, rhs } => {
            let l = expr_type(lhs, lookup)?;
            let r = expr_type(rhs, lookup)?;
            if l != r {
                return Err(mismatch(format!("operands of `{op}` are {l} and {r}; use int() or float()")));
            }
            Ok(ElemType::Int32)
        }
        Expr::Neg { operand } => expr_type(operand, lookup),
        Expr::Cast { to, operand } => {
            expr_type(operand, lookup)?;
            Ok(*to)
        }
        Expr::Len { array: name } => {
            array(name)?;
            Ok(ElemType::Int32)
        }
        Expr::CoreId | Expr::CoreCount => Ok(ElemType::Int32),
    }
}

fn has_index(expr: &Expr) -> bool {
    match expr {
        Expr::Index { .. } => true,
        Expr::Binary { lhs, rhs, .. } | Expr::Compare { lhs, rhs, .. } => has_index(lhs) || has_index(rhs),
        Expr::Neg { operand } | Expr::Cast { operand, .. } => has_index(operand),
        _ => false,
    }
}

pub(crate) fn check_program(program: &KernelProgram, spans: &Spans) -> Result<(), KernelError> {
    let mut names: BTreeMap<&str, (ElemType, bool)> = BTreeMap::new();
    for p in &program.params {
        if names.insert(&p.name, (p.elem_type, p.is_array)).is_some() {
            return Err(syntax(format!("duplicate name `{}`", p.name)));
        }
    }
    let params = names.clone();
    for (i, l) in program.locals.iter().enumerate() {
        let (line, col) = spans.local(i);
        if names.insert(&l.name, (l.elem_type, l.is_array)).is_some() {
            return Err(syntax(format!("duplicate name `{}`", l.name)).at(line, col));
        }
        if let Some(fill) = l.fill {
            if fill.elem_type() != l.elem_type {
                return Err(mismatch(format!("`{}` is {} but filled with {}", l.name, l.elem_type, fill.elem_type()))
                    .at(line, col));
            }
        }
        match (&l.length, l.is_array) {
            (None, true) => return Err(syntax(format!("array `{}` has no length", l.name)).at(line, col)),
            (Some(_), false) => return Err(syntax(format!("scalar `{}` has a length", l.name)).at(line, col)),
            (Some(len), true) => {
                if has_index(len) {
                    return Err(syntax(format!("length of `{}` may not read array elements", l.name)).at(line, col));
                }
                let lookup = |n: &str| params.get(n).copied();
                match expr_type(len, &lookup) {
                    Ok(ElemType::Int32) => {}
                    Ok(ElemType::Float32) => {
                        return Err(mismatch(format!("length of `{}` must be int", l.name)).at(line, col))
                    }
                    Err(KernelError::UnboundName { name, .. }) if names.contains_key(name.as_str()) => {
                        return Err(syntax(format!(
                            "length of `{}` uses local `{name}`; only parameters and constants are allowed",
                            l.name
                        ))
                        .at(line, col))
                    }
                    Err(e) => return Err(e.at(line, col)),
                }
            }
            (None, false) => {}
        }
    }

    let lookup = |n: &str| names.get(n).copied();
    let mut counter = 0;
    let mut returned: Option<&str> = None;
    check_block(&program.body, &lookup, spans, &mut counter, &mut returned)?;
    if program.return_var.as_deref() != returned {
        return Err(syntax(format!(
            "return_var {:?} does not match the returned variable {:?}",
            program.return_var, returned
        )));
    }
    Ok(())
}

fn check_block<'p>(
    body: &'p [Stmt],
    lookup: &dyn Fn(&str) -> Option<(ElemType, bool)>,
    spans: &Spans,
    counter: &mut usize,
    returned: &mut Option<&'p str>,
) -> Result<(), KernelError> {
    for stmt in body {
        let (line, col) = spans.stmt(*counter);
        *counter += 1;
        let here = |e: KernelError| e.at(line, col);
        match stmt {
            Stmt::Assign { target, index, value } => {
                let (t, is_array) = lookup(target).ok_or_else(|| here(unbound(target)))?;
                match (index, is_array) {
                    (Some(ix), true) => {
                        if expr_type(ix, lookup).map_err(here)? != ElemType::Int32 {
                            return Err(here(mismatch(format!("index into `{target}` must be int"))));
                        }
                    }
                    (None, false) => {}
                    (Some(_), false) => return Err(here(mismatch(format!("scalar `{target}` cannot be indexed")))),
                    (None, true) => {
                        return Err(here(mismatch(format!("array `{target}` can only be assigned element-wise"))))
                    }
                }
                let v = expr_type(value, lookup).map_err(here)?;
                if v != t {
                    return Err(here(mismatch(format!("cannot assign {v} to {t} `{target}`"))));
                }
            }
            Stmt::While { cond, body } => {
                if expr_type(cond, lookup).map_err(here)? != ElemType::Int32 {
                    return Err(here(mismatch("loop condition must be int")));
                }
                check_block(body, lookup, spans, counter, returned)?;
            }
            Stmt::Return { var } => {
                lookup(var).ok_or_else(|| here(unbound(var)))?;
                match returned {
                    Some(prev) if *prev != var.as_str() => {
                        return Err(here(syntax(format!("kernel returns both `{prev}` and `{var}`"))))
                    }
                    _ => *returned = Some(var),
                }
            }
        }
    }
    Ok(())
}
