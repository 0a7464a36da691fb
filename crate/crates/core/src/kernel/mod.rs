//! Kernel representation: a small indentation-structured language with
//! scalar and array variables, `while` loops and a single return value.
//!
//! Programs come from [`parse_kernel`] or from the JSON encoding of
//! [`KernelProgram`]; either way [`KernelProgram::validate`] must accept them
//! before they run. [`evaluate_on_host`] is the sequential reference
//! semantics that device runs are checked against.

mod check;
mod eval;
mod parse;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Array, ElemType, Scalar};

pub use check::expr_type;
pub use eval::{evaluate_on_host, EvalError, HostArg};
pub use parse::parse_kernel;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelProgram {
    pub name: String,
    pub params: Vec<Param>,
    #[serde(default)]
    pub locals: Vec<Local>,
    pub body: Vec<Stmt>,
    #[serde(default)]
    pub return_var: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Param {
    pub name: String,
    pub elem_type: ElemType,
    pub is_array: bool,
}

/// A kernel-local variable. Scalars start at zero; arrays are allocated at
/// kernel start with `length` elements, all equal to `fill` (zero if absent).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Local {
    pub name: String,
    pub elem_type: ElemType,
    pub is_array: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub length: Option<Expr>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fill: Option<Scalar>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Rem,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CmpOp {
    Lt,
    Le,
    Gt,
    Ge,
    Eq,
    Ne,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Expr {
    Int { value: i32 },
    Float { value: f32 },
    Var { name: String },
    Index { array: String, index: Box<Expr> },
    Binary { op: BinOp, lhs: Box<Expr>, rhs: Box<Expr> },
    /// Evaluates to int 1 or 0.
    Compare { op: CmpOp, lhs: Box<Expr>, rhs: Box<Expr> },
    Neg { operand: Box<Expr> },
    Cast { to: ElemType, operand: Box<Expr> },
    Len { array: String },
    CoreId,
    CoreCount,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Stmt {
    Assign {
        target: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        index: Option<Expr>,
        value: Expr,
    },
    While {
        cond: Expr,
        body: Vec<Stmt>,
    },
    Return {
        var: String,
    },
}

/// A value produced by a kernel's `return`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum KernelValue {
    Scalar(Scalar),
    Array(Array),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum KernelError {
    #[error("{line}:{col}: syntax error: {message}")]
    Syntax { line: usize, col: usize, message: String },
    #[error("{line}:{col}: unbound name `{name}`")]
    UnboundName { line: usize, col: usize, name: String },
    #[error("{line}:{col}: type mismatch: {message}")]
    TypeMismatch { line: usize, col: usize, message: String },
}

impl KernelError {
    pub(crate) fn at(self, line: usize, col: usize) -> Self {
        match self {
            KernelError::Syntax { message, .. } => KernelError::Syntax { line, col, message },
            KernelError::UnboundName { name, .. } => KernelError::UnboundName { line, col, name },
            KernelError::TypeMismatch { message, .. } => KernelError::TypeMismatch { line, col, message },
        }
    }
}

/// Runtime faults. A trap ends the kernel on the core that raised it.
#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
pub enum Trap {
    #[error("division by zero")]
    DivByZero,
    #[error("index {index} out of bounds for `{array}` of length {length}")]
    OutOfBounds { array: String, index: i64, length: usize },
    #[error("negative array length {0}")]
    NegativeLength(i64),
    #[error("write to read-only `{0}`")]
    ReadOnlyViolation(String),
    #[error("host does not know reference {0}")]
    UnknownReference(u64),
    #[error("transport failure: {0}")]
    Transport(String),
}

impl KernelProgram {
    pub fn param(&self, name: &str) -> Option<&Param> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn array_params(&self) -> impl Iterator<Item = (usize, &Param)> {
        self.params.iter().enumerate().filter(|(_, p)| p.is_array)
    }

    /// Checks names, types and local array lengths. Errors carry no position.
    pub fn validate(&self) -> Result<(), KernelError> {
        check::check_program(self, &check::Spans::default())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("program serialises")
    }

    /// Decodes and validates the JSON form.
    pub fn from_json(text: &str) -> Result<Self, KernelError> {
        let program: KernelProgram = serde_json::from_str(text).map_err(|e| KernelError::Syntax {
            line: e.line(),
            col: e.column(),
            message: e.to_string(),
        })?;
        program.validate()?;
        Ok(program)
    }

    /// Whether the text is JSON rather than kernel source, judged by its first character.
    pub fn looks_like_json(text: &str) -> bool {
        text.trim_start().starts_with('{')
    }
}

/// Parses either encoding.
pub fn load_kernel(text: &str) -> Result<KernelProgram, KernelError> {
    if KernelProgram::looks_like_json(text) {
        KernelProgram::from_json(text)
    } else {
        parse_kernel(text)
    }
}

impl fmt::Display for BinOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
            BinOp::Div => "/",
            BinOp::Rem => "%",
        })
    }
}

impl fmt::Display for CmpOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CmpOp::Lt => "<",
            CmpOp::Le => "<=",
            CmpOp::Gt => ">",
            CmpOp::Ge => ">=",
            CmpOp::Eq => "==",
            CmpOp::Ne => "!=",
        })
    }
}

/// Arithmetic shared by the host evaluator and the device interpreter. This
/// is the language definition: integers wrap, division truncates toward
/// zero, and any division or remainder by zero traps.
pub mod ops {
    use super::{BinOp, CmpOp, Trap};

    pub fn int(op: BinOp, a: i32, b: i32) -> Result<i32, Trap> {
        Ok(match op {
            BinOp::Add => a.wrapping_add(b),
            BinOp::Sub => a.wrapping_sub(b),
            BinOp::Mul => a.wrapping_mul(b),
            BinOp::Div => {
                if b == 0 {
                    return Err(Trap::DivByZero);
                }
                a.wrapping_div(b)
            }
            BinOp::Rem => {
                if b == 0 {
                    return Err(Trap::DivByZero);
                }
                a.wrapping_rem(b)
            }
        })
    }

    pub fn float(op: BinOp, a: f32, b: f32) -> Result<f32, Trap> {
        Ok(match op {
            BinOp::Add => a + b,
            BinOp::Sub => a - b,
            BinOp::Mul => a * b,
            BinOp::Div | BinOp::Rem if b == 0.0 => return Err(Trap::DivByZero),
            BinOp::Div => a / b,
            BinOp::Rem => a % b,
        })
    }

    pub fn cmp<T: PartialOrd>(op: CmpOp, a: T, b: T) -> i32 {
        let r = match op {
            CmpOp::Lt => a < b,
            CmpOp::Le => a <= b,
            CmpOp::Gt => a > b,
            CmpOp::Ge => a >= b,
            CmpOp::Eq => a == b,
            CmpOp::Ne => a != b,
        };
        r as i32
    }

    /// Truncates toward zero; NaN becomes 0 and out-of-range values saturate.
    pub fn float_to_int(v: f32) -> i32 {
        v as i32
    }

    pub fn int_to_float(v: i32) -> f32 {
        v as f32
    }
}
