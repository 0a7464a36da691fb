//! Tree-walking reference evaluator. It shares nothing with the device
//! interpreter except the arithmetic in [`super::ops`].

use std::collections::BTreeMap;

use thiserror::Error;

use super::{check::expr_type, ops, BinOp, CmpOp, Expr, KernelProgram, KernelValue, Stmt, Trap};
use crate::model::{Array, ElemType, Scalar};

#[derive(Debug, Clone, PartialEq)]
pub enum HostArg {
    Scalar(Scalar),
    Array(Array),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EvalError {
    #[error("bad arguments: {0}")]
    Args(String),
    #[error("trap: {0}")]
    Trap(#[from] Trap),
}

#[derive(Clone, Copy)]
enum Slot {
    Scalar(usize),
    Array(usize),
}

enum RExpr {
    Const(u32),
    Scalar(usize),
    Index(usize, Box<RExpr>),
    Bin(BinOp, ElemType, Box<RExpr>, Box<RExpr>),
    Cmp(CmpOp, ElemType, Box<RExpr>, Box<RExpr>),
    Neg(ElemType, Box<RExpr>),
    Cast(ElemType, ElemType, Box<RExpr>),
    Len(usize),
    CoreId,
    CoreCount,
}

enum RStmt {
    SetScalar(usize, RExpr),
    SetElem(usize, RExpr, RExpr),
    While(RExpr, Vec<RStmt>),
    Return(Slot),
}

struct Resolver<'a> {
    slots: BTreeMap<&'a str, Slot>,
    types: BTreeMap<&'a str, (ElemType, bool)>,
}

impl<'a> Resolver<'a> {
    fn ty(&self, e: &Expr) -> ElemType {
        expr_type(e, &|n| self.types.get(n).copied()).expect("validated program")
    }

    fn expr(&self, e: &Expr) -> RExpr {
        let array = |n: &str| match self.slots[n] {
            Slot::Array(i) => i,
            Slot::Scalar(_) => unreachable!("validated program"),
        };
        match e {
            Expr::Int { value } => RExpr::Const(*value as u32),
            Expr::Float { value } => RExpr::Const(value.to_bits()),
            Expr::Var { name } => match self.slots[name.as_str()] {
                Slot::Scalar(i) => RExpr::Scalar(i),
                Slot::Array(_) => unreachable!("validated program"),
            },
            Expr::Index { array: a, index } => RExpr::Index(array(a), Box::new(self.expr(index))),
            Expr::Binary { op, lhs, rhs } => RExpr::Bin(*op, self.ty(lhs), Box::new(self.expr(lhs)), Box::new(self.expr(rhs))),
            Expr::Compare { op, lhs, rhs } => {
                RExpr::Cmp(*op, self.ty(lhs), Box::new(self.expr(lhs)), Box::new(self.expr(rhs)))
            }
            Expr::Neg { operand } => RExpr::Neg(self.ty(operand), Box::new(self.expr(operand))),
            Expr::Cast { to, operand } => RExpr::Cast(self.ty(operand), *to, Box::new(self.expr(operand))),
            Expr::Len { array: a } => RExpr::Len(array(a)),
            Expr::CoreId => RExpr::CoreId,
            Expr::CoreCount => RExpr::CoreCount,
        }
    }

    fn block(&self, body: &[Stmt]) -> Vec<RStmt> {
        body.iter()
            .map(|s| match s {
                Stmt::Assign { target, index: None, value } => match self.slots[target.as_str()] {
                    Slot::Scalar(i) => RStmt::SetScalar(i, self.expr(value)),
                    Slot::Array(_) => unreachable!("validated program"),
                },
                Stmt::Assign { target, index: Some(ix), value } => match self.slots[target.as_str()] {
                    Slot::Array(i) => RStmt::SetElem(i, self.expr(ix), self.expr(value)),
                    Slot::Scalar(_) => unreachable!("validated program"),
                },
                Stmt::While { cond, body } => RStmt::While(self.expr(cond), self.block(body)),
                Stmt::Return { var } => RStmt::Return(self.slots[var.as_str()]),
            })
            .collect()
    }
}

struct Machine<'n> {
    scalars: Vec<u32>,
    arrays: Vec<Vec<u32>>,
    array_names: Vec<&'n str>,
    core_id: i32,
    core_count: i32,
}

enum Flow {
    Next,
    Return(Slot),
}

impl Machine<'_> {
    fn eval(&self, e: &RExpr) -> Result<u32, Trap> {
        Ok(match e {
            RExpr::Const(b) => *b,
            RExpr::Scalar(i) => self.scalars[*i],
            RExpr::Index(a, ix) => {
                let i = self.eval(ix)? as i32;
                let arr = &self.arrays[*a];
                if i < 0 || i as usize >= arr.len() {
                    return Err(Trap::OutOfBounds {
                        array: self.array_names[*a].to_string(),
                        index: i as i64,
                        length: arr.len(),
                    });
                }
                arr[i as usize]
            }
            RExpr::Bin(op, ty, l, r) => {
                let (l, r) = (self.eval(l)?, self.eval(r)?);
                match ty {
                    ElemType::Int32 => ops::int(*op, l as i32, r as i32)? as u32,
                    ElemType::Float32 => ops::float(*op, f32::from_bits(l), f32::from_bits(r))?.to_bits(),
                }
            }
            RExpr::Cmp(op, ty, l, r) => {
                let (l, r) = (self.eval(l)?, self.eval(r)?);
                match ty {
                    ElemType::Int32 => ops::cmp(*op, l as i32, r as i32) as u32,
                    ElemType::Float32 => ops::cmp(*op, f32::from_bits(l), f32::from_bits(r)) as u32,
                }
            }
            RExpr::Neg(ty, v) => {
                let v = self.eval(v)?;
                match ty {
                    ElemType::Int32 => (v as i32).wrapping_neg() as u32,
                    ElemType::Float32 => (-f32::from_bits(v)).to_bits(),
                }
            }
            RExpr::Cast(from, to, v) => {
                let v = self.eval(v)?;
                match (from, to) {
                    (ElemType::Int32, ElemType::Float32) => ops::int_to_float(v as i32).to_bits(),
                    (ElemType::Float32, ElemType::Int32) => ops::float_to_int(f32::from_bits(v)) as u32,
                    _ => v,
                }
            }
            RExpr::Len(a) => self.arrays[*a].len() as u32,
            RExpr::CoreId => self.core_id as u32,
            RExpr::CoreCount => self.core_count as u32,
        })
    }

    fn run(&mut self, body: &[RStmt]) -> Result<Flow, Trap> {
        for s in body {
            match s {
                RStmt::SetScalar(i, v) => self.scalars[*i] = self.eval(v)?,
                RStmt::SetElem(a, ix, v) => {
                    let i = self.eval(ix)? as i32;
                    let len = self.arrays[*a].len();
                    if i < 0 || i as usize >= len {
                        return Err(Trap::OutOfBounds {
                            array: self.array_names[*a].to_string(),
                            index: i as i64,
                            length: len,
                        });
                    }
                    let v = self.eval(v)?;
                    self.arrays[*a][i as usize] = v;
                }
                RStmt::While(cond, inner) => {
                    while self.eval(cond)? != 0 {
                        if let Flow::Return(s) = self.run(inner)? {
                            return Ok(Flow::Return(s));
                        }
                    }
                }
                RStmt::Return(slot) => return Ok(Flow::Return(*slot)),
            }
        }
        Ok(Flow::Next)
    }
}

/// Runs `program` sequentially as core `core_id` of `core_count`, with no
/// memory limits. Array arguments are updated in place, including when the
/// kernel traps part way through.
pub fn evaluate_on_host(
    program: &KernelProgram,
    args: &mut [HostArg],
    core_id: usize,
    core_count: usize,
) -> Result<Option<KernelValue>, EvalError> {
    if args.len() != program.params.len() {
        return Err(EvalError::Args(format!(
            "`{}` takes {} arguments, got {}",
            program.name,
            program.params.len(),
            args.len()
        )));
    }
    if core_id >= core_count {
        return Err(EvalError::Args(format!("core {core_id} outside 0..{core_count}")));
    }
    let mut resolver = Resolver { slots: BTreeMap::new(), types: BTreeMap::new() };
    let mut scalars = Vec::new();
    let mut scalar_types = Vec::new();
    let mut arrays: Vec<Vec<u32>> = Vec::new();
    let mut array_types = Vec::new();
    let mut array_names = Vec::new();
    for (p, a) in program.params.iter().zip(args.iter()) {
        match (p.is_array, a) {
            (false, HostArg::Scalar(s)) if s.elem_type() == p.elem_type => {
                resolver.slots.insert(&p.name, Slot::Scalar(scalars.len()));
                scalars.push(s.to_bits());
                scalar_types.push(p.elem_type);
            }
            (true, HostArg::Array(arr)) if arr.elem_type() == p.elem_type => {
                resolver.slots.insert(&p.name, Slot::Array(arrays.len()));
                arrays.push(arr.to_bits());
                array_types.push(p.elem_type);
                array_names.push(p.name.as_str());
            }
            _ => {
                return Err(EvalError::Args(format!(
                    "parameter `{}` expects {}{}",
                    p.name,
                    p.elem_type,
                    if p.is_array { "[]" } else { "" }
                )))
            }
        }
        resolver.types.insert(&p.name, (p.elem_type, p.is_array));
    }

    let mut machine = Machine {
        scalars,
        arrays,
        array_names,
        core_id: core_id as i32,
        core_count: core_count as i32,
    };
    let result = (|| {
        for l in &program.locals {
            resolver.types.insert(&l.name, (l.elem_type, l.is_array));
            if l.is_array {
                let len_expr = resolver.expr(l.length.as_ref().expect("validated program"));
                let n = machine.eval(&len_expr)? as i32;
                if n < 0 {
                    return Err(Trap::NegativeLength(n as i64));
                }
                let fill = l.fill.map(Scalar::to_bits).unwrap_or(0);
                resolver.slots.insert(&l.name, Slot::Array(machine.arrays.len()));
                machine.arrays.push(vec![fill; n as usize]);
                machine.array_names.push(&l.name);
                array_types.push(l.elem_type);
            } else {
                resolver.slots.insert(&l.name, Slot::Scalar(machine.scalars.len()));
                machine.scalars.push(0);
                scalar_types.push(l.elem_type);
            }
        }
        let body = resolver.block(&program.body);
        Ok(match machine.run(&body)? {
            Flow::Next => None,
            Flow::Return(Slot::Scalar(i)) => {
                Some(KernelValue::Scalar(Scalar::from_bits(scalar_types[i], machine.scalars[i])))
            }
            Flow::Return(Slot::Array(i)) => Some(KernelValue::Array(Array::from_bits(array_types[i], &machine.arrays[i]))),
        })
    })();

    let mut next = 0;
    for (p, a) in program.params.iter().zip(args.iter_mut()) {
        if p.is_array {
            *a = HostArg::Array(Array::from_bits(p.elem_type, &machine.arrays[next]));
            next += 1;
        }
    }
    Ok(result?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::parse_kernel;

    const SUM: &str = "\
def mykernel(a: int[], b: int[]):
    ret_data = [0] * len(a)
    i = 0
    while i < len(a):
        ret_data[i] = a[i] + b[i]
        i += 1
    return ret_data
";

    #[test]
    fn sum_kernel() {
        let p = parse_kernel(SUM).unwrap();
        let mut args = vec![HostArg::Array(Array::Int(vec![1, 2])), HostArg::Array(Array::Int(vec![3, 4]))];
        let r = evaluate_on_host(&p, &mut args, 0, 1).unwrap();
        assert_eq!(r, Some(KernelValue::Array(Array::Int(vec![4, 6]))));
    }

    #[test]
    fn zero_case() {
        let p = parse_kernel(SUM).unwrap();
        let mut args = vec![HostArg::Array(Array::Int(vec![0; 1000])), HostArg::Array(Array::Int(vec![0; 1000]))];
        let r = evaluate_on_host(&p, &mut args, 0, 1).unwrap();
        assert_eq!(r, Some(KernelValue::Array(Array::Int(vec![0; 1000]))));
    }

    #[test]
    fn mutation_is_visible_and_traps_are_reported() {
        let src = "def k(a: int[], d: int):\n    a[0] = 5\n    a[1] = 10 / d\n    return d\n";
        let p = parse_kernel(src).unwrap();
        let mut args = vec![HostArg::Array(Array::Int(vec![0, 0])), HostArg::Scalar(Scalar::Int(0))];
        assert_eq!(evaluate_on_host(&p, &mut args, 0, 1), Err(EvalError::Trap(Trap::DivByZero)));
        assert_eq!(args[0], HostArg::Array(Array::Int(vec![5, 0])));
    }

    #[test]
    fn out_of_bounds_trap() {
        let src = "def k(a: float[]):\n    x = a[-1]\n    return x\n";
        let p = parse_kernel(src).unwrap();
        let mut args = vec![HostArg::Array(Array::Float(vec![1.0]))];
        assert!(matches!(
            evaluate_on_host(&p, &mut args, 0, 1),
            Err(EvalError::Trap(Trap::OutOfBounds { index: -1, length: 1, .. }))
        ));
    }

    #[test]
    fn core_builtins() {
        let p = parse_kernel("def k():\n    x = core_id() * 10 + num_cores()\n    return x\n").unwrap();
        assert_eq!(
            evaluate_on_host(&p, &mut [], 3, 16).unwrap(),
            Some(KernelValue::Scalar(Scalar::Int(46)))
        );
    }

    #[test]
    fn argument_mismatch() {
        let p = parse_kernel(SUM).unwrap();
        let mut args = vec![HostArg::Array(Array::Int(vec![1]))];
        assert!(matches!(evaluate_on_host(&p, &mut args, 0, 1), Err(EvalError::Args(_))));
        let mut args = vec![HostArg::Array(Array::Float(vec![1.0])), HostArg::Array(Array::Int(vec![1]))];
        assert!(matches!(evaluate_on_host(&p, &mut args, 0, 1), Err(EvalError::Args(_))));
    }

    #[test]
    fn three_by_three_matvec_against_longhand() {
        let src = "\
def matvec(m: float[], v: float[], rows: int):
    out = [0.0] * rows
    cols = len(v)
    r = 0
    while r < rows:
        acc = 0.0
        c = 0
        while c < cols:
            acc += m[r * cols + c] * v[c]
            c += 1
        out[r] = acc
        r += 1
    return out
";
        let p = parse_kernel(src).unwrap();
        let m = [1.0f32, 2.0, 3.0, -1.0, 0.5, 4.0, 0.0, 0.0, 2.0];
        let v = [2.0f32, -3.0, 0.25];
        let mut args = vec![
            HostArg::Array(Array::Float(m.to_vec())),
            HostArg::Array(Array::Float(v.to_vec())),
            HostArg::Scalar(Scalar::Int(3)),
        ];
        let r = evaluate_on_host(&p, &mut args, 0, 1).unwrap();
        // 1*2 + 2*-3 + 3*0.25 = -3.25; -2 - 1.5 + 1 = -2.5; 0.5
        assert_eq!(r, Some(KernelValue::Array(Array::Float(vec![-3.25, -2.5, 0.5]))));
    }
}
