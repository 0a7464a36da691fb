//! Stack bytecode the cores interpret.

use std::collections::BTreeMap;

use crate::kernel::{expr_type, BinOp, CmpOp, Expr, KernelProgram, Param, Stmt};
use crate::model::ElemType;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Op {
    Push(u32),
    LoadScalar(u16),
    StoreScalar(u16),
    /// `[index] -> [value]`
    LoadElem(u16),
    /// `[index, value] -> []`
    StoreElem(u16),
    IAdd,
    ISub,
    IMul,
    IDiv,
    IRem,
    FAdd,
    FSub,
    FMul,
    FDiv,
    FRem,
    ICmp(CmpOp),
    FCmp(CmpOp),
    INeg,
    FNeg,
    IToF,
    FToI,
    Len(u16),
    CoreId,
    CoreCount,
    /// Pops; jumps when zero.
    Jz(u32),
    Jmp(u32),
    RetScalar(u16),
    RetArray(u16),
    Halt,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ArraySource {
    Param(usize),
    /// Allocated at kernel start; `length` is straight-line code leaving the length on the stack.
    Local { length: Vec<Op>, fill: u32 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArraySlot {
    pub name: String,
    pub elem_type: ElemType,
    pub source: ArraySource,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalarSlot {
    pub name: String,
    pub elem_type: ElemType,
    pub param: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompiledKernel {
    pub name: String,
    pub params: Vec<Param>,
    pub code: Vec<Op>,
    pub scalars: Vec<ScalarSlot>,
    pub arrays: Vec<ArraySlot>,
}

impl CompiledKernel {
    pub fn array_slot(&self, name: &str) -> Option<usize> {
        self.arrays.iter().position(|a| a.name == name)
    }

    /// Array slot bound to parameter `param`.
    pub fn param_array_slot(&self, param: usize) -> Option<usize> {
        self.arrays.iter().position(|a| a.source == ArraySource::Param(param))
    }
}

#[derive(Clone, Copy)]
enum Slot {
    Scalar(u16),
    Array(u16),
}

struct Compiler<'p> {
    slots: BTreeMap<&'p str, Slot>,
    types: BTreeMap<&'p str, (ElemType, bool)>,
}

impl Compiler<'_> {
    fn ty(&self, e: &Expr) -> ElemType {
        expr_type(e, &|n| self.types.get(n).copied()).expect("validated program")
    }

    fn array(&self, name: &str) -> u16 {
        match self.slots[name] {
            Slot::Array(i) => i,
            Slot::Scalar(_) => unreachable!("validated program"),
        }
    }

    fn scalar(&self, name: &str) -> u16 {
        match self.slots[name] {
            Slot::Scalar(i) => i,
            Slot::Array(_) => unreachable!("validated program"),
        }
    }

    fn expr(&self, e: &Expr, code: &mut Vec<Op>) {
        match e {
            Expr::Int { value } => code.push(Op::Push(*value as u32)),
            Expr::Float { value } => code.push(Op::Push(value.to_bits())),
            Expr::Var { name } => code.push(Op::LoadScalar(self.scalar(name))),
            Expr::Index { array, index } => {
                self.expr(index, code);
                code.push(Op::LoadElem(self.array(array)));
            }
            Expr::Binary { op, lhs, rhs } => {
                let t = self.ty(lhs);
                self.expr(lhs, code);
                self.expr(rhs, code);
                code.push(match (t, op) {
                    (ElemType::Int32, BinOp::Add) => Op::IAdd,
                    (ElemType::Int32, BinOp::Sub) => Op::ISub,
                    (ElemType::Int32, BinOp::Mul) => Op::IMul,
                    (ElemType::Int32, BinOp::Div) => Op::IDiv,
                    (ElemType::Int32, BinOp::Rem) => Op::IRem,
                    (ElemType::Float32, BinOp::Add) => Op::FAdd,
                    (ElemType::Float32, BinOp::Sub) => Op::FSub,
                    (ElemType::Float32, BinOp::Mul) => Op::FMul,
                    (ElemType::Float32, BinOp::Div) => Op::FDiv,
                    (ElemType::Float32, BinOp::Rem) => Op::FRem,
                });
            }
            Expr::Compare { op, lhs, rhs } => {
                let t = self.ty(lhs);
                self.expr(lhs, code);
                self.expr(rhs, code);
                code.push(match t {
                    ElemType::Int32 => Op::ICmp(*op),
                    ElemType::Float32 => Op::FCmp(*op),
                });
            }
            Expr::Neg { operand } => {
                self.expr(operand, code);
                code.push(match self.ty(operand) {
                    ElemType::Int32 => Op::INeg,
                    ElemType::Float32 => Op::FNeg,
                });
            }
            Expr::Cast { to, operand } => {
                let from = self.ty(operand);
                self.expr(operand, code);
                match (from, to) {
                    (ElemType::Int32, ElemType::Float32) => code.push(Op::IToF),
                    (ElemType::Float32, ElemType::Int32) => code.push(Op::FToI),
                    _ => {}
                }
            }
            Expr::Len { array } => code.push(Op::Len(self.array(array))),
            Expr::CoreId => code.push(Op::CoreId),
            Expr::CoreCount => code.push(Op::CoreCount),
        }
    }

    fn block(&self, body: &[Stmt], code: &mut Vec<Op>) {
        for s in body {
            match s {
                Stmt::Assign { target, index: None, value } => {
                    self.expr(value, code);
                    code.push(Op::StoreScalar(self.scalar(target)));
                }
                Stmt::Assign { target, index: Some(ix), value } => {
                    self.expr(ix, code);
                    self.expr(value, code);
                    code.push(Op::StoreElem(self.array(target)));
                }
                Stmt::While { cond, body } => {
                    let top = code.len() as u32;
                    self.expr(cond, code);
                    let jz = code.len();
                    code.push(Op::Jz(0));
                    self.block(body, code);
                    code.push(Op::Jmp(top));
                    code[jz] = Op::Jz(code.len() as u32);
                }
                Stmt::Return { var } => code.push(match self.slots[var.as_str()] {
                    Slot::Scalar(i) => Op::RetScalar(i),
                    Slot::Array(i) => Op::RetArray(i),
                }),
            }
        }
    }
}

/// Compiles a validated program.
pub fn compile(program: &KernelProgram) -> CompiledKernel {
    let mut c = Compiler { slots: BTreeMap::new(), types: BTreeMap::new() };
    let mut scalars = Vec::new();
    let mut arrays = Vec::new();
    for (i, p) in program.params.iter().enumerate() {
        c.types.insert(&p.name, (p.elem_type, p.is_array));
        if p.is_array {
            c.slots.insert(&p.name, Slot::Array(arrays.len() as u16));
            arrays.push(ArraySlot { name: p.name.clone(), elem_type: p.elem_type, source: ArraySource::Param(i) });
        } else {
            c.slots.insert(&p.name, Slot::Scalar(scalars.len() as u16));
            scalars.push(ScalarSlot { name: p.name.clone(), elem_type: p.elem_type, param: Some(i) });
        }
    }
    for l in &program.locals {
        if l.is_array {
            let mut length = Vec::new();
            c.expr(l.length.as_ref().expect("validated program"), &mut length);
            c.slots.insert(&l.name, Slot::Array(arrays.len() as u16));
            arrays.push(ArraySlot {
                name: l.name.clone(),
                elem_type: l.elem_type,
                source: ArraySource::Local { length, fill: l.fill.map(|f| f.to_bits()).unwrap_or(0) },
            });
        } else {
            c.slots.insert(&l.name, Slot::Scalar(scalars.len() as u16));
            scalars.push(ScalarSlot { name: l.name.clone(), elem_type: l.elem_type, param: None });
        }
        c.types.insert(&l.name, (l.elem_type, l.is_array));
    }
    let mut code = Vec::new();
    c.block(&program.body, &mut code);
    code.push(Op::Halt);
    CompiledKernel {
        name: program.name.clone(),
        params: program.params.clone(),
        code,
        scalars,
        arrays,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::parse_kernel;

    #[test]
    fn loop_layout() {
        let p = parse_kernel("def k(n: int):\n    i = 0\n    while i < n:\n        i += 1\n    return i\n").unwrap();
        let k = compile(&p);
        assert_eq!(
            k.code,
            vec![
                Op::Push(0),
                Op::StoreScalar(1),
                Op::LoadScalar(1),
                Op::LoadScalar(0),
                Op::ICmp(CmpOp::Lt),
                Op::Jz(11),
                Op::LoadScalar(1),
                Op::Push(1),
                Op::IAdd,
                Op::StoreScalar(1),
                Op::Jmp(2),
                Op::RetScalar(1),
                Op::Halt,
            ]
        );
    }
}
