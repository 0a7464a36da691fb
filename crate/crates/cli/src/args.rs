//! Kernel argument files: a JSON object keyed by parameter name.
//!
//! ```json
//! {
//!   "a": [1, 2, 3],
//!   "b": {"fill": 0.5, "len": 1000},
//!   "c": {"iota": 1000},
//!   "n": 7,
//!   "row": {"per_core": [0, 10, 20, 30]}
//! }
//! ```
//!
//! Numbers take the element type of the parameter they bind to.

use mcoffload::kernel::{KernelProgram, Param};
use mcoffload::model::{Array, ElemType, Scalar};
use serde_json::Value;

#[derive(Debug, Clone, PartialEq)]
pub enum ArgValue {
    Scalar(Scalar),
    Array(Array),
    PerCore(Vec<ArgValue>),
}

pub fn parse_args(text: &str, program: &KernelProgram) -> Result<Vec<ArgValue>, String> {
    let root: Value = if text.trim().is_empty() {
        Value::Object(Default::default())
    } else {
        serde_json::from_str(text).map_err(|e| format!("argument file: {e}"))?
    };
    let obj = root.as_object().ok_or("argument file must hold a JSON object")?;
    if let Some(extra) = obj.keys().find(|k| program.param(k).is_none()) {
        return Err(format!("argument file names `{extra}`, which kernel `{}` does not take", program.name));
    }
    program
        .params
        .iter()
        .map(|p| {
            let v = obj.get(&p.name).ok_or_else(|| format!("argument file has no value for `{}`", p.name))?;
            value(p, v, true)
        })
        .collect()
}

fn value(p: &Param, v: &Value, allow_per_core: bool) -> Result<ArgValue, String> {
    if let Some(per) = v.get("per_core") {
        if !allow_per_core {
            return Err(format!("`{}`: per_core values cannot nest", p.name));
        }
        let list = per.as_array().ok_or_else(|| format!("`{}`: per_core needs a list", p.name))?;
        return list.iter().map(|x| value(p, x, false)).collect::<Result<_, _>>().map(ArgValue::PerCore);
    }
    if p.is_array {
        array(p, v).map(ArgValue::Array)
    } else {
        number(p.elem_type, v).map(ArgValue::Scalar).ok_or_else(|| format!("`{}` expects a {} number", p.name, p.elem_type))
    }
}

fn array(p: &Param, v: &Value) -> Result<Array, String> {
    let bad = || format!("`{}` expects a list of {} numbers", p.name, p.elem_type);
    let scalars: Vec<Scalar> = if let Some(list) = v.as_array() {
        list.iter().map(|x| number(p.elem_type, x).ok_or_else(bad)).collect::<Result<_, _>>()?
    } else if let Some(n) = v.get("iota") {
        let n = n.as_u64().ok_or_else(bad)?;
        (0..n)
            .map(|i| match p.elem_type {
                ElemType::Int32 => Scalar::Int(i as i32),
                ElemType::Float32 => Scalar::Float(i as f32),
            })
            .collect()
    } else if let (Some(fill), Some(len)) = (v.get("fill"), v.get("len")) {
        let fill = number(p.elem_type, fill).ok_or_else(bad)?;
        vec![fill; len.as_u64().ok_or_else(bad)? as usize]
    } else {
        return Err(bad());
    };
    Ok(match p.elem_type {
        ElemType::Int32 => Array::Int(scalars.into_iter().map(|s| s.to_bits() as i32).collect()),
        ElemType::Float32 => Array::Float(scalars.into_iter().map(|s| f32::from_bits(s.to_bits())).collect()),
    })
}

fn number(ty: ElemType, v: &Value) -> Option<Scalar> {
    match ty {
        ElemType::Int32 => v.as_i64().and_then(|i| i32::try_from(i).ok()).map(Scalar::Int),
        ElemType::Float32 => v.as_f64().map(|f| Scalar::Float(f as f32)),
    }
}
