//! Domain types shared by the host runtime and the simulated cores.
//!
//! A [`Reference`] is the only thing a core ever receives for bulk data: an
//! opaque id that the host decodes back into a variable and the memory kind
//! holding it. Prefetch behaviour for a kernel parameter is described by a
//! [`PrefetchSpec`], checked against the core's data budget with
//! [`validate_prefetch_spec`].

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Element types a kernel can operate on. Both are four bytes wide.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ElemType {
    #[serde(rename = "int")]
    Int32,
    #[serde(rename = "float")]
    Float32,
}

impl ElemType {
    pub const fn size(self) -> usize {
        4
    }
}

impl fmt::Display for ElemType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ElemType::Int32 => f.write_str("int"),
            ElemType::Float32 => f.write_str("float"),
        }
    }
}

/// A single int32 or float32 value.
///
/// Equality is bitwise, so `NaN == NaN` when the payloads match and
/// `0.0 != -0.0`. This is the notion of "identical results" used throughout.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Scalar {
    Int(i32),
    Float(f32),
}

impl Scalar {
    pub fn elem_type(self) -> ElemType {
        match self {
            Scalar::Int(_) => ElemType::Int32,
            Scalar::Float(_) => ElemType::Float32,
        }
    }

    pub fn to_bits(self) -> u32 {
        match self {
            Scalar::Int(v) => v as u32,
            Scalar::Float(v) => v.to_bits(),
        }
    }

    pub fn from_bits(elem_type: ElemType, bits: u32) -> Self {
        match elem_type {
            ElemType::Int32 => Scalar::Int(bits as i32),
            ElemType::Float32 => Scalar::Float(f32::from_bits(bits)),
        }
    }
}

impl PartialEq for Scalar {
    fn eq(&self, other: &Self) -> bool {
        self.elem_type() == other.elem_type() && self.to_bits() == other.to_bits()
    }
}

impl Eq for Scalar {}

/// A typed, flat array of elements.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Array {
    Int(Vec<i32>),
    Float(Vec<f32>),
}

impl Array {
    pub fn zeros(elem_type: ElemType, len: usize) -> Self {
        match elem_type {
            ElemType::Int32 => Array::Int(vec![0; len]),
            ElemType::Float32 => Array::Float(vec![0.0; len]),
        }
    }

    pub fn elem_type(&self) -> ElemType {
        match self {
            Array::Int(_) => ElemType::Int32,
            Array::Float(_) => ElemType::Float32,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Array::Int(v) => v.len(),
            Array::Float(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, index: usize) -> Option<Scalar> {
        match self {
            Array::Int(v) => v.get(index).map(|&x| Scalar::Int(x)),
            Array::Float(v) => v.get(index).map(|&x| Scalar::Float(x)),
        }
    }

    pub fn to_bits(&self) -> Vec<u32> {
        match self {
            Array::Int(v) => v.iter().map(|&x| x as u32).collect(),
            Array::Float(v) => v.iter().map(|x| x.to_bits()).collect(),
        }
    }

    pub fn from_bits(elem_type: ElemType, bits: &[u32]) -> Self {
        match elem_type {
            ElemType::Int32 => Array::Int(bits.iter().map(|&b| b as i32).collect()),
            ElemType::Float32 => Array::Float(bits.iter().map(|&b| f32::from_bits(b)).collect()),
        }
    }

    /// Little-endian element encoding, as carried in transport cells.
    pub fn to_bytes(&self) -> Vec<u8> {
        bits_to_bytes(&self.to_bits())
    }

    pub fn from_bytes(elem_type: ElemType, bytes: &[u8]) -> Self {
        Self::from_bits(elem_type, &bytes_to_bits(bytes))
    }
}

impl PartialEq for Array {
    fn eq(&self, other: &Self) -> bool {
        self.elem_type() == other.elem_type() && self.to_bits() == other.to_bits()
    }
}

impl Eq for Array {}

pub fn bits_to_bytes(bits: &[u32]) -> Vec<u8> {
    let mut out = Vec::with_capacity(bits.len() * 4);
    for b in bits {
        out.extend_from_slice(&b.to_le_bytes());
    }
    out
}

pub fn bytes_to_bits(bytes: &[u8]) -> Vec<u32> {
    bytes
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect()
}

/// Opaque handle naming a variable held somewhere in the memory hierarchy.
/// The id is never an address; only the issuing runtime can decode it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Reference {
    pub id: u64,
    pub elem_type: ElemType,
    pub length: usize,
}

impl Reference {
    pub fn byte_len(&self) -> usize {
        self.length * self.elem_type.size()
    }
}

/// Memory kinds: where in the hierarchy a variable lives.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum MemoryKindId {
    /// Large host memory, not addressable by the cores.
    Host,
    /// Board memory addressable by both host and cores.
    Shared,
    /// The local store of one designated core.
    Microcore,
    /// A kind registered by the embedding application.
    Custom(String),
}

impl fmt::Display for MemoryKindId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MemoryKindId::Host => f.write_str("Host"),
            MemoryKindId::Shared => f.write_str("Shared"),
            MemoryKindId::Microcore => f.write_str("Microcore"),
            MemoryKindId::Custom(name) => f.write_str(name),
        }
    }
}

impl FromStr for MemoryKindId {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "host" => Ok(MemoryKindId::Host),
            "shared" => Ok(MemoryKindId::Shared),
            "microcore" => Ok(MemoryKindId::Microcore),
            "" => Err(ModelError::Parse("empty memory kind".into())),
            _ => Ok(MemoryKindId::Custom(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VariableDescriptor {
    pub reference: Reference,
    pub kind: MemoryKindId,
    pub owner_core: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AccessMode {
    ReadOnly,
    Mutable,
}

impl FromStr for AccessMode {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "readonly" | "read_only" | "ro" => Ok(AccessMode::ReadOnly),
            "mutable" | "rw" => Ok(AccessMode::Mutable),
            other => Err(ModelError::Parse(format!("unknown access modifier `{other}`"))),
        }
    }
}

impl fmt::Display for AccessMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AccessMode::ReadOnly => f.write_str("readonly"),
            AccessMode::Mutable => f.write_str("mutable"),
        }
    }
}

/// Buffered external access for one kernel parameter, as the tuple
/// `(variable, buffer size, elements per prefetch, distance, access modifier)`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PrefetchSpec {
    pub variable_name: String,
    /// Elements reserved in core-local memory.
    pub buffer_size: usize,
    /// Elements moved by each request.
    pub elements_per_prefetch: usize,
    /// Lookahead, in elements, at which the next request is posted.
    pub distance: usize,
    pub access_modifier: AccessMode,
}

impl PrefetchSpec {
    pub fn new(
        variable_name: impl Into<String>,
        buffer_size: usize,
        elements_per_prefetch: usize,
        distance: usize,
        access_modifier: AccessMode,
    ) -> Self {
        Self {
            variable_name: variable_name.into(),
            buffer_size,
            elements_per_prefetch,
            distance,
            access_modifier,
        }
    }

    pub fn reserved_bytes(&self, elem_type: ElemType) -> usize {
        self.buffer_size * elem_type.size()
    }
}

/// Parses `name:buffer:chunk:distance:mode`, e.g. `a:10:2:10:readonly`.
impl FromStr for PrefetchSpec {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<&str> = s.split(':').collect();
        if parts.len() != 5 {
            return Err(ModelError::Parse(format!(
                "prefetch spec `{s}` must have five colon-separated fields"
            )));
        }
        let num = |field: &str, what: &str| -> Result<usize, ModelError> {
            field
                .trim()
                .parse()
                .map_err(|_| ModelError::Parse(format!("bad {what} `{field}` in prefetch spec `{s}`")))
        };
        let name = parts[0].trim();
        if name.is_empty() {
            return Err(ModelError::Parse(format!("prefetch spec `{s}` has an empty variable name")));
        }
        Ok(PrefetchSpec {
            variable_name: name.to_string(),
            buffer_size: num(parts[1], "buffer size")?,
            elements_per_prefetch: num(parts[2], "elements per prefetch")?,
            distance: num(parts[3], "distance")?,
            access_modifier: parts[4].trim().parse()?,
        })
    }
}

impl fmt::Display for PrefetchSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}:{}:{}:{}:{}",
            self.variable_name,
            self.buffer_size,
            self.elements_per_prefetch,
            self.distance,
            self.access_modifier
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PrefetchError {
    #[error("prefetch buffer for `{name}` needs {needed} bytes but only {available} are free")]
    BufferTooLarge { name: String, needed: usize, available: usize },
    #[error("prefetch for `{name}`: elements per prefetch ({chunk}) must be between 1 and the buffer size ({buffer})")]
    BadChunk { name: String, chunk: usize, buffer: usize },
    #[error("prefetch for `{name}`: distance must be at least 1")]
    BadDistance { name: String },
    #[error("prefetch names `{0}`, which is not an array parameter of the kernel")]
    UnknownVariable(String),
}

/// Checks a prefetch spec and returns the number of bytes it reserves.
pub fn validate_prefetch_spec(
    spec: &PrefetchSpec,
    elem_type: ElemType,
    core_budget_bytes: usize,
) -> Result<usize, PrefetchError> {
    let name = spec.variable_name.clone();
    if spec.elements_per_prefetch == 0 || spec.elements_per_prefetch > spec.buffer_size {
        return Err(PrefetchError::BadChunk {
            name,
            chunk: spec.elements_per_prefetch,
            buffer: spec.buffer_size,
        });
    }
    if spec.distance < 1 {
        return Err(PrefetchError::BadDistance { name });
    }
    let needed = spec.reserved_bytes(elem_type);
    if needed > core_budget_bytes {
        return Err(PrefetchError::BufferTooLarge {
            name,
            needed,
            available: core_budget_bytes,
        });
    }
    Ok(needed)
}

/// How a kernel reaches its array arguments.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum AccessStrategy {
    /// Copy every array argument into core memory before the kernel starts.
    EagerCopy,
    /// Fetch single elements, blocking, at the moment of use.
    OnDemand,
    /// Buffered non-blocking fetches for the named parameters; any other
    /// array parameter falls back to on-demand access.
    Prefetch(Vec<PrefetchSpec>),
}

impl AccessStrategy {
    pub fn label(&self) -> &'static str {
        match self {
            AccessStrategy::EagerCopy => "eager",
            AccessStrategy::OnDemand => "ondemand",
            AccessStrategy::Prefetch(_) => "prefetch",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ModelError {
    #[error("invalid owner core {owner:?} for a runtime with {core_count} cores")]
    InvalidOwner { owner: Option<usize>, core_count: usize },
    #[error("Microcore allocation requested but the runtime has no cores")]
    ZeroCores,
    #[error("{0}")]
    Parse(String),
}

/// Host-side table of every variable ever issued a reference.
#[derive(Debug, Clone, Default)]
pub struct Registry {
    core_count: usize,
    next_id: u64,
    descriptors: BTreeMap<u64, VariableDescriptor>,
}

impl Registry {
    pub fn new(core_count: usize) -> Self {
        Self {
            core_count,
            next_id: 0,
            descriptors: BTreeMap::new(),
        }
    }

    pub fn core_count(&self) -> usize {
        self.core_count
    }

    pub fn new_reference(
        &mut self,
        elem_type: ElemType,
        length: usize,
        kind: MemoryKindId,
        owner_core: Option<usize>,
    ) -> Result<Reference, ModelError> {
        match (&kind, owner_core) {
            (MemoryKindId::Microcore, _) if self.core_count == 0 => return Err(ModelError::ZeroCores),
            (MemoryKindId::Microcore, Some(c)) if c < self.core_count => {}
            (MemoryKindId::Microcore, owner) | (_, owner @ Some(_)) => {
                return Err(ModelError::InvalidOwner {
                    owner,
                    core_count: self.core_count,
                })
            }
            _ => {}
        }
        let reference = Reference {
            id: self.next_id,
            elem_type,
            length,
        };
        self.next_id += 1;
        self.descriptors.insert(
            reference.id,
            VariableDescriptor {
                reference,
                kind,
                owner_core,
            },
        );
        Ok(reference)
    }

    pub fn lookup(&self, id: u64) -> Option<&VariableDescriptor> {
        self.descriptors.get(&id)
    }

    pub fn len(&self) -> usize {
        self.descriptors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.descriptors.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &VariableDescriptor> {
        self.descriptors.values()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn first_reference_gets_id_zero() {
        let mut reg = Registry::new(4);
        let r = reg.new_reference(ElemType::Float32, 1000, MemoryKindId::Host, None).unwrap();
        assert_eq!(r.id, 0);
        assert_eq!(r.length, 1000);
    }

    #[test]
    fn empty_array_is_legal() {
        let mut reg = Registry::new(1);
        reg.new_reference(ElemType::Float32, 3, MemoryKindId::Host, None).unwrap();
        let r = reg.new_reference(ElemType::Int32, 0, MemoryKindId::Shared, None).unwrap();
        assert_eq!(r.length, 0);
        assert_eq!(r.id, 1);
    }

    #[test]
    fn image_sized_host_descriptor() {
        let mut reg = Registry::new(16);
        let r = reg.new_reference(ElemType::Float32, 3600, MemoryKindId::Host, None).unwrap();
        let d = reg.lookup(r.id).unwrap();
        assert_eq!(d.kind, MemoryKindId::Host);
        assert_eq!(d.reference.length, 3600);
        assert_eq!(d.owner_core, None);
    }

    #[test]
    fn owner_rules() {
        let mut reg = Registry::new(2);
        assert!(matches!(
            reg.new_reference(ElemType::Int32, 4, MemoryKindId::Microcore, Some(2)),
            Err(ModelError::InvalidOwner { owner: Some(2), .. })
        ));
        assert!(matches!(
            reg.new_reference(ElemType::Int32, 4, MemoryKindId::Microcore, None),
            Err(ModelError::InvalidOwner { owner: None, .. })
        ));
        assert!(matches!(
            reg.new_reference(ElemType::Int32, 4, MemoryKindId::Host, Some(0)),
            Err(ModelError::InvalidOwner { .. })
        ));
        let mut empty = Registry::new(0);
        assert_eq!(
            empty.new_reference(ElemType::Int32, 4, MemoryKindId::Microcore, Some(0)),
            Err(ModelError::ZeroCores)
        );
        assert!(reg.new_reference(ElemType::Int32, 4, MemoryKindId::Microcore, Some(1)).is_ok());
    }

    #[test]
    fn ten_int_buffer_reserves_forty_bytes() {
        let spec: PrefetchSpec = "a:10:2:10:readonly".parse().unwrap();
        assert_eq!(spec.access_modifier, AccessMode::ReadOnly);
        assert_eq!(validate_prefetch_spec(&spec, ElemType::Int32, 8192), Ok(40));
    }

    #[test]
    fn chunk_larger_than_buffer_is_rejected() {
        let spec = PrefetchSpec::new("a", 4, 8, 1, AccessMode::ReadOnly);
        assert!(matches!(
            validate_prefetch_spec(&spec, ElemType::Int32, 8192),
            Err(PrefetchError::BadChunk { chunk: 8, buffer: 4, .. })
        ));
        let zero = PrefetchSpec::new("a", 4, 0, 1, AccessMode::ReadOnly);
        assert!(matches!(
            validate_prefetch_spec(&zero, ElemType::Int32, 8192),
            Err(PrefetchError::BadChunk { .. })
        ));
    }

    #[test]
    fn zero_distance_is_rejected() {
        let spec = PrefetchSpec::new("a", 4, 2, 0, AccessMode::Mutable);
        assert!(matches!(
            validate_prefetch_spec(&spec, ElemType::Int32, 8192),
            Err(PrefetchError::BadDistance { .. })
        ));
    }

    #[test]
    fn budget_boundary() {
        let spec = PrefetchSpec::new("a", 2048, 1, 1, AccessMode::ReadOnly);
        assert_eq!(validate_prefetch_spec(&spec, ElemType::Float32, 8192), Ok(8192));
        assert!(matches!(
            validate_prefetch_spec(&spec, ElemType::Float32, 8191),
            Err(PrefetchError::BufferTooLarge { needed: 8192, available: 8191, .. })
        ));
    }

    #[test]
    fn prefetch_spec_text_round_trips() {
        let spec: PrefetchSpec = "nums1:64:8:16:mutable".parse().unwrap();
        assert_eq!(spec.to_string(), "nums1:64:8:16:mutable");
        assert!("a:1:1:1".parse::<PrefetchSpec>().is_err());
        assert!("a:x:1:1:readonly".parse::<PrefetchSpec>().is_err());
        assert!("a:1:1:1:sometimes".parse::<PrefetchSpec>().is_err());
    }

    #[test]
    fn scalar_equality_is_bitwise() {
        assert_eq!(Scalar::Float(f32::NAN), Scalar::Float(f32::NAN));
        assert_ne!(Scalar::Float(0.0), Scalar::Float(-0.0));
        assert_ne!(Scalar::Int(0), Scalar::Float(0.0));
    }

    fn kind_strategy() -> impl Strategy<Value = MemoryKindId> {
        prop_oneof![
            Just(MemoryKindId::Host),
            Just(MemoryKindId::Shared),
            Just(MemoryKindId::Microcore),
            "[a-z]{1,6}".prop_map(MemoryKindId::Custom),
        ]
    }

    proptest! {
        #[test]
        fn ids_are_distinct_and_kinds_round_trip(
            allocs in proptest::collection::vec((kind_strategy(), 0usize..64, 0usize..4), 1..64)
        ) {
            let mut reg = Registry::new(4);
            let mut seen = std::collections::BTreeSet::new();
            let mut last = None;
            for (kind, len, owner) in allocs {
                let owner = (kind == MemoryKindId::Microcore).then_some(owner);
                let r = reg.new_reference(ElemType::Int32, len, kind.clone(), owner).unwrap();
                prop_assert!(seen.insert(r.id));
                if let Some(prev) = last { prop_assert!(r.id > prev); }
                last = Some(r.id);
                prop_assert_eq!(&reg.lookup(r.id).unwrap().kind, &kind);
            }
        }

        #[test]
        fn accepted_specs_reserve_exact_bytes(
            buf in 0usize..4096, chunk in 0usize..4096, dist in 0usize..8, budget in 0usize..20000,
            float in any::<bool>()
        ) {
            let elem = if float { ElemType::Float32 } else { ElemType::Int32 };
            let spec = PrefetchSpec::new("a", buf, chunk, dist, AccessMode::ReadOnly);
            if let Ok(bytes) = validate_prefetch_spec(&spec, elem, budget) {
                prop_assert_eq!(bytes, buf * 4);
                prop_assert!(bytes <= budget);
                prop_assert!(chunk >= 1 && chunk <= buf && dist >= 1);
            }
        }
    }
}
