//! Memory kind backends and the host's view of every variable.

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::rc::Rc;

use crate::model::{
    bits_to_bytes, bytes_to_bits, ElemType, MemoryKindId, ModelError, Reference, Registry, VariableDescriptor,
};
use crate::timing::Tier;
use crate::transport::TransportError;

/// Storage for one memory kind. Offsets and counts are in elements and have
/// already been bounds-checked against the reference when these are called.
pub trait KindBackend {
    fn tier(&self) -> Tier;
    fn allocate(&mut self, reference: &Reference) -> Result<(), String>;
    fn load(&self, reference: &Reference, offset: usize, count: usize) -> Result<Vec<u32>, String>;
    fn store(&mut self, reference: &Reference, offset: usize, values: &[u32]) -> Result<(), String>;
}

/// Plain byte-array storage, used for the Host and Shared kinds.
#[derive(Debug, Clone)]
pub struct BufferKind {
    tier: Tier,
    data: BTreeMap<u64, Vec<u32>>,
}

impl BufferKind {
    pub fn new(tier: Tier) -> Self {
        Self { tier, data: BTreeMap::new() }
    }
}

impl KindBackend for BufferKind {
    fn tier(&self) -> Tier {
        self.tier
    }

    fn allocate(&mut self, reference: &Reference) -> Result<(), String> {
        self.data.insert(reference.id, vec![0; reference.length]);
        Ok(())
    }

    fn load(&self, reference: &Reference, offset: usize, count: usize) -> Result<Vec<u32>, String> {
        let v = self.data.get(&reference.id).ok_or("no storage for reference")?;
        Ok(v[offset..offset + count].to_vec())
    }

    fn store(&mut self, reference: &Reference, offset: usize, values: &[u32]) -> Result<(), String> {
        let v = self.data.get_mut(&reference.id).ok_or("no storage for reference")?;
        v[offset..offset + values.len()].copy_from_slice(values);
        Ok(())
    }
}

type LoadFn = Box<dyn Fn(&Reference, usize, usize) -> Result<Vec<u32>, String>>;
type StoreFn = Box<dyn FnMut(&Reference, usize, &[u32]) -> Result<(), String>>;

/// A kind whose storage lives behind application callbacks.
pub struct CallbackKind {
    tier: Tier,
    load: LoadFn,
    store: StoreFn,
}

impl CallbackKind {
    pub fn new(
        tier: Tier,
        load: impl Fn(&Reference, usize, usize) -> Result<Vec<u32>, String> + 'static,
        store: impl FnMut(&Reference, usize, &[u32]) -> Result<(), String> + 'static,
    ) -> Self {
        Self {
            tier,
            load: Box::new(load),
            store: Box::new(store),
        }
    }
}

impl KindBackend for CallbackKind {
    fn tier(&self) -> Tier {
        self.tier
    }

    fn allocate(&mut self, _reference: &Reference) -> Result<(), String> {
        Ok(())
    }

    fn load(&self, reference: &Reference, offset: usize, count: usize) -> Result<Vec<u32>, String> {
        let v = (self.load)(reference, offset, count)?;
        if v.len() != count {
            return Err(format!("load callback returned {} elements, expected {count}", v.len()));
        }
        Ok(v)
    }

    fn store(&mut self, reference: &Reference, offset: usize, values: &[u32]) -> Result<(), String> {
        (self.store)(reference, offset, values)
    }
}

/// Shared handle to data resident in one core's local store.
pub type LocalData = Rc<RefCell<Vec<u32>>>;

/// Every variable the host knows about, and where its bytes are.
pub struct HostMemory {
    registry: Registry,
    host: BufferKind,
    shared: BufferKind,
    microcore: BTreeMap<u64, LocalData>,
    custom: BTreeMap<String, Box<dyn KindBackend>>,
}

impl HostMemory {
    pub fn new(core_count: usize) -> Self {
        Self {
            registry: Registry::new(core_count),
            host: BufferKind::new(Tier::Host),
            shared: BufferKind::new(Tier::Shared),
            microcore: BTreeMap::new(),
            custom: BTreeMap::new(),
        }
    }

    pub fn register_kind(&mut self, name: impl Into<String>, backend: Box<dyn KindBackend>) -> Result<(), String> {
        let name = name.into();
        if matches!(
            name.parse::<MemoryKindId>(),
            Ok(MemoryKindId::Host | MemoryKindId::Shared | MemoryKindId::Microcore) | Err(_)
        ) {
            return Err(format!("`{name}` cannot name a custom kind"));
        }
        if self.custom.contains_key(&name) {
            return Err(format!("kind `{name}` is already registered"));
        }
        self.custom.insert(name, backend);
        Ok(())
    }

    pub fn registry(&self) -> &Registry {
        &self.registry
    }

    pub fn allocate(
        &mut self,
        elem_type: ElemType,
        length: usize,
        kind: MemoryKindId,
        owner_core: Option<usize>,
    ) -> Result<Reference, AllocError> {
        if let MemoryKindId::Custom(name) = &kind {
            if !self.custom.contains_key(name) {
                return Err(AllocError::UnknownKind(name.clone()));
            }
        }
        let reference = self.registry.new_reference(elem_type, length, kind.clone(), owner_core)?;
        match kind {
            MemoryKindId::Host => self.host.allocate(&reference),
            MemoryKindId::Shared => self.shared.allocate(&reference),
            MemoryKindId::Microcore => {
                self.microcore.insert(reference.id, Rc::new(RefCell::new(vec![0; length])));
                Ok(())
            }
            MemoryKindId::Custom(name) => self.custom.get_mut(&name).expect("checked above").allocate(&reference),
        }
        .map_err(AllocError::Backend)?;
        Ok(reference)
    }

    pub fn descriptor(&self, id: u64) -> Result<&VariableDescriptor, TransportError> {
        self.registry.lookup(id).ok_or(TransportError::UnknownReference(id))
    }

    /// Tier a core-initiated access to `id` travels over. Another core's
    /// local store is reached through the host.
    pub fn tier_of(&self, id: u64) -> Result<Tier, TransportError> {
        let d = self.descriptor(id)?;
        Ok(match &d.kind {
            MemoryKindId::Host | MemoryKindId::Microcore => Tier::Host,
            MemoryKindId::Shared => Tier::Shared,
            MemoryKindId::Custom(name) => self.custom[name].tier(),
        })
    }

    pub fn local_data(&self, id: u64) -> Option<LocalData> {
        self.microcore.get(&id).cloned()
    }

    fn check_range(d: &VariableDescriptor, offset: usize, count: usize) -> Result<(), TransportError> {
        if offset.checked_add(count).is_none_or(|end| end > d.reference.length) {
            return Err(TransportError::OutOfBounds {
                reference: d.reference.id,
                offset,
                count,
                length: d.reference.length,
            });
        }
        Ok(())
    }

    pub fn load_bits(&self, id: u64, offset: usize, count: usize) -> Result<Vec<u32>, TransportError> {
        let d = self.descriptor(id)?;
        Self::check_range(d, offset, count)?;
        let r = &d.reference;
        match &d.kind {
            MemoryKindId::Host => self.host.load(r, offset, count),
            MemoryKindId::Shared => self.shared.load(r, offset, count),
            MemoryKindId::Microcore => Ok(self.microcore[&id].borrow()[offset..offset + count].to_vec()),
            MemoryKindId::Custom(name) => self.custom[name].load(r, offset, count),
        }
        .map_err(TransportError::Backend)
    }

    pub fn store_bits(&mut self, id: u64, offset: usize, values: &[u32]) -> Result<(), TransportError> {
        let d = self.registry.lookup(id).ok_or(TransportError::UnknownReference(id))?;
        Self::check_range(d, offset, values.len())?;
        let r = d.reference;
        match &d.kind {
            MemoryKindId::Host => self.host.store(&r, offset, values),
            MemoryKindId::Shared => self.shared.store(&r, offset, values),
            MemoryKindId::Microcore => {
                self.microcore[&id].borrow_mut()[offset..offset + values.len()].copy_from_slice(values);
                Ok(())
            }
            MemoryKindId::Custom(name) => {
                let name = name.clone();
                self.custom.get_mut(&name).expect("registered kind").store(&r, offset, values)
            }
        }
        .map_err(TransportError::Backend)
    }

    pub fn load(&self, id: u64, offset: usize, count: usize) -> Result<Vec<u8>, TransportError> {
        self.load_bits(id, offset, count).map(|b| bits_to_bytes(&b))
    }

    pub fn store(&mut self, id: u64, offset: usize, bytes: &[u8]) -> Result<(), TransportError> {
        self.store_bits(id, offset, &bytes_to_bits(bytes))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum AllocError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("no memory kind named `{0}` is registered")]
    UnknownKind(String),
    #[error("memory kind failure: {0}")]
    Backend(String),
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bounds_are_checked_before_backends() {
        let mut m = HostMemory::new(2);
        let r = m.allocate(ElemType::Int32, 4, MemoryKindId::Host, None).unwrap();
        m.store_bits(r.id, 1, &[7, 8]).unwrap();
        assert_eq!(m.load_bits(r.id, 0, 4).unwrap(), vec![0, 7, 8, 0]);
        assert!(matches!(m.load_bits(r.id, 3, 2), Err(TransportError::OutOfBounds { .. })));
        assert!(matches!(m.load_bits(r.id, usize::MAX, 2), Err(TransportError::OutOfBounds { .. })));
        assert_eq!(m.load_bits(99, 0, 1), Err(TransportError::UnknownReference(99)));
    }

    #[test]
    fn custom_kind_via_callbacks() {
        let store = Rc::new(RefCell::new(vec![0u32; 8]));
        let (a, b) = (store.clone(), store.clone());
        let kind = CallbackKind::new(
            Tier::Shared,
            move |_, off, n| Ok(a.borrow()[off..off + n].to_vec()),
            move |_, off, vals| {
                b.borrow_mut()[off..off + vals.len()].copy_from_slice(vals);
                Ok(())
            },
        );
        let mut m = HostMemory::new(1);
        m.register_kind("scratch", Box::new(kind)).unwrap();
        assert!(m.register_kind("Host", Box::new(BufferKind::new(Tier::Host))).is_err());
        let r = m.allocate(ElemType::Float32, 8, MemoryKindId::Custom("scratch".into()), None).unwrap();
        m.store_bits(r.id, 2, &[5]).unwrap();
        assert_eq!(store.borrow()[2], 5);
        assert_eq!(m.tier_of(r.id).unwrap(), Tier::Shared);
        assert!(matches!(
            m.allocate(ElemType::Float32, 1, MemoryKindId::Custom("nope".into()), None),
            Err(AllocError::UnknownKind(_))
        ));
    }
}
