//! Shared vocabulary: method identity, trace events, program structure and
//! the method registry.

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::RegistryError;

/// Default sliding window length, 3 s.
pub const DEFAULT_WINDOW_MICROS: u64 = 3_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MethodId(pub u32);

impl fmt::Display for MethodId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ThreadId(pub u64);

impl fmt::Display for ThreadId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Action {
    Enter,
    Exit,
}

impl Action {
    /// Wire encoding: 0 = Enter, 1 = Exit.
    pub fn code(self) -> u8 {
        match self {
            Action::Enter => 0,
            Action::Exit => 1,
        }
    }

    pub fn from_code(code: u64) -> Option<Self> {
        match code {
            0 => Some(Action::Enter),
            1 => Some(Action::Exit),
            _ => None,
        }
    }
}

/// One timestamped enter/exit record. Timestamps are producer microseconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TraceEvent {
    pub timestamp: u64,
    pub method: MethodId,
    pub action: Action,
}

impl TraceEvent {
    pub fn enter(timestamp: u64, method: MethodId) -> Self {
        TraceEvent { timestamp, method, action: Action::Enter }
    }

    pub fn exit(timestamp: u64, method: MethodId) -> Self {
        TraceEvent { timestamp, method, action: Action::Exit }
    }
}

/// Identity and structural placement of a method.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct MethodDescriptor {
    pub id: MethodId,
    /// Opaque signature text, e.g. `run()`.
    pub method_name: String,
    pub class_name: String,
    /// Outermost package first; empty for the default package.
    pub package_path: Vec<String>,
}

impl MethodDescriptor {
    pub fn new<P, S>(id: u32, method_name: &str, class_name: &str, package_path: P) -> Self
    where
        P: IntoIterator<Item = S>,
        S: Into<String>,
    {
        MethodDescriptor {
            id: MethodId(id),
            method_name: method_name.to_owned(),
            class_name: class_name.to_owned(),
            package_path: package_path.into_iter().map(Into::into).collect(),
        }
    }

    /// Stand-in descriptor for an id seen in events before its registration.
    pub fn placeholder(id: MethodId) -> Self {
        MethodDescriptor {
            id,
            method_name: format!("method#{}", id.0),
            class_name: "?".to_owned(),
            package_path: Vec::new(),
        }
    }

    /// `pkg.sub.Class.method()` style name for reports.
    pub fn qualified_name(&self) -> String {
        let mut out = String::new();
        for seg in &self.package_path {
            out.push_str(seg);
            out.push('.');
        }
        out.push_str(&self.class_name);
        out.push('.');
        out.push_str(&self.method_name);
        out
    }

    fn signature(&self) -> (Vec<String>, String, String) {
        (self.package_path.clone(), self.class_name.clone(), self.method_name.clone())
    }
}

/// The current window `[end - length, end]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Window {
    pub length_micros: u64,
    pub end_micros: u64,
}

impl Window {
    pub fn new(length_micros: u64, end_micros: u64) -> Self {
        assert!(length_micros > 0, "window length must be positive");
        Window { length_micros, end_micros }
    }

    /// Window start; saturates at 0 near the start of a session.
    pub fn start_micros(&self) -> u64 {
        self.end_micros.saturating_sub(self.length_micros)
    }

    /// Length of the overlap between `[start, end]` and this window.
    pub fn overlap(&self, start: u64, end: u64) -> u64 {
        let lo = start.max(self.start_micros());
        let hi = end.min(self.end_micros);
        hi.saturating_sub(lo)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Entry {
    desc: MethodDescriptor,
    placeholder: bool,
}

/// Registered methods for one session.
///
/// Every accepted change bumps [`MethodRegistry::revision`], which the city
/// layout uses as its structure revision.
#[derive(Debug, Clone, Default)]
pub struct MethodRegistry {
    entries: BTreeMap<MethodId, Entry>,
    by_signature: HashMap<(Vec<String>, String, String), MethodId>,
    revision: u64,
}

impl MethodRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Empty registry whose revision counter starts at `revision`, so a new
    /// session can continue a previous session's numbering.
    pub fn with_revision(revision: u64) -> Self {
        MethodRegistry { revision, ..Self::default() }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn revision(&self) -> u64 {
        self.revision
    }

    /// Stores `desc`. Returns `Ok(true)` when the registry changed.
    ///
    /// Identical re-registration is a no-op. A real descriptor replaces a
    /// placeholder for the same id.
    pub fn register(&mut self, desc: MethodDescriptor) -> Result<bool, RegistryError> {
        if desc.method_name.is_empty() {
            return Err(RegistryError::EmptyMethodName(desc.id));
        }
        let signature = desc.signature();
        if let Some(&other) = self.by_signature.get(&signature) {
            if other != desc.id {
                return Err(RegistryError::ConflictingRegistration {
                    id: desc.id,
                    existing: self.entries[&other].desc.qualified_name(),
                    attempted: desc.qualified_name(),
                });
            }
        }
        match self.entries.get(&desc.id) {
            Some(entry) if entry.desc == desc => return Ok(false),
            Some(entry) if !entry.placeholder => {
                return Err(RegistryError::ConflictingRegistration {
                    id: desc.id,
                    existing: entry.desc.qualified_name(),
                    attempted: desc.qualified_name(),
                });
            }
            Some(entry) => {
                let old = entry.desc.signature();
                self.by_signature.remove(&old);
            }
            None => {}
        }
        self.by_signature.insert(signature, desc.id);
        self.entries.insert(desc.id, Entry { desc, placeholder: false });
        self.revision += 1;
        Ok(true)
    }

    /// Registers a placeholder for `id` unless the id is already known.
    /// Returns `true` when a placeholder was inserted.
    pub fn ensure_placeholder(&mut self, id: MethodId) -> bool {
        if self.entries.contains_key(&id) {
            return false;
        }
        let desc = MethodDescriptor::placeholder(id);
        self.by_signature.insert(desc.signature(), id);
        self.entries.insert(id, Entry { desc, placeholder: true });
        self.revision += 1;
        true
    }

    pub fn lookup(&self, id: MethodId) -> Option<&MethodDescriptor> {
        self.entries.get(&id).map(|e| &e.desc)
    }

    pub fn is_placeholder(&self, id: MethodId) -> bool {
        self.entries.get(&id).is_some_and(|e| e.placeholder)
    }

    pub fn contains(&self, id: MethodId) -> bool {
        self.entries.contains_key(&id)
    }

    /// Descriptors in id order.
    pub fn descriptors(&self) -> impl Iterator<Item = &MethodDescriptor> + '_ {
        self.entries.values().map(|e| &e.desc)
    }
}
