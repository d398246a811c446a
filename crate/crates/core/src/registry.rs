//! Name-keyed registries of interchangeable strategies.

use std::collections::BTreeMap;

use crate::error::{Error, Result};

/// Maps a strategy name to a constructor for a boxed trait object.
pub struct Registry<T: ?Sized> {
    kind: &'static str,
    entries: BTreeMap<&'static str, fn() -> Box<T>>,
}

impl<T: ?Sized> Registry<T> {
    pub fn new(kind: &'static str) -> Self {
        Self {
            kind,
            entries: BTreeMap::new(),
        }
    }

    pub fn register(&mut self, name: &'static str, make: fn() -> Box<T>) -> &mut Self {
        self.entries.insert(name, make);
        self
    }

    pub fn get(&self, name: &str) -> Result<Box<T>> {
        self.entries.get(name).map(|make| make()).ok_or_else(|| {
            Error::Config(format!(
                "unknown {} '{}'; expected one of: {}",
                self.kind,
                name,
                self.names().join(", ")
            ))
        })
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.entries.keys().copied().collect()
    }
}
