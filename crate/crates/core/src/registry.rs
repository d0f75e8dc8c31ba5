//! Name-keyed factories for interchangeable strategies.

use std::collections::BTreeMap;

use crate::error::{Error, Result};

type Factory<T, P> = Box<dyn Fn(&P) -> Box<T> + Send + Sync>;

/// Maps a strategy name to a factory producing a boxed trait object from
/// construction parameters `P`.
pub struct Registry<T: ?Sized, P = ()> {
    kind: &'static str,
    factories: BTreeMap<String, Factory<T, P>>,
}

impl<T: ?Sized, P> Registry<T, P> {
    pub fn new(kind: &'static str) -> Self {
        Self {
            kind,
            factories: BTreeMap::new(),
        }
    }

    /// Registers `factory` under `name`, replacing any previous entry.
    pub fn register<F>(&mut self, name: impl Into<String>, factory: F) -> &mut Self
    where
        F: Fn(&P) -> Box<T> + Send + Sync + 'static,
    {
        self.factories.insert(name.into(), Box::new(factory));
        self
    }

    pub fn create(&self, name: &str, params: &P) -> Result<Box<T>> {
        match self.factories.get(name) {
            Some(factory) => Ok(factory(params)),
            None => Err(Error::UnknownStrategy {
                kind: self.kind,
                name: name.to_string(),
                available: self.names().join(", "),
            }),
        }
    }

    pub fn contains(&self, name: &str) -> bool {
        self.factories.contains_key(name)
    }

    pub fn names(&self) -> Vec<&str> {
        self.factories.keys().map(String::as_str).collect()
    }
}
