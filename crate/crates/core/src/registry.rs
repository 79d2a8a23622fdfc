//! Name-keyed registries for runtime-selectable strategies.

use std::collections::BTreeMap;
use std::sync::Arc;

use crate::{Error, Result};

/// Map from strategy name to a shared trait object.
///
/// `T` is usually a `dyn Trait` or a `dyn Fn` constructor for strategies
/// that take parameters.
pub struct Registry<T: ?Sized> {
    kind: &'static str,
    entries: BTreeMap<String, Arc<T>>,
}

impl<T: ?Sized> Registry<T> {
    pub fn new(kind: &'static str) -> Self {
        Self {
            kind,
            entries: BTreeMap::new(),
        }
    }

    /// Add or replace an entry.
    pub fn register(&mut self, name: impl Into<String>, item: Arc<T>) -> &mut Self {
        self.entries.insert(name.into(), item);
        self
    }

    pub fn get(&self, name: &str) -> Result<Arc<T>> {
        self.entries
            .get(name)
            .cloned()
            .ok_or_else(|| Error::UnknownStrategy {
                kind: self.kind,
                name: name.to_string(),
            })
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }
}

impl<T: ?Sized> std::fmt::Debug for Registry<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Registry")
            .field("kind", &self.kind)
            .field("entries", &self.entries.keys().collect::<Vec<_>>())
            .finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    trait Greeter: Send + Sync {
        fn greet(&self) -> &'static str;
    }
    struct Hello;
    impl Greeter for Hello {
        fn greet(&self) -> &'static str {
            "hello"
        }
    }

    #[test]
    fn lookup_by_name() {
        let mut reg: Registry<dyn Greeter> = Registry::new("greeter");
        reg.register("hello", Arc::new(Hello));
        assert_eq!(reg.get("hello").unwrap().greet(), "hello");
        assert!(reg.contains("hello"));
        match reg.get("bye") {
            Err(Error::UnknownStrategy { kind, name }) => {
                assert_eq!(kind, "greeter");
                assert_eq!(name, "bye");
            }
            _ => panic!("expected unknown-strategy error"),
        }
        assert_eq!(reg.names().collect::<Vec<_>>(), vec!["hello"]);
    }
}
