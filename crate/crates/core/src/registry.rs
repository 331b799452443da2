//! Named strategy registries. Algorithm variants implement a shared trait and
//! are looked up by name from configuration or the command line.

use std::collections::BTreeMap;
use std::sync::Arc;

#[derive(Debug, thiserror::Error)]
#[error("unknown {kind} {name:?}; known: {known}")]
pub struct UnknownStrategy {
    pub kind: &'static str,
    pub name: String,
    pub known: String,
}

pub struct Registry<T: ?Sized> {
    kind: &'static str,
    entries: BTreeMap<String, Arc<T>>,
}

impl<T: ?Sized> Registry<T> {
    pub fn new(kind: &'static str) -> Self {
        Registry { kind, entries: BTreeMap::new() }
    }

    pub fn register(&mut self, name: &str, item: Arc<T>) -> Option<Arc<T>> {
        self.entries.insert(name.to_string(), item)
    }

    pub fn get(&self, name: &str) -> Result<Arc<T>, UnknownStrategy> {
        self.entries.get(name).cloned().ok_or_else(|| UnknownStrategy {
            kind: self.kind,
            name: name.to_string(),
            known: self.names().join(", "),
        })
    }

    pub fn names(&self) -> Vec<String> {
        self.entries.keys().cloned().collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    trait Greeter: Send + Sync {
        fn hello(&self) -> String;
    }
    struct En;
    impl Greeter for En {
        fn hello(&self) -> String {
            "hi".into()
        }
    }

    #[test]
    fn lookup_and_unknown() {
        let mut r: Registry<dyn Greeter> = Registry::new("greeter");
        r.register("en", Arc::new(En));
        assert_eq!(r.get("en").unwrap().hello(), "hi");
        let e = r.get("fr").err().unwrap();
        assert!(e.to_string().contains("known: en"));
    }
}
