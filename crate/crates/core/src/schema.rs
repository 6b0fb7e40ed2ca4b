//! Shared-type declarations and object states.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::value::{Value, ValueKind};

/// A declared shared type: an ordered set of typed dimensions, one of which
/// is the primary key objects are addressed by.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TypeSchema {
    pub name: String,
    pub primary_key: String,
    pub dimensions: Vec<(String, ValueKind)>,
}

impl TypeSchema {
    pub fn new(name: &str, primary_key: &str, dims: &[(&str, ValueKind)]) -> Result<TypeSchema> {
        check_name(name)?;
        let mut dimensions: Vec<(String, ValueKind)> = Vec::with_capacity(dims.len());
        for (dim, kind) in dims {
            check_name(dim)?;
            if dimensions.iter().any(|(d, _)| d == dim) {
                return Err(Error::DuplicateDimension {
                    name: name.to_string(),
                    dim: dim.to_string(),
                });
            }
            dimensions.push((dim.to_string(), *kind));
        }
        if !dimensions.iter().any(|(d, _)| d == primary_key) {
            return Err(Error::PrimaryKeyNotDimension {
                name: name.to_string(),
                pkey: primary_key.to_string(),
            });
        }
        Ok(TypeSchema {
            name: name.to_string(),
            primary_key: primary_key.to_string(),
            dimensions,
        })
    }

    pub fn kind_of(&self, dim: &str) -> Option<ValueKind> {
        self.dimensions.iter().find(|(d, _)| d == dim).map(|(_, k)| *k)
    }

    pub fn primary_kind(&self) -> ValueKind {
        self.kind_of(&self.primary_key).expect("primary key is a dimension")
    }

    /// Checks a complete dimension map against this schema.
    pub fn check_full(&self, dims: &BTreeMap<String, Value>) -> Result<()> {
        if dims.len() != self.dimensions.len() {
            return Err(self.nonconforming(format!(
                "expected {} dimensions, got {}",
                self.dimensions.len(),
                dims.len()
            )));
        }
        self.check_partial(dims)
    }

    /// Checks that every listed dimension exists and has the declared kind.
    pub fn check_partial(&self, dims: &BTreeMap<String, Value>) -> Result<()> {
        for (dim, value) in dims {
            match self.kind_of(dim) {
                None => return Err(self.nonconforming(format!("unknown dimension `{dim}`"))),
                Some(kind) if kind != value.kind() => {
                    return Err(self.nonconforming(format!(
                        "dimension `{dim}` is {}, got {}",
                        kind.name(),
                        value.kind().name()
                    )))
                }
                Some(_) => {}
            }
        }
        Ok(())
    }

    fn nonconforming(&self, detail: String) -> Error {
        Error::NonConforming {
            type_name: self.name.clone(),
            detail,
        }
    }
}

fn check_name(name: &str) -> Result<()> {
    // `:` separates type name from key in the wire format
    if name.is_empty() || name.contains(':') || name.chars().any(char::is_whitespace) {
        return Err(Error::InvalidName(name.to_string()));
    }
    Ok(())
}

/// Set of schemas known to a node. Once registered a schema never changes.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Registry {
    schemas: BTreeMap<String, TypeSchema>,
}

impl Registry {
    pub fn new() -> Registry {
        Registry::default()
    }

    pub fn register_schema(
        &mut self,
        name: &str,
        primary_key: &str,
        dims: &[(&str, ValueKind)],
    ) -> Result<&TypeSchema> {
        if self.schemas.contains_key(name) {
            return Err(Error::DuplicateSchema(name.to_string()));
        }
        let schema = TypeSchema::new(name, primary_key, dims)?;
        Ok(self.schemas.entry(name.to_string()).or_insert(schema))
    }

    pub fn insert(&mut self, schema: TypeSchema) -> Result<()> {
        if self.schemas.contains_key(&schema.name) {
            return Err(Error::DuplicateSchema(schema.name));
        }
        self.schemas.insert(schema.name.clone(), schema);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&TypeSchema> {
        self.schemas
            .get(name)
            .ok_or_else(|| Error::UnknownType(name.to_string()))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.schemas.keys().map(String::as_str)
    }

    pub fn schemas(&self) -> impl Iterator<Item = &TypeSchema> {
        self.schemas.values()
    }

    pub fn check_object(&self, obj: &ObjectState) -> Result<()> {
        let schema = self.get(&obj.type_name)?;
        schema.check_full(&obj.dims)?;
        match obj.dims.get(&schema.primary_key) {
            Some(pk) if *pk == obj.pkey => Ok(()),
            _ => Err(Error::NonConforming {
                type_name: obj.type_name.clone(),
                detail: format!("primary key dimension does not equal {}", obj.pkey),
            }),
        }
    }
}

/// Materialized state of one object.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ObjectState {
    pub type_name: String,
    pub pkey: Value,
    pub dims: BTreeMap<String, Value>,
}

impl ObjectState {
    pub fn new(type_name: &str, pkey: Value, dims: BTreeMap<String, Value>) -> ObjectState {
        ObjectState {
            type_name: type_name.to_string(),
            pkey,
            dims,
        }
    }

    /// Builds an object from `(dimension, value)` pairs, taking the primary
    /// key from the schema.
    pub fn build<I, K, V>(schema: &TypeSchema, dims: I) -> Result<ObjectState>
    where
        I: IntoIterator<Item = (K, V)>,
        K: Into<String>,
        V: Into<Value>,
    {
        let dims: BTreeMap<String, Value> =
            dims.into_iter().map(|(k, v)| (k.into(), v.into())).collect();
        schema.check_full(&dims)?;
        let pkey = dims[&schema.primary_key].clone();
        Ok(ObjectState::new(&schema.name, pkey, dims))
    }

    pub fn get(&self, dim: &str) -> Option<&Value> {
        self.dims.get(dim)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line_registry() -> Registry {
        let mut reg = Registry::new();
        reg.register_schema("Line", "line_num", &[("line_num", ValueKind::Int), ("line", ValueKind::Str)])
            .unwrap();
        reg
    }

    #[test]
    fn registers_line_and_stop() {
        let mut reg = line_registry();
        assert_eq!(reg.get("Line").unwrap().dimensions.len(), 2);
        let stop = reg
            .register_schema("Stop", "index", &[("index", ValueKind::Int), ("accepted", ValueKind::Bool)])
            .unwrap();
        assert_eq!(stop.dimensions.len(), 2);
        assert_eq!(stop.primary_kind(), ValueKind::Int);
    }

    #[test]
    fn duplicate_schema_is_rejected() {
        let mut reg = line_registry();
        let err = reg
            .register_schema("Line", "line_num", &[("line_num", ValueKind::Int)])
            .unwrap_err();
        assert_eq!(err, Error::DuplicateSchema("Line".into()));
    }

    #[test]
    fn primary_key_must_be_a_dimension() {
        let mut reg = Registry::new();
        let err = reg.register_schema("T", "id", &[("x", ValueKind::Int)]).unwrap_err();
        assert!(matches!(err, Error::PrimaryKeyNotDimension { .. }));
        let err = reg
            .register_schema("T", "x", &[("x", ValueKind::Int), ("x", ValueKind::Str)])
            .unwrap_err();
        assert!(matches!(err, Error::DuplicateDimension { .. }));
        assert!(reg.register_schema("A:B", "x", &[("x", ValueKind::Int)]).is_err());
    }

    #[test]
    fn object_conformance() {
        let reg = line_registry();
        let schema = reg.get("Line").unwrap();
        let ok = ObjectState::build(schema, [("line_num", Value::Int(5)), ("line", "bar".into())]).unwrap();
        reg.check_object(&ok).unwrap();
        assert!(ObjectState::build(schema, [("line_num", Value::Int(5))]).is_err());
        assert!(ObjectState::build(schema, [("line_num", Value::Str("5".into())), ("line", "bar".into())]).is_err());
        let mut bad = ok.clone();
        bad.pkey = Value::Int(6);
        assert!(reg.check_object(&bad).is_err());
    }
}
