//! Artifact payloads: metamodels, model instances and the conformance relation.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ModelError {
    #[error("unknown class `{0}`")]
    UnknownClass(String),
    #[error("invalid identifier `{0}`")]
    InvalidIdentifier(String),
    #[error("duplicate class `{0}`")]
    DuplicateClass(String),
    #[error("class `{class}`: unresolved supertype `{supertype}`")]
    UnresolvedSupertype { class: String, supertype: String },
    #[error("class `{class}`: feature `{feature}` has unresolved type `{value_type}`")]
    UnresolvedFeatureType {
        class: String,
        feature: String,
        value_type: String,
    },
    #[error("inheritance cycle through class `{0}`")]
    InheritanceCycle(String),
    #[error(
        "class `{class}`: feature `{feature}` declared more than once in the flattened feature set"
    )]
    DuplicateFeature { class: String, feature: String },
    #[error("class `{class}`: feature `{feature}`: {reason}")]
    InvalidFeature {
        class: String,
        feature: String,
        reason: String,
    },
    #[error("duplicate object id `{0}`")]
    DuplicateObject(String),
    #[error("root `{0}` does not name an object")]
    UnknownRoot(String),
    #[error("root `{0}` listed twice")]
    DuplicateRoot(String),
    #[error("object `{object}`: link `{feature}` targets unknown object `{target}`")]
    DanglingLink {
        object: String,
        feature: String,
        target: String,
    },
    #[error("malformed JSON at line {line}, column {column}: {message}")]
    Json {
        line: usize,
        column: usize,
        message: String,
    },
}

impl ModelError {
    pub(crate) fn from_json(err: serde_json::Error) -> Self {
        ModelError::Json {
            line: err.line(),
            column: err.column(),
            message: err.to_string(),
        }
    }
}

pub(crate) fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) if c.is_ascii_alphabetic() || c == '_' => {}
        _ => return false,
    }
    chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

/// Primitive attribute types.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Primitive {
    String,
    Int,
    Bool,
}

impl Primitive {
    pub fn as_str(self) -> &'static str {
        match self {
            Primitive::String => "string",
            Primitive::Int => "int",
            Primitive::Bool => "bool",
        }
    }

    pub fn admits(self, value: &Value) -> bool {
        matches!(
            (self, value),
            (Primitive::String, Value::Str(_))
                | (Primitive::Int, Value::Int(_))
                | (Primitive::Bool, Value::Bool(_))
        )
    }
}

impl FromStr for Primitive {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        match s {
            "string" => Ok(Primitive::String),
            "int" => Ok(Primitive::Int),
            "bool" => Ok(Primitive::Bool),
            _ => Err(()),
        }
    }
}

/// An attribute value.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Value {
    Bool(bool),
    Int(i64),
    Str(String),
}

impl Value {
    pub fn primitive(&self) -> Primitive {
        match self {
            Value::Bool(_) => Primitive::Bool,
            Value::Int(_) => Primitive::Int,
            Value::Str(_) => Primitive::String,
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Bool(b) => write!(f, "{b}"),
            Value::Int(i) => write!(f, "{i}"),
            Value::Str(s) => write!(f, "{s:?}"),
        }
    }
}

/// Upper multiplicity bound. Serialized as `-1` when unbounded.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Upper {
    Bounded(u32),
    Unbounded,
}

impl Upper {
    pub fn admits(self, count: usize) -> bool {
        match self {
            Upper::Bounded(u) => count <= u as usize,
            Upper::Unbounded => true,
        }
    }

    pub fn is_many(self) -> bool {
        !matches!(self, Upper::Bounded(0) | Upper::Bounded(1))
    }
}

impl fmt::Display for Upper {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Upper::Bounded(u) => write!(f, "{u}"),
            Upper::Unbounded => f.write_str("*"),
        }
    }
}

impl Serialize for Upper {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Upper::Bounded(u) => s.serialize_i64(i64::from(*u)),
            Upper::Unbounded => s.serialize_i64(-1),
        }
    }
}

impl<'de> Deserialize<'de> for Upper {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let raw = i64::deserialize(d)?;
        match raw {
            -1 => Ok(Upper::Unbounded),
            n if n >= 1 && n <= i64::from(u32::MAX) => Ok(Upper::Bounded(n as u32)),
            n => Err(D::Error::custom(format!(
                "upper bound must be positive or -1, got {n}"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureKind {
    Attribute,
    Reference,
}

/// A typed, multiplicity-bounded slot of a meta-class.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct Feature {
    pub name: String,
    pub kind: FeatureKind,
    pub value_type: String,
    pub lower: u32,
    pub upper: Upper,
    pub containment: bool,
}

#[derive(Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
struct RawFeature {
    name: String,
    #[serde(default)]
    kind: Option<FeatureKind>,
    value_type: String,
    lower: u32,
    upper: Upper,
    #[serde(default)]
    containment: bool,
}

impl<'de> Deserialize<'de> for Feature {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let raw = RawFeature::deserialize(d)?;
        // A missing kind is inferred from the value type.
        let kind = raw
            .kind
            .unwrap_or(if raw.value_type.parse::<Primitive>().is_ok() {
                FeatureKind::Attribute
            } else {
                FeatureKind::Reference
            });
        Ok(Feature {
            name: raw.name,
            kind,
            value_type: raw.value_type,
            lower: raw.lower,
            upper: raw.upper,
            containment: raw.containment,
        })
    }
}

impl Feature {
    pub fn attribute(name: &str, ty: Primitive, lower: u32, upper: Upper) -> Self {
        Feature {
            name: name.to_string(),
            kind: FeatureKind::Attribute,
            value_type: ty.as_str().to_string(),
            lower,
            upper,
            containment: false,
        }
    }

    pub fn reference(
        name: &str,
        target: &str,
        lower: u32,
        upper: Upper,
        containment: bool,
    ) -> Self {
        Feature {
            name: name.to_string(),
            kind: FeatureKind::Reference,
            value_type: target.to_string(),
            lower,
            upper,
            containment,
        }
    }

    pub fn primitive(&self) -> Option<Primitive> {
        match self.kind {
            FeatureKind::Attribute => self.value_type.parse().ok(),
            FeatureKind::Reference => None,
        }
    }

    pub fn admits_count(&self, count: usize) -> bool {
        count >= self.lower as usize && self.upper.admits(count)
    }

    pub fn is_many(&self) -> bool {
        self.upper.is_many()
    }

    /// `name: Type[l..u]` rendering used in reports.
    pub fn signature(&self) -> String {
        format!(
            "{}: {}[{}..{}]{}",
            self.name,
            self.value_type,
            self.lower,
            self.upper,
            if self.containment { " containment" } else { "" }
        )
    }

    pub(crate) fn check_shape(&self, class: &str) -> Result<(), ModelError> {
        let invalid = |reason: &str| ModelError::InvalidFeature {
            class: class.to_string(),
            feature: self.name.clone(),
            reason: reason.to_string(),
        };
        if !is_identifier(&self.name) {
            return Err(ModelError::InvalidIdentifier(self.name.clone()));
        }
        if let Upper::Bounded(u) = self.upper {
            if self.lower > u {
                return Err(invalid("lower bound exceeds upper bound"));
            }
        }
        if self.containment && self.kind != FeatureKind::Reference {
            return Err(invalid("containment is only allowed on references"));
        }
        if self.kind == FeatureKind::Attribute && self.primitive().is_none() {
            return Err(ModelError::UnresolvedFeatureType {
                class: class.to_string(),
                feature: self.name.clone(),
                value_type: self.value_type.clone(),
            });
        }
        Ok(())
    }
}

impl fmt::Display for Feature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.signature())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetaClass {
    pub name: String,
    #[serde(rename = "abstract", default)]
    pub is_abstract: bool,
    #[serde(default)]
    pub supertypes: Vec<String>,
    #[serde(default)]
    pub features: Vec<Feature>,
}

impl MetaClass {
    pub fn new(name: &str) -> Self {
        MetaClass {
            name: name.to_string(),
            is_abstract: false,
            supertypes: Vec::new(),
            features: Vec::new(),
        }
    }

    pub fn abstract_class(mut self) -> Self {
        self.is_abstract = true;
        self
    }

    pub fn extends(mut self, supertype: &str) -> Self {
        self.supertypes.push(supertype.to_string());
        self
    }

    pub fn with(mut self, feature: Feature) -> Self {
        self.features.push(feature);
        self
    }

    pub fn own_feature(&self, name: &str) -> Option<&Feature> {
        self.features.iter().find(|f| f.name == name)
    }
}

/// A validated metamodel. Classes are keyed by name; feature order is preserved.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Metamodel {
    name: String,
    classes: BTreeMap<String, MetaClass>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawMetamodel {
    name: String,
    classes: Vec<MetaClass>,
}

impl Serialize for Metamodel {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        RawMetamodel {
            name: self.name.clone(),
            classes: self.classes.values().cloned().collect(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for Metamodel {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let raw = RawMetamodel::deserialize(d)?;
        Metamodel::new(&raw.name, raw.classes).map_err(D::Error::custom)
    }
}

impl Metamodel {
    pub fn new(name: &str, classes: Vec<MetaClass>) -> Result<Self, ModelError> {
        if !is_identifier(name) {
            return Err(ModelError::InvalidIdentifier(name.to_string()));
        }
        let mut map = BTreeMap::new();
        for class in classes {
            if map.contains_key(&class.name) {
                return Err(ModelError::DuplicateClass(class.name));
            }
            map.insert(class.name.clone(), class);
        }
        let mm = Metamodel {
            name: name.to_string(),
            classes: map,
        };
        mm.validate()?;
        Ok(mm)
    }

    pub fn from_json(text: &str) -> Result<Self, ModelError> {
        let raw: RawMetamodel = serde_json::from_str(text).map_err(ModelError::from_json)?;
        Metamodel::new(&raw.name, raw.classes)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("metamodel serializes")
    }

    pub(crate) fn from_parts_unchecked(name: String, classes: BTreeMap<String, MetaClass>) -> Self {
        Metamodel { name, classes }
    }

    pub(crate) fn validate(&self) -> Result<(), ModelError> {
        for class in self.classes.values() {
            if !is_identifier(&class.name) {
                return Err(ModelError::InvalidIdentifier(class.name.clone()));
            }
            for sup in &class.supertypes {
                if !self.classes.contains_key(sup) {
                    return Err(ModelError::UnresolvedSupertype {
                        class: class.name.clone(),
                        supertype: sup.clone(),
                    });
                }
            }
            for feature in &class.features {
                feature.check_shape(&class.name)?;
                if feature.kind == FeatureKind::Reference
                    && !self.classes.contains_key(&feature.value_type)
                {
                    return Err(ModelError::UnresolvedFeatureType {
                        class: class.name.clone(),
                        feature: feature.name.clone(),
                        value_type: feature.value_type.clone(),
                    });
                }
            }
        }
        self.check_acyclic()?;
        for name in self.classes.keys() {
            let mut seen = BTreeSet::new();
            for f in self.effective_features(name)? {
                if !seen.insert(f.name.as_str()) {
                    return Err(ModelError::DuplicateFeature {
                        class: name.clone(),
                        feature: f.name.clone(),
                    });
                }
            }
        }
        Ok(())
    }

    fn check_acyclic(&self) -> Result<(), ModelError> {
        // 0 = unvisited, 1 = on stack, 2 = done
        fn visit<'a>(
            mm: &'a Metamodel,
            name: &'a str,
            state: &mut BTreeMap<&'a str, u8>,
        ) -> Result<(), ModelError> {
            match state.get(name) {
                Some(2) => return Ok(()),
                Some(1) => return Err(ModelError::InheritanceCycle(name.to_string())),
                _ => {}
            }
            state.insert(name, 1);
            for sup in &mm.classes[name].supertypes {
                visit(mm, sup, state)?;
            }
            state.insert(name, 2);
            Ok(())
        }
        let mut state = BTreeMap::new();
        for name in self.classes.keys() {
            visit(self, name, &mut state)?;
        }
        Ok(())
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn classes(&self) -> impl Iterator<Item = &MetaClass> {
        self.classes.values()
    }

    pub fn class_names(&self) -> impl Iterator<Item = &str> {
        self.classes.keys().map(String::as_str)
    }

    pub fn class(&self, name: &str) -> Option<&MetaClass> {
        self.classes.get(name)
    }

    pub fn contains_class(&self, name: &str) -> bool {
        self.classes.contains_key(name)
    }

    /// Inherited features first (depth-first over supertypes, each class once),
    /// then the class's own features.
    pub fn effective_features(&self, class: &str) -> Result<Vec<&Feature>, ModelError> {
        fn collect<'a>(
            mm: &'a Metamodel,
            class: &'a MetaClass,
            visited: &mut BTreeSet<&'a str>,
            out: &mut Vec<&'a Feature>,
        ) {
            if !visited.insert(class.name.as_str()) {
                return;
            }
            for sup in &class.supertypes {
                if let Some(sc) = mm.classes.get(sup) {
                    collect(mm, sc, visited, out);
                }
            }
            out.extend(class.features.iter());
        }
        let c = self
            .classes
            .get(class)
            .ok_or_else(|| ModelError::UnknownClass(class.to_string()))?;
        let mut out = Vec::new();
        collect(self, c, &mut BTreeSet::new(), &mut out);
        Ok(out)
    }

    pub fn feature(&self, class: &str, feature: &str) -> Option<&Feature> {
        self.effective_features(class)
            .ok()?
            .into_iter()
            .find(|f| f.name == feature)
    }

    /// Reflexive-transitive supertype closure of `class` (empty if unknown).
    pub fn ancestors(&self, class: &str) -> BTreeSet<&str> {
        let mut out = BTreeSet::new();
        let mut stack = vec![class];
        while let Some(c) = stack.pop() {
            if let Some((name, mc)) = self.classes.get_key_value(c) {
                if out.insert(name.as_str()) {
                    stack.extend(mc.supertypes.iter().map(String::as_str));
                }
            }
        }
        out
    }

    /// Whether `sub` equals or transitively specializes `sup`.
    pub fn is_subclass(&self, sub: &str, sup: &str) -> bool {
        self.ancestors(sub).contains(sup)
    }

    /// Classes that equal or specialize `class`.
    pub fn descendants(&self, class: &str) -> BTreeSet<&str> {
        self.classes
            .keys()
            .filter(|c| self.is_subclass(c, class))
            .map(String::as_str)
            .collect()
    }

    /// Copy with classes and each class's features sorted by name.
    pub fn canonical(&self) -> Metamodel {
        let mut out = self.clone();
        for class in out.classes.values_mut() {
            class.features.sort_by(|a, b| a.name.cmp(&b.name));
        }
        out
    }

    /// Equality modulo feature declaration order.
    pub fn structurally_eq(&self, other: &Metamodel) -> bool {
        self.canonical() == other.canonical()
    }
}

/// `(multiverse, version)` a model claims conformance to.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConformsTo {
    pub multiverse: String,
    pub version: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(untagged)]
enum OneOrMany {
    Many(Vec<Value>),
    One(Value),
}

fn de_attrs<'de, D: Deserializer<'de>>(d: D) -> Result<BTreeMap<String, Vec<Value>>, D::Error> {
    let raw: BTreeMap<String, OneOrMany> = BTreeMap::deserialize(d)?;
    Ok(raw
        .into_iter()
        .map(|(k, v)| {
            let values = match v {
                OneOrMany::Many(vs) => vs,
                OneOrMany::One(v) => vec![v],
            };
            (k, values)
        })
        .collect())
}

fn ser_attrs<S: Serializer>(attrs: &BTreeMap<String, Vec<Value>>, s: S) -> Result<S::Ok, S::Error> {
    let raw: BTreeMap<&String, OneOrMany> = attrs
        .iter()
        .map(|(k, v)| {
            let slot = if v.len() == 1 {
                OneOrMany::One(v[0].clone())
            } else {
                OneOrMany::Many(v.clone())
            };
            (k, slot)
        })
        .collect();
    raw.serialize(s)
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct ModelObject {
    pub id: String,
    pub class_name: String,
    #[serde(default, deserialize_with = "de_attrs", serialize_with = "ser_attrs")]
    pub attribute_values: BTreeMap<String, Vec<Value>>,
    #[serde(default)]
    pub links: BTreeMap<String, Vec<String>>,
}

impl ModelObject {
    pub fn new(id: &str, class_name: &str) -> Self {
        ModelObject {
            id: id.to_string(),
            class_name: class_name.to_string(),
            attribute_values: BTreeMap::new(),
            links: BTreeMap::new(),
        }
    }

    pub fn attr(mut self, feature: &str, value: Value) -> Self {
        self.attribute_values
            .entry(feature.to_string())
            .or_default()
            .push(value);
        self
    }

    pub fn link(mut self, feature: &str, target: &str) -> Self {
        self.links
            .entry(feature.to_string())
            .or_default()
            .push(target.to_string());
        self
    }

    /// Number of values (attribute or link) in the slot named `feature`.
    pub fn slot_len(&self, feature: &str) -> usize {
        self.attribute_values.get(feature).map_or(0, Vec::len)
            + self.links.get(feature).map_or(0, Vec::len)
    }
}

/// A rooted object graph. Object ids are unique, roots exist and link targets resolve.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ModelInstance {
    conforms_to: ConformsTo,
    objects: BTreeMap<String, ModelObject>,
    roots: Vec<String>,
}

#[derive(Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
struct RawModel {
    conforms_to: ConformsTo,
    roots: Vec<String>,
    objects: Vec<ModelObject>,
}

impl Serialize for ModelInstance {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        RawModel {
            conforms_to: self.conforms_to.clone(),
            roots: self.roots.clone(),
            objects: self.objects.values().cloned().collect(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for ModelInstance {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let raw = RawModel::deserialize(d)?;
        ModelInstance::new(raw.conforms_to, raw.objects, raw.roots).map_err(D::Error::custom)
    }
}

impl ModelInstance {
    pub fn new(
        conforms_to: ConformsTo,
        objects: Vec<ModelObject>,
        roots: Vec<String>,
    ) -> Result<Self, ModelError> {
        let mut map = BTreeMap::new();
        for obj in objects {
            if obj.id.is_empty() || obj.id.chars().any(char::is_whitespace) {
                return Err(ModelError::InvalidIdentifier(obj.id));
            }
            if map.contains_key(&obj.id) {
                return Err(ModelError::DuplicateObject(obj.id));
            }
            map.insert(obj.id.clone(), obj);
        }
        let model = ModelInstance {
            conforms_to,
            objects: map,
            roots,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn empty(conforms_to: ConformsTo) -> Self {
        ModelInstance {
            conforms_to,
            objects: BTreeMap::new(),
            roots: Vec::new(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self, ModelError> {
        let raw: RawModel = serde_json::from_str(text).map_err(ModelError::from_json)?;
        ModelInstance::new(raw.conforms_to, raw.objects, raw.roots)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes")
    }

    pub(crate) fn validate(&self) -> Result<(), ModelError> {
        let mut seen = BTreeSet::new();
        for root in &self.roots {
            if !self.objects.contains_key(root) {
                return Err(ModelError::UnknownRoot(root.clone()));
            }
            if !seen.insert(root) {
                return Err(ModelError::DuplicateRoot(root.clone()));
            }
        }
        for obj in self.objects.values() {
            for (feature, targets) in &obj.links {
                for t in targets {
                    if !self.objects.contains_key(t) {
                        return Err(ModelError::DanglingLink {
                            object: obj.id.clone(),
                            feature: feature.clone(),
                            target: t.clone(),
                        });
                    }
                }
            }
        }
        Ok(())
    }

    pub fn conforms_to(&self) -> &ConformsTo {
        &self.conforms_to
    }

    pub(crate) fn set_conforms_to(&mut self, to: ConformsTo) {
        self.conforms_to = to;
    }

    pub fn objects(&self) -> impl Iterator<Item = &ModelObject> {
        self.objects.values()
    }

    pub fn object(&self, id: &str) -> Option<&ModelObject> {
        self.objects.get(id)
    }

    pub fn len(&self) -> usize {
        self.objects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.objects.is_empty()
    }

    pub fn roots(&self) -> &[String] {
        &self.roots
    }

    pub(crate) fn objects_mut(&mut self) -> &mut BTreeMap<String, ModelObject> {
        &mut self.objects
    }

    /// Removes the given objects, everything they transitively contain under
    /// `mm`'s containment features, and every link pointing at a removed object.
    /// Returns the ids actually removed.
    pub(crate) fn remove_cascading(
        &mut self,
        mm: &Metamodel,
        ids: impl IntoIterator<Item = String>,
    ) -> BTreeSet<String> {
        let mut removed = BTreeSet::new();
        let mut stack: Vec<String> = ids.into_iter().collect();
        while let Some(id) = stack.pop() {
            let Some(obj) = self.objects.remove(&id) else {
                continue;
            };
            for (feature, targets) in &obj.links {
                if mm
                    .feature(&obj.class_name, feature)
                    .is_some_and(|f| f.containment)
                {
                    stack.extend(targets.iter().cloned());
                }
            }
            removed.insert(id);
        }
        if !removed.is_empty() {
            self.roots.retain(|r| !removed.contains(r));
            for obj in self.objects.values_mut() {
                for targets in obj.links.values_mut() {
                    targets.retain(|t| !removed.contains(t));
                }
            }
        }
        removed
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    UnknownClass,
    UnknownFeature,
    MultiplicityLower,
    MultiplicityUpper,
    TypeMismatch,
    ContainmentViolation,
    AbstractInstantiation,
}

impl fmt::Display for ViolationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ViolationKind::UnknownClass => "unknown_class",
            ViolationKind::UnknownFeature => "unknown_feature",
            ViolationKind::MultiplicityLower => "multiplicity_lower",
            ViolationKind::MultiplicityUpper => "multiplicity_upper",
            ViolationKind::TypeMismatch => "type_mismatch",
            ViolationKind::ContainmentViolation => "containment_violation",
            ViolationKind::AbstractInstantiation => "abstract_instantiation",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Violation {
    pub object_id: String,
    pub kind: ViolationKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feature: Option<String>,
    pub detail: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.feature {
            Some(feat) => write!(
                f,
                "{}.{}: {}: {}",
                self.object_id, feat, self.kind, self.detail
            ),
            None => write!(f, "{}: {}: {}", self.object_id, self.kind, self.detail),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConformanceReport {
    pub holds: bool,
    pub violations: Vec<Violation>,
}

impl ConformanceReport {
    fn from_violations(mut violations: Vec<Violation>) -> Self {
        violations.sort_by(|a, b| {
            (
                &a.object_id,
                a.feature.as_deref().unwrap_or(""),
                a.kind,
                &a.detail,
            )
                .cmp(&(
                    &b.object_id,
                    b.feature.as_deref().unwrap_or(""),
                    b.kind,
                    &b.detail,
                ))
        });
        ConformanceReport {
            holds: violations.is_empty(),
            violations,
        }
    }
}

/// Checks `model` against `mm`. Violations are ordered by object id, then feature.
pub fn check_conformance(model: &ModelInstance, mm: &Metamodel) -> ConformanceReport {
    let mut out = Vec::new();
    let mut push = |object: &str, kind, feature: Option<&str>, detail: String| {
        out.push(Violation {
            object_id: object.to_string(),
            kind,
            feature: feature.map(str::to_string),
            detail,
        })
    };

    // containment parents: child -> containers
    let mut containers: BTreeMap<&str, Vec<&str>> = BTreeMap::new();

    for obj in model.objects() {
        let Some(class) = mm.class(&obj.class_name) else {
            push(
                &obj.id,
                ViolationKind::UnknownClass,
                None,
                format!(
                    "class `{}` not in metamodel `{}`",
                    obj.class_name,
                    mm.name()
                ),
            );
            continue;
        };
        if class.is_abstract {
            push(
                &obj.id,
                ViolationKind::AbstractInstantiation,
                None,
                format!("class `{}` is abstract", obj.class_name),
            );
        }
        let features = mm
            .effective_features(&obj.class_name)
            .expect("class resolved above");

        for name in obj.attribute_values.keys().chain(obj.links.keys()) {
            if !features.iter().any(|f| &f.name == name) {
                push(
                    &obj.id,
                    ViolationKind::UnknownFeature,
                    Some(name),
                    format!("`{}` has no feature `{name}`", obj.class_name),
                );
            }
        }

        for f in &features {
            let attrs = obj.attribute_values.get(&f.name);
            let links = obj.links.get(&f.name);
            match f.kind {
                FeatureKind::Attribute => {
                    if links.is_some_and(|l| !l.is_empty()) {
                        push(
                            &obj.id,
                            ViolationKind::TypeMismatch,
                            Some(&f.name),
                            "links given for an attribute".to_string(),
                        );
                    }
                    let prim = f.primitive().expect("validated attribute type");
                    for v in attrs.into_iter().flatten() {
                        if !prim.admits(v) {
                            push(
                                &obj.id,
                                ViolationKind::TypeMismatch,
                                Some(&f.name),
                                format!("value {v} is not a {}", prim.as_str()),
                            );
                        }
                    }
                }
                FeatureKind::Reference => {
                    if attrs.is_some_and(|a| !a.is_empty()) {
                        push(
                            &obj.id,
                            ViolationKind::TypeMismatch,
                            Some(&f.name),
                            "attribute values given for a reference".to_string(),
                        );
                    }
                    for target in links.into_iter().flatten() {
                        let target_class = model.object(target).map(|t| t.class_name.as_str());
                        match target_class {
                            Some(tc) if mm.is_subclass(tc, &f.value_type) => {}
                            Some(tc) => push(
                                &obj.id,
                                ViolationKind::TypeMismatch,
                                Some(&f.name),
                                format!(
                                    "target `{target}` is a `{tc}`, expected `{}`",
                                    f.value_type
                                ),
                            ),
                            None => push(
                                &obj.id,
                                ViolationKind::TypeMismatch,
                                Some(&f.name),
                                format!("target `{target}` does not exist"),
                            ),
                        }
                        if f.containment {
                            containers.entry(target).or_default().push(&obj.id);
                        }
                    }
                }
            }
            let count = obj.slot_len(&f.name);
            if count < f.lower as usize {
                push(
                    &obj.id,
                    ViolationKind::MultiplicityLower,
                    Some(&f.name),
                    format!("{count} value(s), at least {} required", f.lower),
                );
            }
            if !f.upper.admits(count) {
                push(
                    &obj.id,
                    ViolationKind::MultiplicityUpper,
                    Some(&f.name),
                    format!("{count} value(s), at most {} allowed", f.upper),
                );
            }
        }
    }

    let roots: BTreeSet<&str> = model.roots().iter().map(String::as_str).collect();
    for obj in model.objects() {
        let parents = containers.get(obj.id.as_str()).map_or(0, Vec::len);
        let is_root = roots.contains(obj.id.as_str());
        if is_root && parents > 0 {
            push(
                &obj.id,
                ViolationKind::ContainmentViolation,
                None,
                "root object is contained".to_string(),
            );
        } else if parents > 1 {
            push(
                &obj.id,
                ViolationKind::ContainmentViolation,
                None,
                format!("contained {parents} times"),
            );
        } else if !is_root && parents == 0 {
            push(
                &obj.id,
                ViolationKind::ContainmentViolation,
                None,
                "neither a root nor contained".to_string(),
            );
        }
    }

    ConformanceReport::from_violations(out)
}

/// Objects whose class is `class` or specializes it, in id order.
pub fn extent<'m>(
    model: &'m ModelInstance,
    mm: &Metamodel,
    class: &str,
) -> Result<Vec<&'m ModelObject>, ModelError> {
    if !mm.contains_class(class) {
        return Err(ModelError::UnknownClass(class.to_string()));
    }
    Ok(model
        .objects()
        .filter(|o| mm.is_subclass(&o.class_name, class))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    #[test]
    fn effective_features_inherits_from_port() {
        let mm = fixtures::mm_v1();
        let names: Vec<_> = mm
            .effective_features("InPort")
            .unwrap()
            .iter()
            .map(|f| f.signature())
            .collect();
        assert_eq!(names, vec!["name: string[1..1]"]);
        let port: Vec<_> = mm
            .effective_features("Port")
            .unwrap()
            .iter()
            .map(|f| f.signature())
            .collect();
        assert_eq!(port, vec!["name: string[1..1]"]);
        assert_eq!(
            mm.effective_features("Nope").unwrap_err(),
            ModelError::UnknownClass("Nope".into())
        );
    }

    #[test]
    fn inherited_then_own_order() {
        let mm = Metamodel::new(
            "M",
            vec![
                MetaClass::new("A").with(Feature::attribute(
                    "a",
                    Primitive::Int,
                    0,
                    Upper::Bounded(1),
                )),
                MetaClass::new("B").with(Feature::attribute(
                    "b",
                    Primitive::Int,
                    0,
                    Upper::Bounded(1),
                )),
                MetaClass::new("C")
                    .extends("A")
                    .extends("B")
                    .with(Feature::attribute(
                        "c",
                        Primitive::Int,
                        0,
                        Upper::Bounded(1),
                    )),
            ],
        )
        .unwrap();
        let names: Vec<_> = mm
            .effective_features("C")
            .unwrap()
            .iter()
            .map(|f| f.name.as_str())
            .collect();
        assert_eq!(names, ["a", "b", "c"]);
    }

    #[test]
    fn diamond_inheritance_is_not_a_duplicate() {
        let mm = Metamodel::new(
            "M",
            vec![
                MetaClass::new("A").with(Feature::attribute(
                    "x",
                    Primitive::Int,
                    0,
                    Upper::Bounded(1),
                )),
                MetaClass::new("B").extends("A"),
                MetaClass::new("C").extends("A"),
                MetaClass::new("D").extends("B").extends("C"),
            ],
        )
        .unwrap();
        assert_eq!(mm.effective_features("D").unwrap().len(), 1);
    }

    #[test]
    fn metamodel_invariants_rejected() {
        let dup = Metamodel::new("M", vec![MetaClass::new("A"), MetaClass::new("A")]);
        assert_eq!(dup.unwrap_err(), ModelError::DuplicateClass("A".into()));

        let cycle = Metamodel::new(
            "M",
            vec![
                MetaClass::new("A").extends("B"),
                MetaClass::new("B").extends("A"),
            ],
        );
        assert!(matches!(cycle, Err(ModelError::InheritanceCycle(_))));

        let unresolved = Metamodel::new(
            "M",
            vec![MetaClass::new("A").with(Feature::reference(
                "r",
                "Ghost",
                0,
                Upper::Unbounded,
                false,
            ))],
        );
        assert!(matches!(
            unresolved,
            Err(ModelError::UnresolvedFeatureType { .. })
        ));

        let shadow = Metamodel::new(
            "M",
            vec![
                MetaClass::new("A").with(Feature::attribute(
                    "x",
                    Primitive::Int,
                    0,
                    Upper::Bounded(1),
                )),
                MetaClass::new("B").extends("A").with(Feature::attribute(
                    "x",
                    Primitive::Int,
                    0,
                    Upper::Bounded(1),
                )),
            ],
        );
        assert!(matches!(shadow, Err(ModelError::DuplicateFeature { .. })));

        let bounds = Metamodel::new(
            "M",
            vec![MetaClass::new("A").with(Feature::attribute(
                "x",
                Primitive::Int,
                3,
                Upper::Bounded(2),
            ))],
        );
        assert!(matches!(bounds, Err(ModelError::InvalidFeature { .. })));

        let mut bad = Feature::attribute("x", Primitive::Int, 0, Upper::Bounded(1));
        bad.containment = true;
        let containment = Metamodel::new("M", vec![MetaClass::new("A").with(bad)]);
        assert!(matches!(
            containment,
            Err(ModelError::InvalidFeature { .. })
        ));
    }

    #[test]
    fn unbounded_serializes_as_minus_one() {
        let f = Feature::reference("r", "A", 0, Upper::Unbounded, true);
        let json = serde_json::to_value(&f).unwrap();
        assert_eq!(json["upper"], -1);
        let back: Feature = serde_json::from_value(json).unwrap();
        assert_eq!(back, f);
        assert_eq!(Upper::Unbounded.to_string(), "*");
        assert!(serde_json::from_str::<Upper>("0").is_err());
    }

    #[test]
    fn unknown_keys_rejected() {
        let text = r#"{"name":"M","classes":[],"extra":1}"#;
        assert!(matches!(
            Metamodel::from_json(text),
            Err(ModelError::Json { .. })
        ));
        let text =
            r#"{"conformsTo":{"multiverse":"MM","version":"1.0"},"roots":[],"objects":[],"x":0}"#;
        assert!(ModelInstance::from_json(text).is_err());
    }

    #[test]
    fn model_construction_invariants() {
        let to = ConformsTo {
            multiverse: "MM".into(),
            version: "1.0".into(),
        };
        let dup = ModelInstance::new(
            to.clone(),
            vec![
                ModelObject::new("a", "Service"),
                ModelObject::new("a", "Service"),
            ],
            vec![],
        );
        assert_eq!(dup.unwrap_err(), ModelError::DuplicateObject("a".into()));
        let root = ModelInstance::new(to.clone(), vec![], vec!["x".into()]);
        assert_eq!(root.unwrap_err(), ModelError::UnknownRoot("x".into()));
        let dangling = ModelInstance::new(
            to,
            vec![ModelObject::new("a", "Service").link("inPorts", "zz")],
            vec!["a".into()],
        );
        assert!(matches!(dangling, Err(ModelError::DanglingLink { .. })));
    }

    #[test]
    fn event_logger_conforms_to_v1() {
        let report = check_conformance(&fixtures::event_logger(), &fixtures::mm_v1());
        assert!(report.holds, "{:?}", report.violations);
        let report = check_conformance(&fixtures::converter(), &fixtures::mm_v1());
        assert!(report.holds, "{:?}", report.violations);
    }

    #[test]
    fn empty_model_conforms_to_anything() {
        let model = ModelInstance::empty(ConformsTo {
            multiverse: "MM".into(),
            version: "1.0".into(),
        });
        assert!(check_conformance(&model, &fixtures::mm_v1()).holds);
        assert!(check_conformance(&model, &fixtures::mm_v2()).holds);
    }

    #[test]
    fn v1_model_breaks_against_v2() {
        let report = check_conformance(&fixtures::event_logger(), &fixtures::mm_v2());
        assert!(!report.holds);
        assert!(report
            .violations
            .iter()
            .any(|v| v.kind == ViolationKind::UnknownFeature
                && v.feature.as_deref() == Some("inPorts")));
    }

    #[test]
    fn violation_kinds_detected() {
        let mm = fixtures::mm_v1();
        let to = ConformsTo {
            multiverse: "MM".into(),
            version: "1.0".into(),
        };
        let model = ModelInstance::new(
            to,
            vec![
                ModelObject::new("a", "Service")
                    .attr("name", Value::Int(3))
                    .link("inPorts", "p")
                    .link("outPorts", "p"),
                ModelObject::new("b", "Ghost"),
                ModelObject::new("p", "Port").attr("name", Value::Str("p".into())),
                ModelObject::new("s2", "Service"),
            ],
            vec!["a".into(), "b".into(), "s2".into()],
        )
        .unwrap();
        let report = check_conformance(&model, &mm);
        let kinds: BTreeSet<_> = report.violations.iter().map(|v| v.kind).collect();
        for k in [
            ViolationKind::UnknownClass,
            ViolationKind::TypeMismatch,
            ViolationKind::AbstractInstantiation,
            ViolationKind::ContainmentViolation,
            ViolationKind::MultiplicityLower,
        ] {
            assert!(kinds.contains(&k), "missing {k}: {:?}", report.violations);
        }
        // ordering is by object id then feature
        let ids: Vec<_> = report
            .violations
            .iter()
            .map(|v| v.object_id.as_str())
            .collect();
        let mut sorted = ids.clone();
        sorted.sort();
        assert_eq!(ids, sorted);
        assert_eq!(report, check_conformance(&model, &mm));
    }

    #[test]
    fn multiplicity_upper_detected() {
        let mm = fixtures::mm_v2();
        let report = check_conformance(&fixtures::converter_v2_draft(), &mm);
        assert!(report
            .violations
            .iter()
            .any(|v| v.kind == ViolationKind::MultiplicityUpper && v.object_id == "converter"));
    }

    #[test]
    fn extent_walks_subtypes() {
        let mm = fixtures::mm_v1();
        let model = fixtures::event_logger();
        let ports: Vec<_> = extent(&model, &mm, "Port")
            .unwrap()
            .iter()
            .map(|o| o.id.clone())
            .collect();
        assert_eq!(ports, ["logIn", "logOut"]);
        let services: Vec<_> = extent(&model, &mm, "Service")
            .unwrap()
            .iter()
            .map(|o| o.id.clone())
            .collect();
        assert_eq!(services, ["eventLogger"]);
        let empty = ModelInstance::empty(model.conforms_to().clone());
        assert!(extent(&empty, &mm, "Port").unwrap().is_empty());
        assert!(extent(&model, &mm, "Nope").is_err());
    }

    #[test]
    fn attribute_slots_round_trip_through_json() {
        let model = fixtures::event_logger();
        let back = ModelInstance::from_json(&model.to_json()).unwrap();
        assert_eq!(back, model);
        let mm = fixtures::mm_v1();
        let back = Metamodel::from_json(&mm.to_json()).unwrap();
        assert_eq!(back, mm);
    }
}
