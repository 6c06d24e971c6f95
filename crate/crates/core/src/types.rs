//! Multiverse types: which classes stay unchanged across a set of versions,
//! and the `C@(v)` specializations of those that do not.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{is_label, Multiverse};
use crate::model::{is_identifier, Feature, Metamodel};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TypeError {
    #[error("type scope is empty")]
    EmptyScope,
    #[error("version `{0}` listed twice in the scope")]
    DuplicateVersion(String),
    #[error("slice `{version}` has no artifact `{artifact}`")]
    MissingArtifact { version: String, artifact: String },
    #[error("artifact `{artifact}` in slice `{version}` is a {kind}, not a metamodel")]
    NotAMetamodel {
        version: String,
        artifact: String,
        kind: String,
    },
    #[error(transparent)]
    Graph(#[from] crate::graph::GraphError),
    #[error("malformed type reference `{0}`")]
    MalformedRef(String),
    #[error("unknown type `{0}`")]
    UnknownType(String),
    #[error("version `{version}` is outside the scope {}", .scope.join(", "))]
    VersionNotInScope { version: String, scope: Vec<String> },
    #[error("{}: needs a version specialization, available in {}", subject(.class, .feature), .versions.join(", "))]
    NeedsVersionSpecialization {
        class: String,
        feature: Option<String>,
        versions: Vec<String>,
    },
    #[error("unknown feature `{feature}` on {class}")]
    UnknownFeature { class: String, feature: String },
}

fn subject(class: &str, feature: &Option<String>) -> String {
    match feature {
        Some(f) => format!("{class}.{f}"),
        None => class.to_string(),
    }
}

impl TypeError {
    /// Stable short code, e.g. `needs-version-specialization`.
    pub fn code(&self) -> &'static str {
        match self {
            TypeError::NeedsVersionSpecialization { .. } => "needs-version-specialization",
            TypeError::UnknownFeature { .. } => "unknown-feature",
            TypeError::UnknownType(_)
            | TypeError::VersionNotInScope { .. }
            | TypeError::MalformedRef(_) => "unknown-type",
            _ => "invalid-scope",
        }
    }
}

/// `C` (generic) or `C@(v)`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TypeRef {
    pub class: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub version: Option<String>,
}

impl TypeRef {
    pub fn generic(class: &str) -> Self {
        TypeRef {
            class: class.to_string(),
            version: None,
        }
    }

    pub fn at(class: &str, version: &str) -> Self {
        TypeRef {
            class: class.to_string(),
            version: Some(version.to_string()),
        }
    }
}

impl fmt::Display for TypeRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.version {
            Some(v) => write!(f, "{}@({v})", self.class),
            None => f.write_str(&self.class),
        }
    }
}

impl FromStr for TypeRef {
    type Err = TypeError;

    fn from_str(s: &str) -> Result<Self, TypeError> {
        let bad = || TypeError::MalformedRef(s.to_string());
        let r = match s.split_once('@') {
            None => TypeRef::generic(s),
            Some((c, rest)) => {
                let v = rest
                    .strip_prefix('(')
                    .and_then(|r| r.strip_suffix(')'))
                    .ok_or_else(bad)?;
                if !is_label(v) {
                    return Err(bad());
                }
                TypeRef::at(c, v)
            }
        };
        if !is_identifier(&r.class) {
            return Err(bad());
        }
        Ok(r)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct MultiverseType {
    pub class_name: String,
    /// Scope versions containing the class.
    pub present_in: Vec<String>,
    /// Whether the generic type `C` exists (class present in every scope version).
    pub generic: bool,
    /// Flattened features identical in every scope version.
    pub generic_features: Vec<Feature>,
    /// Per present version: flattened features minus the generic ones.
    pub per_version: BTreeMap<String, Vec<Feature>>,
    /// Per present version: direct supertypes.
    pub supertypes: BTreeMap<String, Vec<String>>,
    /// Per present version: all proper ancestors.
    pub ancestors: BTreeMap<String, BTreeSet<String>>,
    pub stable: bool,
}

impl MultiverseType {
    /// Full flattened signature in `version`.
    pub fn features_at(&self, version: &str) -> Option<Vec<&Feature>> {
        let own = self.per_version.get(version)?;
        let mut all: Vec<&Feature> = self.generic_features.iter().chain(own).collect();
        all.sort_by(|a, b| a.name.cmp(&b.name));
        Some(all)
    }

    fn specializes_at(&self, version: &str, sup: &str) -> bool {
        self.class_name == sup || self.ancestors.get(version).is_some_and(|a| a.contains(sup))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct TypeReport {
    pub multiverse: String,
    pub scope: Vec<String>,
    pub entries: BTreeMap<String, MultiverseType>,
    /// Class -> scope versions lacking it.
    pub absent: BTreeMap<String, Vec<String>>,
}

/// Builds the report for metamodel `artifact` over the scope `versions`.
pub fn compute_type_report(
    mv: &Multiverse,
    artifact: &str,
    versions: &[String],
) -> Result<TypeReport, TypeError> {
    let mut mms = Vec::new();
    for v in versions {
        let slice = mv.slice(v)?;
        let a = slice
            .artifact(artifact)
            .ok_or_else(|| TypeError::MissingArtifact {
                version: v.clone(),
                artifact: artifact.to_string(),
            })?;
        let mm = a.as_metamodel().ok_or_else(|| TypeError::NotAMetamodel {
            version: v.clone(),
            artifact: artifact.to_string(),
            kind: a.kind().to_string(),
        })?;
        mms.push((v.clone(), mm));
    }
    type_report_of(mv.name(), &mms)
}

/// Builds the report over explicit `(version, metamodel)` pairs, in scope order.
pub fn type_report_of(
    multiverse: &str,
    scope: &[(String, &Metamodel)],
) -> Result<TypeReport, TypeError> {
    if scope.is_empty() {
        return Err(TypeError::EmptyScope);
    }
    let mut seen = BTreeSet::new();
    for (v, _) in scope {
        if !seen.insert(v) {
            return Err(TypeError::DuplicateVersion(v.clone()));
        }
    }
    let all_classes: BTreeSet<&str> = scope.iter().flat_map(|(_, mm)| mm.class_names()).collect();
    let mut entries = BTreeMap::new();
    let mut absent = BTreeMap::new();
    for class in all_classes {
        let mut present_in = Vec::new();
        let mut missing = Vec::new();
        let mut flattened: Vec<(&str, Vec<Feature>)> = Vec::new();
        let mut supertypes = BTreeMap::new();
        let mut ancestors = BTreeMap::new();
        for (v, mm) in scope {
            let Some(c) = mm.class(class) else {
                missing.push(v.clone());
                continue;
            };
            present_in.push(v.clone());
            let mut feats: Vec<Feature> = mm
                .effective_features(class)
                .expect("validated metamodel")
                .into_iter()
                .cloned()
                .collect();
            feats.sort_by(|a, b| a.name.cmp(&b.name));
            flattened.push((v, feats));
            let mut direct = c.supertypes.clone();
            direct.sort();
            supertypes.insert(v.clone(), direct);
            ancestors.insert(
                v.clone(),
                mm.ancestors(class)
                    .into_iter()
                    .filter(|a| *a != class)
                    .map(str::to_string)
                    .collect(),
            );
        }
        let generic = missing.is_empty();
        let generic_features: Vec<Feature> = if generic {
            flattened[0]
                .1
                .iter()
                .filter(|f| flattened.iter().all(|(_, fs)| fs.contains(f)))
                .cloned()
                .collect()
        } else {
            Vec::new()
        };
        let per_version: BTreeMap<String, Vec<Feature>> = flattened
            .iter()
            .map(|(v, fs)| {
                let own = fs
                    .iter()
                    .filter(|f| !generic_features.contains(f))
                    .cloned()
                    .collect();
                (v.to_string(), own)
            })
            .collect();
        let same_supertypes = supertypes.values().collect::<BTreeSet<_>>().len() <= 1;
        let stable = generic && same_supertypes && per_version.values().all(Vec::is_empty);
        if !missing.is_empty() {
            absent.insert(class.to_string(), missing);
        }
        entries.insert(
            class.to_string(),
            MultiverseType {
                class_name: class.to_string(),
                present_in,
                generic,
                generic_features,
                per_version,
                supertypes,
                ancestors,
                stable,
            },
        );
    }
    Ok(TypeReport {
        multiverse: multiverse.to_string(),
        scope: scope.iter().map(|(v, _)| v.clone()).collect(),
        entries,
        absent,
    })
}

impl TypeReport {
    pub fn entry(&self, class: &str) -> Result<&MultiverseType, TypeError> {
        self.entries
            .get(class)
            .ok_or_else(|| TypeError::UnknownType(class.to_string()))
    }

    /// Checks that `t` names a type of this report.
    pub fn resolve(&self, t: &TypeRef) -> Result<&MultiverseType, TypeError> {
        let entry = self.entry(&t.class)?;
        match &t.version {
            Some(v) => {
                if !self.scope.contains(v) {
                    return Err(TypeError::VersionNotInScope {
                        version: v.clone(),
                        scope: self.scope.clone(),
                    });
                }
                if !entry.present_in.contains(v) {
                    return Err(TypeError::UnknownType(t.to_string()));
                }
            }
            None => {
                if !entry.generic {
                    return Err(TypeError::NeedsVersionSpecialization {
                        class: t.class.clone(),
                        feature: None,
                        versions: entry.present_in.clone(),
                    });
                }
            }
        }
        Ok(entry)
    }

    /// Subtyping between multiverse types. Versioned types only relate within
    /// their own version, and to generic supertypes.
    pub fn is_subtype(&self, t1: &TypeRef, t2: &TypeRef) -> Result<bool, TypeError> {
        let a = self.resolve(t1)?;
        self.resolve(t2)?;
        Ok(match (&t1.version, &t2.version) {
            (Some(v), Some(w)) => v == w && a.specializes_at(v, &t2.class),
            (Some(v), None) => a.specializes_at(v, &t2.class),
            (None, None) => self.scope.iter().all(|v| a.specializes_at(v, &t2.class)),
            (None, Some(_)) => false,
        })
    }

    /// Looks up `feature` on `t`. On a generic type only generic features
    /// resolve; the others need a version specialization.
    pub fn resolve_feature(&self, t: &TypeRef, feature: &str) -> Result<&Feature, TypeError> {
        let entry = self.resolve(t)?;
        let found = match &t.version {
            Some(v) => entry
                .features_at(v)
                .and_then(|fs| fs.into_iter().find(|f| f.name == feature)),
            None => entry.generic_features.iter().find(|f| f.name == feature),
        };
        if let Some(f) = found {
            return Ok(f);
        }
        let offering: Vec<String> = entry
            .per_version
            .iter()
            .filter(|(_, fs)| fs.iter().any(|f| f.name == feature))
            .map(|(v, _)| v.clone())
            .collect();
        let ordered: Vec<String> = self
            .scope
            .iter()
            .filter(|v| offering.contains(v))
            .cloned()
            .collect();
        if t.version.is_none() && !ordered.is_empty() {
            Err(TypeError::NeedsVersionSpecialization {
                class: t.class.clone(),
                feature: Some(feature.to_string()),
                versions: ordered,
            })
        } else {
            Err(TypeError::UnknownFeature {
                class: t.to_string(),
                feature: feature.to_string(),
            })
        }
    }

    /// Type of the values reached through reference `f` from `from`: the
    /// target class in the same version, or generic for generic sources.
    pub fn target_type(&self, from: &TypeRef, f: &Feature) -> TypeRef {
        TypeRef {
            class: f.value_type.clone(),
            version: from.version.clone(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

fn feature_names(fs: &[Feature]) -> String {
    if fs.is_empty() {
        "-".into()
    } else {
        fs.iter()
            .map(|f| f.name.as_str())
            .collect::<Vec<_>>()
            .join(", ")
    }
}

impl fmt::Display for TypeReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{} [{}]", self.multiverse, self.scope.join(", "))?;
        let rows: Vec<[String; 4]> = self
            .entries
            .values()
            .map(|e| {
                let per = e
                    .per_version
                    .iter()
                    .filter(|(_, fs)| !fs.is_empty() || !e.generic)
                    .map(|(v, fs)| format!("{v}: {}", feature_names(fs)))
                    .collect::<Vec<_>>();
                let mut per = if per.is_empty() {
                    "-".to_string()
                } else {
                    per.join("; ")
                };
                if let Some(missing) = self.absent.get(&e.class_name) {
                    per.push_str(&format!(" (absent in {})", missing.join(", ")));
                }
                [
                    e.class_name.clone(),
                    if e.stable { "stable" } else { "evolving" }.to_string(),
                    if e.generic {
                        feature_names(&e.generic_features)
                    } else {
                        "(none)".into()
                    },
                    per,
                ]
            })
            .collect();
        let header = [
            "class",
            "stable?",
            "generic features",
            "per-version features",
        ];
        let mut widths = header.map(str::len);
        for r in &rows {
            for (w, c) in widths.iter_mut().zip(r) {
                *w = (*w).max(c.chars().count());
            }
        }
        let line = |cells: [&str; 4]| {
            format!(
                "{:w0$} | {:w1$} | {:w2$} | {}",
                cells[0],
                cells[1],
                cells[2],
                cells[3],
                w0 = widths[0],
                w1 = widths[1],
                w2 = widths[2]
            )
        };
        writeln!(f, "{}", line(header))?;
        for r in &rows {
            writeln!(f, "{}", line([&r[0], &r[1], &r[2], &r[3]]).trim_end())?;
        }
        Ok(())
    }
}
