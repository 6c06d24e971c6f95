//! Seeded generators shared by the acceptance suite and the property tests.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use mvx_core::coevolution::{CrossLink, LinkType};
use mvx_core::delta::{apply_delta, Delta, DeltaHints, DeltaOp, MergeHint};
use mvx_core::graph::{Artifact, Blob};
use mvx_core::model::{
    ConformsTo, Feature, FeatureKind, MetaClass, Metamodel, ModelInstance, ModelObject, Primitive,
    Upper, Value,
};
use mvx_core::store::Repository;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Rand = ChaCha8Rng;

pub fn rng(seed: u64) -> Rand {
    ChaCha8Rng::seed_from_u64(seed)
}

const PRIMITIVES: [Primitive; 3] = [Primitive::String, Primitive::Int, Primitive::Bool];

pub fn value(rng: &mut Rand, p: Primitive) -> Value {
    match p {
        Primitive::String => Value::Str(format!("s{}", rng.gen_range(0..100))),
        Primitive::Int => Value::Int(rng.gen_range(-50..50)),
        Primitive::Bool => Value::Bool(rng.gen()),
    }
}

fn upper_at_least(rng: &mut Rand, lower: u32) -> Upper {
    match rng.gen_range(0..4) {
        0 => Upper::Unbounded,
        k => Upper::Bounded(lower.max(1) + k - 1),
    }
}

fn all_feature_names(mm: &Metamodel) -> BTreeSet<String> {
    mm.classes()
        .flat_map(|c| c.features.iter().map(|f| f.name.clone()))
        .collect()
}

fn fresh(rng: &mut Rand, prefix: &str, taken: &BTreeSet<String>) -> String {
    loop {
        let n = format!("{prefix}{}", rng.gen_range(0..100_000));
        if !taken.contains(&n) {
            return n;
        }
    }
}

fn attribute(rng: &mut Rand, name: &str, allow_required: bool) -> Feature {
    let lower = if allow_required {
        rng.gen_range(0..=1)
    } else {
        0
    };
    let p = *PRIMITIVES.choose(rng).unwrap();
    Feature::attribute(name, p, lower, upper_at_least(rng, lower))
}

fn reference(rng: &mut Rand, name: &str, target: &str) -> Feature {
    let containment = rng.gen_bool(0.5);
    Feature::reference(name, target, 0, upper_at_least(rng, 0), containment)
}

/// A valid metamodel named `MM` with 1..=`max_classes` classes. References
/// are optional so that conforming models always exist.
pub fn metamodel(rng: &mut Rand, max_classes: usize) -> Metamodel {
    let n = rng.gen_range(1..=max_classes);
    let names: Vec<String> = (0..n).map(|i| format!("C{i}")).collect();
    let mut feature_no = 0;
    let mut classes = Vec::new();
    for i in 0..n {
        let mut c = MetaClass::new(&names[i]);
        if i > 0 && rng.gen_bool(0.2) {
            c = c.abstract_class();
        }
        if i > 0 && rng.gen_bool(0.4) {
            c = c.extends(&names[rng.gen_range(0..i)]);
        }
        for _ in 0..rng.gen_range(0..=3) {
            feature_no += 1;
            let name = format!("f{feature_no}");
            let f = if rng.gen_bool(0.5) {
                attribute(rng, &name, true)
            } else {
                let t = names.choose(rng).unwrap().clone();
                reference(rng, &name, &t)
            };
            c = c.with(f);
        }
        classes.push(c);
    }
    Metamodel::new("MM", classes).expect("generated metamodel is valid")
}

fn concrete_subclasses(mm: &Metamodel, class: &str) -> Vec<String> {
    mm.descendants(class)
        .into_iter()
        .filter(|c| !mm.class(c).unwrap().is_abstract)
        .map(str::to_string)
        .collect()
}

fn slot_count(rng: &mut Rand, f: &Feature, cap: u32) -> u32 {
    let hi = match f.upper {
        Upper::Bounded(u) => u.min(f.lower + cap),
        Upper::Unbounded => f.lower + cap,
    };
    rng.gen_range(f.lower..=hi.max(f.lower))
}

/// A model with at most `max_objects` objects conforming to `mm` (empty if
/// `mm` has no concrete class).
pub fn model(
    rng: &mut Rand,
    mm: &Metamodel,
    conforms_to: ConformsTo,
    max_objects: usize,
) -> ModelInstance {
    let concrete: Vec<String> = mm
        .classes()
        .filter(|c| !c.is_abstract)
        .map(|c| c.name.clone())
        .collect();
    if concrete.is_empty() {
        return ModelInstance::empty(conforms_to);
    }
    let budget = rng.gen_range(1..=max_objects);
    let mut objects: Vec<ModelObject> = Vec::new();
    let mut roots = Vec::new();
    for _ in 0..rng.gen_range(1..=budget.min(2)) {
        let id = format!("o{}", objects.len());
        objects.push(ModelObject::new(&id, concrete.choose(rng).unwrap()));
        roots.push(id);
    }
    let mut i = 0;
    while i < objects.len() {
        let class = objects[i].class_name.clone();
        let features: Vec<Feature> = mm
            .effective_features(&class)
            .unwrap()
            .into_iter()
            .cloned()
            .collect();
        for f in &features {
            match f.kind {
                FeatureKind::Attribute => {
                    let p = f.primitive().unwrap();
                    for _ in 0..slot_count(rng, f, 2) {
                        let v = value(rng, p);
                        objects[i] = objects[i].clone().attr(&f.name, v);
                    }
                }
                FeatureKind::Reference if f.containment => {
                    let kinds = concrete_subclasses(mm, &f.value_type);
                    if kinds.is_empty() {
                        continue;
                    }
                    let k = slot_count(rng, f, 2).min((budget - objects.len().min(budget)) as u32);
                    for _ in 0..k {
                        let id = format!("o{}", objects.len());
                        objects.push(ModelObject::new(&id, kinds.choose(rng).unwrap()));
                        objects[i] = objects[i].clone().link(&f.name, &id);
                    }
                }
                FeatureKind::Reference => {}
            }
        }
        i += 1;
    }
    for i in 0..objects.len() {
        let class = objects[i].class_name.clone();
        for f in mm.effective_features(&class).unwrap() {
            if f.kind != FeatureKind::Reference || f.containment {
                continue;
            }
            let candidates: Vec<String> = objects
                .iter()
                .filter(|o| mm.is_subclass(&o.class_name, &f.value_type))
                .map(|o| o.id.clone())
                .collect();
            let k = (slot_count(rng, f, 2) as usize).min(candidates.len());
            for t in candidates.choose_multiple(rng, k) {
                objects[i] = objects[i].clone().link(&f.name, t);
            }
        }
    }
    ModelInstance::new(conforms_to, objects, roots).expect("generated model is well-formed")
}

/// Damages a model so that it may no longer conform: an extra slot, an
/// object of an unknown class, or a dropped required attribute.
pub fn perturb(rng: &mut Rand, model: &ModelInstance) -> ModelInstance {
    let mut objects: Vec<ModelObject> = model.objects().cloned().collect();
    let roots = model.roots().to_vec();
    if objects.is_empty() {
        return model.clone();
    }
    let i = rng.gen_range(0..objects.len());
    match rng.gen_range(0..3) {
        0 => {
            objects[i] = objects[i].clone().attr("bogus", Value::Int(1));
        }
        1 => {
            objects[i].class_name = "Ghost".into();
        }
        _ => {
            let keys: Vec<String> = objects[i].attribute_values.keys().cloned().collect();
            if let Some(k) = keys.choose(rng) {
                objects[i].attribute_values.remove(k);
            }
        }
    }
    ModelInstance::new(model.conforms_to().clone(), objects, roots).unwrap()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Any valid op.
    Any,
    /// Ops whose migration never needs a manual model edit.
    Decidable,
}

#[derive(Debug, Clone)]
pub struct Evolution {
    pub delta: Delta,
    pub after: Metamodel,
    pub hints: DeltaHints,
}

/// A delta of 1..=`max_ops` ops applicable to `mm`. Each class is the
/// subject of at most one op and new names are fresh, so the recorded hints
/// describe the change exactly.
pub fn evolve(rng: &mut Rand, mm: &Metamodel, max_ops: usize, mode: Mode) -> Evolution {
    let mut cur = mm.clone();
    let mut ops = Vec::new();
    let mut hints = DeltaHints::default();
    let mut touched: BTreeSet<String> = BTreeSet::new();
    let mut names: BTreeSet<String> = mm.class_names().map(str::to_string).collect();
    let mut features = all_feature_names(mm);
    let target_ops = rng.gen_range(1..=max_ops);
    let mut attempts = 0;
    while ops.len() < target_ops && attempts < 200 {
        attempts += 1;
        let Some(op) = propose(rng, &cur, &touched, &mut names, &mut features, mode) else {
            continue;
        };
        let Ok(next) = apply_delta(&cur, &Delta::new("a", "b", vec![op.clone()])) else {
            continue;
        };
        match &op {
            DeltaOp::RenameClass { from, to } => {
                hints.renames.insert(from.clone(), to.clone());
                touched.insert(to.clone());
            }
            DeltaOp::RenameFeature { class, from, to } => {
                hints.renames.insert(format!("{class}.{from}"), to.clone());
            }
            DeltaOp::MergeFeatures {
                class,
                sources,
                target,
            } => hints.merges.push(MergeHint {
                class: class.clone(),
                sources: sources.clone(),
                target: target.name.clone(),
            }),
            _ => {}
        }
        touched.insert(op.class().to_string());
        ops.push(op);
        cur = next;
    }
    Evolution {
        delta: Delta::new("1", "2", ops),
        after: cur,
        hints,
    }
}

fn propose(
    rng: &mut Rand,
    mm: &Metamodel,
    touched: &BTreeSet<String>,
    names: &mut BTreeSet<String>,
    features: &mut BTreeSet<String>,
    mode: Mode,
) -> Option<DeltaOp> {
    let all: Vec<String> = mm.class_names().map(str::to_string).collect();
    let free: Vec<String> = all
        .iter()
        .filter(|c| !touched.contains(*c))
        .cloned()
        .collect();
    let any = mode == Mode::Any;
    let op = match rng.gen_range(0..9) {
        0 => {
            let name = fresh(rng, "N", names);
            names.insert(name.clone());
            let mut c = MetaClass::new(&name);
            if !all.is_empty() && rng.gen_bool(0.4) {
                c = c.extends(all.choose(rng).unwrap());
            }
            for _ in 0..rng.gen_range(0..=2) {
                let f = fresh(rng, "g", features);
                features.insert(f.clone());
                c = c.with(if rng.gen_bool(0.5) || all.is_empty() {
                    attribute(rng, &f, true)
                } else {
                    let t = all.choose(rng).unwrap().clone();
                    reference(rng, &f, &t)
                });
            }
            DeltaOp::AddClass { class: c }
        }
        1 => DeltaOp::DeleteClass {
            class: free.choose(rng)?.clone(),
        },
        2 => {
            let to = fresh(rng, "R", names);
            names.insert(to.clone());
            DeltaOp::RenameClass {
                from: free.choose(rng)?.clone(),
                to,
            }
        }
        3 => {
            let class = free.choose(rng)?.clone();
            let name = fresh(rng, "g", features);
            features.insert(name.clone());
            if rng.gen_bool(0.6) {
                let f = attribute(rng, &name, true);
                let default_value = if f.lower > 0 && rng.gen_bool(0.5) {
                    Some(value(rng, f.primitive().unwrap()))
                } else {
                    None
                };
                DeltaOp::AddFeature {
                    class,
                    feature: f,
                    default_value,
                }
            } else {
                let t = all.choose(rng)?.clone();
                let mut f = reference(rng, &name, &t);
                if any && rng.gen_bool(0.3) {
                    f.lower = 1;
                    f.upper = Upper::Bounded(1);
                }
                DeltaOp::AddFeature {
                    class,
                    feature: f,
                    default_value: None,
                }
            }
        }
        4 => {
            let class = free.choose(rng)?.clone();
            let f = mm.class(&class)?.features.choose(rng)?.name.clone();
            DeltaOp::DeleteFeature { class, feature: f }
        }
        5 => {
            let class = free.choose(rng)?.clone();
            let from = mm.class(&class)?.features.choose(rng)?.name.clone();
            let to = fresh(rng, "g", features);
            features.insert(to.clone());
            DeltaOp::RenameFeature { class, from, to }
        }
        6 => {
            let class = free.choose(rng)?.clone();
            let f = mm.class(&class)?.features.choose(rng)?.clone();
            let (lower, upper) = match (f.kind, any) {
                (_, true) => {
                    let lower = rng.gen_range(0..=2);
                    (lower, upper_at_least(rng, lower))
                }
                (FeatureKind::Reference, false) => (0, upper_at_least(rng, 0)),
                (FeatureKind::Attribute, false) => {
                    let upper = match f.upper {
                        Upper::Unbounded => Upper::Unbounded,
                        Upper::Bounded(u) => {
                            if rng.gen_bool(0.3) {
                                Upper::Unbounded
                            } else {
                                Upper::Bounded(u + rng.gen_range(0..=1))
                            }
                        }
                    };
                    let cap = match upper {
                        Upper::Bounded(u) => u,
                        Upper::Unbounded => 3,
                    };
                    (rng.gen_range(0..=cap.min(2)), upper)
                }
            };
            if lower == f.lower && upper == f.upper {
                return None;
            }
            DeltaOp::ChangeMultiplicity {
                class,
                feature: f.name,
                lower,
                upper,
            }
        }
        7 => {
            let class = free.choose(rng)?.clone();
            let f = mm.class(&class)?.features.choose(rng)?.clone();
            let value_type = match f.kind {
                FeatureKind::Reference if any => all.choose(rng)?.clone(),
                FeatureKind::Reference => {
                    let sup: Vec<&str> = mm.ancestors(&f.value_type).into_iter().collect();
                    sup.choose(rng)?.to_string()
                }
                FeatureKind::Attribute if any => PRIMITIVES.choose(rng)?.as_str().to_string(),
                FeatureKind::Attribute => return None,
            };
            if value_type == f.value_type {
                return None;
            }
            DeltaOp::ChangeFeatureType {
                class,
                feature: f.name,
                value_type,
            }
        }
        _ => {
            let class = free.choose(rng)?.clone();
            let refs: Vec<&Feature> = mm
                .class(&class)?
                .features
                .iter()
                .filter(|f| f.kind == FeatureKind::Reference)
                .collect();
            if refs.len() < 2 {
                return None;
            }
            let picked: Vec<&Feature> = refs.choose_multiple(rng, 2).cloned().collect();
            if picked[0].containment != picked[1].containment {
                return None;
            }
            let common: Vec<&str> = mm
                .ancestors(&picked[0].value_type)
                .intersection(&mm.ancestors(&picked[1].value_type))
                .cloned()
                .collect();
            let t = common.choose(rng)?.to_string();
            let name = fresh(rng, "m", features);
            features.insert(name.clone());
            DeltaOp::MergeFeatures {
                class,
                sources: picked.iter().map(|f| f.name.clone()).collect(),
                target: Feature::reference(
                    &name,
                    &t,
                    0,
                    upper_at_least(rng, 0),
                    picked[0].containment,
                ),
            }
        }
    };
    Some(op)
}

pub type Fields = (
    String,
    BTreeMap<String, Vec<Value>>,
    BTreeMap<String, Vec<String>>,
);

/// Slot-by-slot view of an object used to compare across a migration.
pub fn object_fields(o: &ModelObject) -> Fields {
    (
        o.class_name.clone(),
        o.attribute_values.clone(),
        o.links.clone(),
    )
}

/// An export descriptor declaring one class per name.
pub fn exports(names: &[&str]) -> Metamodel {
    let classes = names
        .iter()
        .map(|n| {
            MetaClass::new(n).with(Feature::attribute(
                "id",
                Primitive::String,
                1,
                Upper::Bounded(1),
            ))
        })
        .collect();
    Metamodel::new("Lib", classes).unwrap()
}

/// A repository in `dir` with one or two multiverses of up to four slices,
/// some hinted transitions, blobs and cross-links.
pub fn random_repo(rng: &mut Rand, dir: &std::path::Path) -> Repository {
    let mut repo = Repository::init(dir).unwrap();
    let n_mv = rng.gen_range(1..=2);
    for k in 0..n_mv {
        let mv = format!("MV{k}");
        let mut mm = metamodel(rng, 4);
        let mut versions: Vec<String> = Vec::new();
        for v in 0..rng.gen_range(1..=4) {
            let version = format!("{v}.0");
            let parents: Vec<String> = match versions.len() {
                0 => vec![],
                n if n >= 2 && rng.gen_bool(0.3) => {
                    versions.choose_multiple(rng, 2).cloned().collect()
                }
                _ => vec![versions.choose(rng).unwrap().clone()],
            };
            let mut hints = None;
            if !versions.is_empty() && rng.gen_bool(0.6) {
                let evo = evolve(rng, &mm, 3, Mode::Any);
                mm = evo.after;
                hints = Some(evo.hints);
            }
            if parents.len() != 1 {
                hints = None;
            }
            let mut artifacts = BTreeMap::new();
            artifacts.insert("mm".to_string(), Artifact::Metamodel(mm.clone()));
            let model = model(rng, &mm, conforms_to(&mv, &version), 6);
            artifacts.insert("model".to_string(), Artifact::Model(model));
            if rng.gen_bool(0.3) {
                artifacts.insert(
                    "blob".to_string(),
                    Artifact::Blob(Blob {
                        file_name: "data.bin".into(),
                        bytes: (0..rng.gen_range(0..16)).map(|_| rng.gen()).collect(),
                        exports: rng.gen_bool(0.5).then(|| exports(&["E"])),
                    }),
                );
            }
            let hinted = hints.as_ref().filter(|h| !h.is_empty());
            if repo
                .commit_slice(&mv, &version, artifacts.clone(), &parents, "r", hinted)
                .is_err()
            {
                repo.commit_slice(&mv, &version, artifacts, &parents, "r", None)
                    .unwrap();
            }
            versions.push(version);
        }
        if k > 0 || rng.gen_bool(0.5) {
            let v = versions.choose(rng).unwrap().clone();
            let link = CrossLink {
                id: format!("l{k}"),
                link_type: LinkType::Conformance,
                source: format!("{mv}@{v}:model").parse().unwrap(),
                target: "MV0@0.0:mm".parse().unwrap(),
                payload: None,
            };
            if link.source.multiverse != link.target.multiverse {
                repo.add_link(link).unwrap();
            }
        }
    }
    repo
}

pub fn conforms_to(multiverse: &str, version: &str) -> ConformsTo {
    ConformsTo {
        multiverse: multiverse.into(),
        version: version.into(),
    }
}
