//! The Service/Port running example: metamodel versions 1.0, 2.0 and 2.1 plus
//! the EventLogger and Converter models. Used by tests, the acceptance suite
//! and the CLI demo.

use crate::delta::{Delta, DeltaHints, MergeHint};
use crate::model::{
    ConformsTo, Feature, MetaClass, Metamodel, ModelInstance, ModelObject, Primitive, Upper, Value,
};

fn port_family() -> Vec<MetaClass> {
    vec![
        MetaClass::new("Port")
            .abstract_class()
            .with(Feature::attribute(
                "name",
                Primitive::String,
                1,
                Upper::Bounded(1),
            )),
        MetaClass::new("InPort").extends("Port"),
        MetaClass::new("OutPort").extends("Port"),
    ]
}

fn service_name() -> Feature {
    Feature::attribute("name", Primitive::String, 1, Upper::Bounded(1))
}

/// `MM@1.0`: Service has separate `inPorts` and `outPorts`.
pub fn mm_v1() -> Metamodel {
    let mut classes = port_family();
    classes.push(
        MetaClass::new("Service")
            .with(service_name())
            .with(Feature::reference(
                "inPorts",
                "InPort",
                0,
                Upper::Unbounded,
                true,
            ))
            .with(Feature::reference(
                "outPorts",
                "OutPort",
                0,
                Upper::Unbounded,
                true,
            )),
    );
    Metamodel::new("MM", classes).expect("fixture metamodel is valid")
}

/// `MM@2.0`: the two port lists are merged into `ports: Port[0..2]`.
pub fn mm_v2() -> Metamodel {
    let mut classes = port_family();
    classes.push(
        MetaClass::new("Service")
            .with(service_name())
            .with(ports_feature()),
    );
    Metamodel::new("MM", classes).expect("fixture metamodel is valid")
}

/// `MM@2.1`: `MM@2.0` plus an unrelated class.
pub fn mm_v21() -> Metamodel {
    let mut classes = port_family();
    classes.push(
        MetaClass::new("Service")
            .with(service_name())
            .with(ports_feature()),
    );
    classes.push(MetaClass::new("Monitor").with(Feature::attribute(
        "interval",
        Primitive::Int,
        0,
        Upper::Bounded(1),
    )));
    Metamodel::new("MM", classes).expect("fixture metamodel is valid")
}

pub fn ports_feature() -> Feature {
    Feature::reference("ports", "Port", 0, Upper::Bounded(2), true)
}

/// Hints turning the 1.0 → 2.0 change into a single merge.
pub fn merge_hints() -> DeltaHints {
    DeltaHints {
        renames: Default::default(),
        merges: vec![MergeHint {
            class: "Service".into(),
            sources: vec!["inPorts".into(), "outPorts".into()],
            target: "ports".into(),
        }],
    }
}

/// The hinted delta `MM:1.0..2.0`.
pub fn delta_v1_v2() -> Delta {
    Delta::between("1.0", "2.0", &mm_v1(), &mm_v2(), Some(&merge_hints()))
        .expect("fixture hints are consistent")
}

fn mm_v1_ref() -> ConformsTo {
    ConformsTo {
        multiverse: "MM".into(),
        version: "1.0".into(),
    }
}

fn named(id: &str, class: &str) -> ModelObject {
    ModelObject::new(id, class).attr("name", Value::Str(id.to_string()))
}

/// One Service with one InPort and one OutPort.
pub fn event_logger() -> ModelInstance {
    ModelInstance::new(
        mm_v1_ref(),
        vec![
            named("eventLogger", "Service")
                .link("inPorts", "logIn")
                .link("outPorts", "logOut"),
            named("logIn", "InPort"),
            named("logOut", "OutPort"),
        ],
        vec!["eventLogger".into()],
    )
    .expect("fixture model is valid")
}

/// One Service with two InPorts and one OutPort: three ports, one too many for 2.0.
pub fn converter() -> ModelInstance {
    ModelInstance::new(
        mm_v1_ref(),
        vec![
            named("converter", "Service")
                .link("inPorts", "in1")
                .link("inPorts", "in2")
                .link("outPorts", "out1"),
            named("in1", "InPort"),
            named("in2", "InPort"),
            named("out1", "OutPort"),
        ],
        vec!["converter".into()],
    )
    .expect("fixture model is valid")
}

/// Converter naively rewritten against 2.0 with all three ports kept.
pub fn converter_v2_draft() -> ModelInstance {
    ModelInstance::new(
        ConformsTo {
            multiverse: "MM".into(),
            version: "2.0".into(),
        },
        vec![
            named("converter", "Service")
                .link("ports", "in1")
                .link("ports", "in2")
                .link("ports", "out1"),
            named("in1", "InPort"),
            named("in2", "InPort"),
            named("out1", "OutPort"),
        ],
        vec!["converter".into()],
    )
    .expect("fixture model is valid")
}
