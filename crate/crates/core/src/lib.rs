//! Versioned design multiverses.
//!
//! A multiverse is a DAG of immutable slices (versioned sets of design
//! artifacts). Cross-links relate artifacts of different multiverses; when one
//! side evolves, the engine detects broken links, plans a migration of the
//! other side and checks that consistency is restored.

pub mod coevolution;
pub mod constraint;
pub mod delta;
pub mod fixtures;
pub mod graph;
pub mod migration;
pub mod model;
pub mod store;
pub mod types;

pub use coevolution::{
    consistency, detect_trigger, restore_consistency_check, CrossLink, LinkType, TriggerReport,
};
pub use constraint::{evaluate, parse, parse_file, typecheck, Constraint, EvalResult};
pub use delta::{apply_delta, classify, diff_metamodel, Delta, DeltaHints, DeltaOp, ImpactClass};
pub use graph::{
    check_closed, compose, Artifact, ArtifactRef, CompositeSlice, Multiverse, Slice, SliceRef,
    Universe,
};
pub use migration::{
    migrate, plan_migration, plan_migration_with, DecisionFile, DecisionRequest, Migration,
    MigrationPlan,
};
pub use model::{check_conformance, extent, ConformanceReport, Metamodel, ModelInstance};
pub use store::{Repository, StoreError};
pub use types::{compute_type_report, TypeError, TypeRef, TypeReport};
