//! `mvx`: command-line front end for design multiverse repositories.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::json;

use mvx_core::coevolution::{
    detect_trigger, evaluate_link, restore_consistency_check, ConsistencyResult, CrossLink,
    LinkResult, LinkType, UsePayload,
};
use mvx_core::constraint::{evaluate, parse_file, typecheck};
use mvx_core::delta::{classify_delta, Delta, DeltaHints};
use mvx_core::graph::{
    check_closed, compose, Artifact, ArtifactRef, CompositeSlice, Multiverse, Slice, SliceRef,
};
use mvx_core::migration::{migrate, plan_migration_with, DecisionFile};
use mvx_core::store::{read_artifact_file, Repository, StoreError};
use mvx_core::types::compute_type_report;

#[derive(Parser)]
#[command(name = "mvx", version, about = "Versioned design multiverses")]
struct Cli {
    /// Print machine-readable JSON instead of text.
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Create a repository in the current directory (or $MVX_REPO).
    Init,
    /// Slice operations.
    #[command(subcommand)]
    Slice(SliceCmd),
    /// List a multiverse's slices in topological order.
    Log { multiverse: String },
    /// Delta between two versions of a metamodel artifact.
    Diff {
        multiverse: String,
        from: String,
        to: String,
        #[arg(long)]
        hints: Option<PathBuf>,
        /// Metamodel artifact name (default: the only metamodel).
        #[arg(long)]
        artifact: Option<String>,
    },
    /// Minimal spanning subtree containing the given versions.
    Partial {
        multiverse: String,
        #[arg(required = true)]
        versions: Vec<String>,
    },
    /// Cross-link operations.
    #[command(subcommand)]
    Link(LinkCmd),
    /// Consistency and closedness of a composite slice.
    Check {
        #[arg(long, num_args = 1.., required = true)]
        composite: Vec<String>,
        #[arg(long = "type")]
        link_type: Option<String>,
    },
    /// Links broken by evolving their target to a later slice.
    Triggers {
        #[arg(long)]
        link_type: String,
        #[arg(long)]
        after: String,
    },
    /// Migrate a model across a metamodel delta.
    Migrate(MigrateArgs),
    /// Stable and evolving classes over a set of versions.
    Types {
        multiverse: String,
        #[arg(long, value_delimiter = ',', required = true)]
        versions: Vec<String>,
        #[arg(long)]
        artifact: Option<String>,
    },
    /// Typecheck constraints against a scope `mv:v1,v2,...`.
    Typecheck {
        file: PathBuf,
        #[arg(long)]
        scope: String,
    },
    /// Evaluate constraints on a composite slice.
    Eval {
        file: PathBuf,
        #[arg(long, num_args = 1.., required = true)]
        composite: Vec<String>,
    },
    /// Materialize a composite slice into a directory.
    Checkout {
        #[arg(long, num_args = 1.., required = true)]
        composite: Vec<String>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum SliceCmd {
    /// Commit a new slice.
    Add {
        multiverse: String,
        version: String,
        #[arg(long = "parent")]
        parents: Vec<String>,
        #[arg(long = "artifact", required = true)]
        artifacts: Vec<PathBuf>,
        #[arg(long)]
        hints: Option<PathBuf>,
        #[arg(long, default_value = "")]
        rationale: String,
    },
}

#[derive(Subcommand)]
enum LinkCmd {
    /// Register a cross-link.
    Add {
        #[arg(long = "type")]
        link_type: String,
        #[arg(long)]
        from: String,
        #[arg(long)]
        to: String,
        #[arg(long)]
        payload: Option<PathBuf>,
        #[arg(long)]
        id: Option<String>,
    },
    /// List registered links.
    List,
}

#[derive(Args)]
struct MigrateArgs {
    /// Model artifact `mv@version:artifact`.
    model: String,
    /// Metamodel evolution `mv:from..to`.
    #[arg(long)]
    delta: String,
    #[arg(long)]
    decisions: Option<PathBuf>,
    /// Version label of the migrated slice.
    #[arg(long = "as", required_unless_present = "plan")]
    as_version: Option<String>,
    /// Only print the migration plan.
    #[arg(long)]
    plan: bool,
}

/// Failure with its exit code.
struct Failure {
    code: u8,
    message: String,
}

fn usage(message: impl ToString) -> Failure {
    Failure {
        code: 2,
        message: message.to_string(),
    }
}

impl From<StoreError> for Failure {
    fn from(e: StoreError) -> Self {
        Failure {
            code: if e.is_corrupt() { 3 } else { 2 },
            message: e.to_string(),
        }
    }
}

macro_rules! impl_usage_from {
    ($($t:ty),*) => {$(
        impl From<$t> for Failure {
            fn from(e: $t) -> Self {
                usage(e)
            }
        }
    )*};
}

impl_usage_from!(
    mvx_core::graph::GraphError,
    mvx_core::coevolution::CoevolutionError,
    mvx_core::delta::DeltaError,
    mvx_core::migration::MigrationError,
    mvx_core::types::TypeError,
    mvx_core::constraint::ParseError,
    mvx_core::constraint::EvalError,
    mvx_core::model::ModelError
);

type Outcome = Result<u8, Failure>;

struct Ctx {
    json: bool,
}

impl Ctx {
    /// Prints `value` as JSON or `text` and returns `code`.
    fn emit<T: Serialize>(&self, value: &T, text: impl FnOnce() -> String, code: u8) -> Outcome {
        if self.json {
            println!(
                "{}",
                serde_json::to_string_pretty(value).expect("output serializes")
            );
        } else {
            let t = text();
            print!("{t}");
            if !t.is_empty() && !t.ends_with('\n') {
                println!();
            }
        }
        Ok(code)
    }
}

fn repo_root() -> Result<PathBuf, Failure> {
    match std::env::var_os("MVX_REPO") {
        Some(p) => Ok(PathBuf::from(p)),
        None => {
            let cwd = std::env::current_dir().map_err(usage)?;
            Ok(Repository::discover(&cwd)?)
        }
    }
}

fn load() -> Result<Repository, Failure> {
    Ok(Repository::load(&repo_root()?)?)
}

fn read_text(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| usage(format!("{}: {e}", path.display())))
}

fn slice_refs(items: &[String]) -> Result<Vec<SliceRef>, Failure> {
    items
        .iter()
        .map(|s| s.parse().map_err(Failure::from))
        .collect()
}

fn metamodel_name(slice: &Slice, wanted: Option<&str>) -> Result<String, Failure> {
    match wanted {
        Some(n) => Ok(n.to_string()),
        None => slice
            .sole_metamodel()
            .map(|(n, _)| n.to_string())
            .ok_or_else(|| {
                usage(format!(
                    "slice {} needs --artifact: not exactly one metamodel",
                    slice.version()
                ))
            }),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let ctx = Ctx { json: cli.json };
    match run(&ctx, cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            if ctx.json {
                println!("{}", json!({ "error": f.message, "exitCode": f.code }));
            }
            eprintln!("mvx: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn run(ctx: &Ctx, command: Command) -> Outcome {
    match command {
        Command::Init => {
            let root = match std::env::var_os("MVX_REPO") {
                Some(p) => PathBuf::from(p),
                None => std::env::current_dir().map_err(usage)?,
            };
            let repo = Repository::init(&root)?;
            let root = repo.root().display().to_string();
            ctx.emit(
                &json!({ "initialized": root }),
                || format!("initialized {root}"),
                0,
            )
        }
        Command::Slice(SliceCmd::Add {
            multiverse,
            version,
            parents,
            artifacts,
            hints,
            rationale,
        }) => slice_add(
            ctx,
            &multiverse,
            &version,
            &parents,
            &artifacts,
            hints.as_deref(),
            &rationale,
        ),
        Command::Log { multiverse } => log(ctx, &multiverse),
        Command::Diff {
            multiverse,
            from,
            to,
            hints,
            artifact,
        } => diff(
            ctx,
            &multiverse,
            &from,
            &to,
            hints.as_deref(),
            artifact.as_deref(),
        ),
        Command::Partial {
            multiverse,
            versions,
        } => {
            let repo = load()?;
            let mv = repo.multiverse(&multiverse)?;
            let labels: Vec<String> = mv
                .partial_multiverse(&versions)?
                .iter()
                .map(|s| s.version().to_string())
                .collect();
            ctx.emit(
                &json!({ "multiverse": multiverse, "slices": labels }),
                || labels.join(" "),
                0,
            )
        }
        Command::Link(LinkCmd::Add {
            link_type,
            from,
            to,
            payload,
            id,
        }) => link_add(ctx, &link_type, &from, &to, payload.as_deref(), id),
        Command::Link(LinkCmd::List) => {
            let repo = load()?;
            let links = repo.links();
            ctx.emit(
                links,
                || {
                    links
                        .links
                        .iter()
                        .map(|l| format!("{} {} {} -> {}\n", l.id, l.link_type, l.source, l.target))
                        .collect()
                },
                0,
            )
        }
        Command::Check {
            composite,
            link_type,
        } => check(ctx, &composite, link_type.as_deref()),
        Command::Triggers { link_type, after } => triggers(ctx, &link_type, &after),
        Command::Migrate(args) => migrate_cmd(ctx, args),
        Command::Types {
            multiverse,
            versions,
            artifact,
        } => {
            let repo = load()?;
            let mv = repo.multiverse(&multiverse)?;
            let first = versions
                .first()
                .ok_or_else(|| usage("--versions is empty"))?;
            let name = metamodel_name(mv.slice(first)?, artifact.as_deref())?;
            let report = compute_type_report(mv, &name, &versions)?;
            ctx.emit(&report, || report.to_string(), 0)
        }
        Command::Typecheck { file, scope } => typecheck_cmd(ctx, &file, &scope),
        Command::Eval { file, composite } => eval_cmd(ctx, &file, &composite),
        Command::Checkout { composite, out } => checkout(ctx, &composite, &out),
    }
}

fn slice_add(
    ctx: &Ctx,
    multiverse: &str,
    version: &str,
    parents: &[String],
    files: &[PathBuf],
    hints: Option<&Path>,
    rationale: &str,
) -> Outcome {
    let hints = match hints {
        Some(p) => Some(DeltaHints::from_json(&read_text(p)?)?),
        None => None,
    };
    let mut artifacts = BTreeMap::new();
    for f in files {
        let (name, a) = read_artifact_file(f)?;
        if artifacts.insert(name.clone(), a).is_some() {
            return Err(usage(format!("two artifacts named `{name}`")));
        }
    }
    let mut repo = load()?;
    repo.commit_slice(
        multiverse,
        version,
        artifacts,
        parents,
        rationale,
        hints.as_ref(),
    )?;
    let mv = repo.multiverse(multiverse)?;
    let transitions: Vec<_> = mv
        .transitions()
        .iter()
        .filter(|t| t.to == version)
        .collect();
    ctx.emit(
        &json!({ "multiverse": multiverse, "version": version, "transitions": transitions }),
        || format!("committed {multiverse}@{version}"),
        0,
    )
}

#[derive(Serialize)]
#[serde(rename_all = "camelCase")]
struct LogEntry {
    version: String,
    parents: Vec<String>,
    children: Vec<String>,
    artifacts: Vec<String>,
    rationale: Vec<String>,
}

fn log(ctx: &Ctx, multiverse: &str) -> Outcome {
    let repo = load()?;
    let mv = repo.multiverse(multiverse)?;
    let entries: Vec<LogEntry> = mv
        .topological_order()
        .into_iter()
        .map(|v| LogEntry {
            version: v.to_string(),
            parents: mv.parents(v).iter().map(|s| s.to_string()).collect(),
            children: mv.children(v).iter().map(|s| s.to_string()).collect(),
            artifacts: mv
                .slice(v)
                .expect("listed")
                .artifacts()
                .keys()
                .cloned()
                .collect(),
            rationale: mv
                .transitions()
                .iter()
                .filter(|t| t.to == v && !t.rationale.is_empty())
                .map(|t| t.rationale.clone())
                .collect(),
        })
        .collect();
    ctx.emit(
        &entries,
        || {
            let mut out = String::new();
            for e in &entries {
                let marker = match (e.parents.len(), e.children.len()) {
                    (p, _) if p > 1 => "M",
                    (_, c) if c > 1 => "Y",
                    _ => "*",
                };
                out.push_str(&format!("{marker} {}", e.version));
                if !e.parents.is_empty() {
                    out.push_str(&format!(" <- {}", e.parents.join(", ")));
                }
                out.push_str(&format!("  [{}]", e.artifacts.join(", ")));
                if e.children.len() > 1 {
                    out.push_str(&format!("  branches: {}", e.children.join(", ")));
                }
                for r in &e.rationale {
                    out.push_str(&format!("  \"{r}\""));
                }
                out.push('\n');
            }
            out
        },
        0,
    )
}

fn diff(
    ctx: &Ctx,
    multiverse: &str,
    from: &str,
    to: &str,
    hints: Option<&Path>,
    artifact: Option<&str>,
) -> Outcome {
    let hints = match hints {
        Some(p) => Some(DeltaHints::from_json(&read_text(p)?)?),
        None => None,
    };
    let repo = load()?;
    let mv = repo.multiverse(multiverse)?;
    let name = metamodel_name(mv.slice(from)?, artifact)?;
    let a = mv.metamodel(from, &name)?;
    let b = mv.metamodel(to, &name)?;
    let delta = match (&hints, mv.path(from, to)) {
        (None, Ok(_)) => mv.delta_along(from, to, &name)?,
        _ => Delta::between(from, to, a, b, hints.as_ref())?,
    };
    let impacts = classify_delta(a, &delta, None)?;
    let rows: Vec<_> = delta
        .ops
        .iter()
        .zip(&impacts)
        .map(|(op, i)| json!({ "op": op, "impact": i }))
        .collect();
    ctx.emit(
        &json!({ "from": from, "to": to, "ops": rows }),
        || {
            if delta.is_empty() {
                return "no changes".into();
            }
            delta
                .ops
                .iter()
                .zip(&impacts)
                .map(|(op, i)| format!("{op}  [{i}]\n"))
                .collect()
        },
        0,
    )
}

fn link_add(
    ctx: &Ctx,
    link_type: &str,
    from: &str,
    to: &str,
    payload: Option<&Path>,
    id: Option<String>,
) -> Outcome {
    let link_type: LinkType = link_type.parse()?;
    let source: ArtifactRef = from.parse()?;
    let target: ArtifactRef = to.parse()?;
    let mut payload = match payload {
        Some(p) => Some(serde_json::from_str::<serde_json::Value>(&read_text(p)?).map_err(usage)?),
        None => None,
    };
    let mut repo = load()?;
    if link_type == LinkType::Use {
        let raw = CrossLink {
            id: String::new(),
            link_type,
            source: source.clone(),
            target: target.clone(),
            payload: payload.clone(),
        };
        let uses = raw.use_payload()?;
        let artifact = repo
            .multiverse(&target.multiverse)?
            .slice(&target.version)?
            .artifact(&target.artifact)
            .ok_or_else(|| usage(format!("unknown artifact {target}")))?;
        let exports = artifact
            .exported_signatures()
            .ok_or_else(|| usage(format!("{target} exports nothing")))?;
        let elements: Vec<String> = uses.uses.iter().map(|u| u.element.clone()).collect();
        payload = Some(
            UsePayload::capture(&elements, exports)
                .map_err(usage)?
                .to_value(),
        );
    }
    let id = id.unwrap_or_else(|| {
        let taken: BTreeSet<&str> = repo.links().links.iter().map(|l| l.id.as_str()).collect();
        (1..)
            .map(|n| format!("{link_type}-{n}"))
            .find(|c| !taken.contains(c.as_str()))
            .expect("unbounded")
    });
    let link = CrossLink {
        id,
        link_type,
        source,
        target,
        payload,
    };
    repo.add_link(link.clone())?;
    ctx.emit(&link, || format!("added link {}", link.id), 0)
}

/// Links with an end in the composite, bound to the composite's versions.
fn links_in(repo: &Repository, composite: &CompositeSlice) -> Vec<CrossLink> {
    let mut out: BTreeMap<String, CrossLink> = BTreeMap::new();
    for l in &repo.links().links {
        if !composite.contains(&l.source.slice()) {
            continue;
        }
        let Some(v) = composite.version_of(&l.target.multiverse) else {
            continue;
        };
        let bound = if v == l.target.version {
            l.clone()
        } else {
            CrossLink {
                target: l.target.with_version(v),
                ..l.clone()
            }
        };
        out.insert(bound.id.clone(), bound);
    }
    out.into_values().collect()
}

fn check(ctx: &Ctx, composite: &[String], link_type: Option<&str>) -> Outcome {
    let types: Vec<LinkType> = match link_type {
        Some(t) => {
            let t: LinkType = t.parse()?;
            if t.evaluator().is_none() {
                return Err(mvx_core::coevolution::CoevolutionError::NoEvaluator(t).into());
            }
            vec![t]
        }
        None => LinkType::ALL
            .into_iter()
            .filter(|t| t.evaluator().is_some())
            .collect(),
    };
    let repo = load()?;
    let selection = slice_refs(composite)?;
    let c = compose(repo.universe(), &selection)?;
    let closed = check_closed(&c, &repo.links().links);
    let bound = links_in(&repo, &c);
    let mut results: Vec<LinkResult> = Vec::new();
    let mut skipped: Vec<String> = Vec::new();
    for l in &bound {
        if types.contains(&l.link_type) {
            results.push(evaluate_link(&c, l)?);
        } else if l.link_type.evaluator().is_none() {
            skipped.push(l.id.clone());
        }
    }
    let consistent = results.iter().all(|r| r.holds);
    let ok = consistent && closed.closed;
    let out = json!({
        "composite": c.members(),
        "closed": closed,
        "consistency": { "holds": consistent, "perLink": results },
        "notEvaluated": skipped,
    });
    ctx.emit(
        &out,
        || {
            let mut s = String::new();
            let members: Vec<String> = c.members().iter().map(ToString::to_string).collect();
            s.push_str(&format!("composite {}\n", members.join(" ")));
            if closed.closed {
                s.push_str("closed: yes\n");
            } else {
                s.push_str("closed: no\n");
                for (pair, ids) in &closed.by_slice {
                    s.push_str(&format!("  unresolved {pair}: {}\n", ids.join(", ")));
                }
            }
            for r in &results {
                s.push_str(&format!(
                    "{} {}\n",
                    r.link_id,
                    if r.holds { "holds" } else { "VIOLATED" }
                ));
                for v in &r.violations {
                    s.push_str(&format!("  {v}\n"));
                }
            }
            if !skipped.is_empty() {
                s.push_str(&format!(
                    "not evaluated (no evaluator): {}\n",
                    skipped.join(", ")
                ));
            }
            s.push_str(if ok { "consistent\n" } else { "inconsistent\n" });
            s
        },
        if ok { 0 } else { 1 },
    )
}

fn triggers(ctx: &Ctx, link_type: &str, after: &str) -> Outcome {
    let link_type: LinkType = link_type.parse()?;
    if link_type.evaluator().is_none() {
        return Err(mvx_core::coevolution::CoevolutionError::NoEvaluator(link_type).into());
    }
    let after: SliceRef = after.parse()?;
    let repo = load()?;
    let mv = repo.multiverse(&after.multiverse)?;
    mv.slice(&after.version)?;
    let mut pairs: BTreeSet<(SliceRef, SliceRef)> = BTreeSet::new();
    for l in repo
        .links()
        .links
        .iter()
        .filter(|l| l.link_type == link_type)
    {
        for (dependent, target) in [(&l.source, &l.target), (&l.target, &l.source)] {
            if target.multiverse == after.multiverse
                && target.version != after.version
                && mv
                    .ancestors(&after.version)
                    .contains(target.version.as_str())
            {
                pairs.insert((dependent.slice(), target.slice()));
            }
        }
    }
    let mut reports = Vec::new();
    for (s1, s2) in &pairs {
        reports.push(detect_trigger(
            repo.universe(),
            &repo.links().links,
            link_type,
            s1,
            s2,
            &after,
        )?);
    }
    let any = reports.iter().any(|r| r.triggered);
    ctx.emit(
        &reports,
        || {
            if reports.is_empty() {
                return format!("no {link_type} links lead into {after}\n");
            }
            reports.iter().map(|r| format!("{r}\n")).collect()
        },
        if any { 1 } else { 0 },
    )
}

fn migrate_cmd(ctx: &Ctx, args: MigrateArgs) -> Outcome {
    let model_ref: ArtifactRef = args.model.parse()?;
    let (dmv, range) = args
        .delta
        .split_once(':')
        .ok_or_else(|| usage(format!("--delta `{}` is not `mv:from..to`", args.delta)))?;
    let (v1, v2) = range
        .split_once("..")
        .ok_or_else(|| usage(format!("--delta `{}` is not `mv:from..to`", args.delta)))?;
    let decisions = match &args.decisions {
        Some(p) => DecisionFile::from_json(&read_text(p)?)?,
        None => DecisionFile::default(),
    };
    let mut repo = load()?;
    let mm_mv = repo.multiverse(dmv)?;
    let mm_name = metamodel_name(mm_mv.slice(v1)?, None)?;
    let mm = mm_mv.metamodel(v1, &mm_name)?.clone();
    let delta = mm_mv.delta_along(v1, v2, &mm_name)?;
    let model_slice = repo
        .multiverse(&model_ref.multiverse)?
        .slice(&model_ref.version)?
        .clone();
    let model = model_slice
        .artifact(&model_ref.artifact)
        .and_then(Artifact::as_model)
        .ok_or_else(|| usage(format!("{model_ref} is not a model")))?
        .clone();

    if args.plan {
        let plan = plan_migration_with(&model, &mm, &delta, &decisions)?;
        let open = plan
            .required_decisions
            .iter()
            .filter(|r| !decisions.answers(r))
            .count();
        return ctx.emit(
            &plan,
            || {
                let mut s = format!(
                    "{} auto step(s), {} required decision(s), {open} unanswered\n",
                    plan.auto_steps.len(),
                    plan.required_decisions.len()
                );
                for a in &plan.auto_steps {
                    s.push_str(&format!(
                        "  auto #{} {} [{}]: {}\n",
                        a.op_index, a.op, a.impact, a.resolution
                    ));
                }
                for r in &plan.required_decisions {
                    let tag = if decisions.answers(r) {
                        "answered"
                    } else {
                        "decide"
                    };
                    s.push_str(&format!("  {tag}: {r}\n"));
                }
                s
            },
            if open == 0 { 0 } else { 1 },
        );
    }

    let new_version = args.as_version.expect("clap requires --as without --plan");
    let migration = migrate(&model, &mm, &delta, &decisions)?;
    let mut artifacts: BTreeMap<String, Artifact> = model_slice
        .artifacts()
        .iter()
        .map(|(k, v)| (k.clone(), v.as_ref().clone()))
        .collect();
    artifacts.insert(
        model_ref.artifact.clone(),
        Artifact::Model(migration.migrated.clone()),
    );
    repo.commit_slice(
        &model_ref.multiverse,
        &new_version,
        artifacts,
        std::slice::from_ref(&model_ref.version),
        &format!("migrated across {dmv}:{v1}..{v2}"),
        None,
    )?;
    let old: Vec<CrossLink> = repo
        .links()
        .links
        .iter()
        .filter(|l| {
            l.link_type == LinkType::Conformance
                && l.source == model_ref
                && l.target.multiverse == dmv
                && l.target.version == v1
        })
        .cloned()
        .collect();
    let mut added = Vec::new();
    for l in &old {
        let rebound = l.rebind(&new_version, v2);
        if repo.links().get(&rebound.id).is_none() {
            repo.add_link(rebound.clone())?;
            added.push(rebound.id);
        }
    }
    let s1 = SliceRef::new(&model_ref.multiverse, &new_version);
    let s2 = SliceRef::new(dmv, v2);
    let restored: ConsistencyResult =
        restore_consistency_check(repo.universe(), &old, LinkType::Conformance, &s1, &s2)?;
    let out = json!({
        "slice": s1,
        "correspondence": migration.correspondence,
        "reboundLinks": added,
        "restored": restored,
    });
    ctx.emit(
        &out,
        || {
            let mut s = format!("committed {s1}\n");
            for id in &added {
                s.push_str(&format!("rebound link {id}\n"));
            }
            s.push_str(if restored.holds {
                "consistency restored\n"
            } else {
                "consistency NOT restored\n"
            });
            s
        },
        if restored.holds { 0 } else { 1 },
    )
}

fn typecheck_cmd(ctx: &Ctx, file: &Path, scope: &str) -> Outcome {
    let (mv_name, versions) = scope
        .split_once(':')
        .ok_or_else(|| usage(format!("--scope `{scope}` is not `mv:v1,v2,...`")))?;
    let versions: Vec<String> = versions.split(',').map(str::to_string).collect();
    let constraints = parse_file(&read_text(file)?)?;
    let repo = load()?;
    let mv: &Multiverse = repo.multiverse(mv_name)?;
    let name = metamodel_name(mv.slice(&versions[0])?, None)?;
    let report = compute_type_report(mv, &name, &versions)?;
    let errors: Vec<_> = constraints
        .iter()
        .flat_map(|c| typecheck(c, &report))
        .collect();
    ctx.emit(
        &json!({ "scope": report.scope, "errors": errors }),
        || {
            if errors.is_empty() {
                format!("{} constraint(s) well-typed\n", constraints.len())
            } else {
                errors.iter().map(|e| format!("{e}\n")).collect()
            }
        },
        if errors.is_empty() { 0 } else { 1 },
    )
}

fn eval_cmd(ctx: &Ctx, file: &Path, composite: &[String]) -> Outcome {
    let mut constraints = parse_file(&read_text(file)?)?;
    constraints.sort_by(|a, b| a.name.cmp(&b.name));
    let repo = load()?;
    let c = compose(repo.universe(), &slice_refs(composite)?)?;
    let results = constraints
        .iter()
        .map(|k| evaluate(k, &c))
        .collect::<Result<Vec<_>, _>>()?;
    let all = results.iter().all(|r| r.holds);
    ctx.emit(
        &results,
        || {
            results
                .iter()
                .map(|r| {
                    let mut s = format!(
                        "{}: {}",
                        r.constraint_name,
                        if r.holds { "holds" } else { "FAILS" }
                    );
                    if !r.witnesses.is_empty() {
                        s.push_str(&format!(" [{}]", r.witnesses.join(", ")));
                    }
                    s + "\n"
                })
                .collect()
        },
        if all { 0 } else { 1 },
    )
}

fn checkout(ctx: &Ctx, composite: &[String], out: &Path) -> Outcome {
    if out.exists() && fs::read_dir(out).map_err(usage)?.next().is_some() {
        return Err(usage(format!("{} is not empty", out.display())));
    }
    let repo = load()?;
    let c = compose(repo.universe(), &slice_refs(composite)?)?;
    let mut written = Vec::new();
    let io = |p: &Path, e: std::io::Error| usage(format!("{}: {e}", p.display()));
    for m in c.members() {
        let dir = out.join(&m.multiverse);
        fs::create_dir_all(&dir).map_err(|e| io(&dir, e))?;
        for (name, a) in c.artifacts_of(&m.multiverse) {
            let (path, bytes) = match a {
                Artifact::Metamodel(mm) => {
                    (dir.join(format!("{name}.json")), mm.to_json().into_bytes())
                }
                Artifact::Model(model) => (
                    dir.join(format!("{name}.json")),
                    model.to_json().into_bytes(),
                ),
                Artifact::Blob(b) => (dir.join(&b.file_name), b.bytes.clone()),
            };
            fs::write(&path, bytes).map_err(|e| io(&path, e))?;
            written.push(path.display().to_string());
        }
    }
    let closed = check_closed(&c, &repo.links().links);
    let manifest = json!({ "members": c.members(), "closed": closed });
    let mpath = out.join("composite.json");
    fs::write(
        &mpath,
        serde_json::to_string_pretty(&manifest).expect("serializes"),
    )
    .map_err(|e| io(&mpath, e))?;
    ctx.emit(
        &json!({ "out": out, "files": written, "closed": closed.closed }),
        || {
            format!(
                "checked out {} file(s) into {}\n",
                written.len(),
                out.display()
            )
        },
        0,
    )
}
