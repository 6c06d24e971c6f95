//! On-disk repository under `.mvx/`.
//!
//! ```text
//! .mvx/manifest.json
//! .mvx/lock                                   (held by writers)
//! .mvx/links.json
//! .mvx/deltas/<mv>/<from>..<to>.json
//! .mvx/multiverses/<mv>/graph.json
//! .mvx/multiverses/<mv>/slices/<version>/<artifact>.json
//! .mvx/multiverses/<mv>/slices/<version>/blobs/<artifact>/<file>
//! ```

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::fs;
use std::io::{self, Write};
use std::path::{Component, Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::coevolution::{CoevolutionError, CrossLink, LinksRegistry};
use crate::delta::{Correspondence, Delta, DeltaHints, EvolutionLink};
use crate::graph::{
    Artifact, ArtifactKind, Blob, DesignTransition, GraphError, InternalRef, Multiverse, Slice,
    Universe,
};
use crate::model::{Metamodel, ModelError, ModelInstance};

pub const FORMAT_VERSION: &str = "1";
pub const REPO_DIR: &str = ".mvx";

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("{}: {source}", .path.display())]
    Io { path: PathBuf, source: io::Error },
    #[error("{} is already a repository", .0.display())]
    AlreadyInitialized(PathBuf),
    #[error("not a repository (no {REPO_DIR} in {} or any parent)", .0.display())]
    NotARepository(PathBuf),
    #[error("repository is locked by another writer ({})", .0.display())]
    Locked(PathBuf),
    #[error("corrupt repository: {}: {reason}", .file.display())]
    Corrupt { file: PathBuf, reason: String },
    #[error("unsupported repository format `{0}` (this build reads format {FORMAT_VERSION})")]
    UnsupportedFormat(String),
    #[error("{}:{line}:{column}: {message}", .file.display())]
    Parse {
        file: PathBuf,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("unknown multiverse `{0}`")]
    UnknownMultiverse(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Links(#[from] CoevolutionError),
}

impl StoreError {
    fn io(path: &Path) -> impl FnOnce(io::Error) -> StoreError + '_ {
        move |source| StoreError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    fn corrupt(file: &Path, reason: impl ToString) -> StoreError {
        StoreError::Corrupt {
            file: file.to_path_buf(),
            reason: reason.to_string(),
        }
    }

    pub fn is_corrupt(&self) -> bool {
        matches!(
            self,
            StoreError::Corrupt { .. } | StoreError::UnsupportedFormat(_)
        )
    }
}

thread_local! {
    static CRASH_BEFORE_RENAME: RefCell<Option<String>> = const { RefCell::new(None) };
}

/// Makes the next atomic write of a file with this name fail after the
/// temporary file is written and before it is renamed into place.
#[doc(hidden)]
pub fn inject_crash_before_rename(file_name: Option<&str>) {
    CRASH_BEFORE_RENAME.with(|c| *c.borrow_mut() = file_name.map(str::to_string));
}

/// Writes `bytes` to a sibling temporary file and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), StoreError> {
    let dir = path.parent().expect("file has a parent directory");
    fs::create_dir_all(dir).map_err(StoreError::io(dir))?;
    let name = path
        .file_name()
        .expect("file name")
        .to_string_lossy()
        .to_string();
    let tmp = dir.join(format!(".{name}.tmp"));
    {
        let mut f = fs::File::create(&tmp).map_err(StoreError::io(&tmp))?;
        f.write_all(bytes).map_err(StoreError::io(&tmp))?;
        f.sync_all().map_err(StoreError::io(&tmp))?;
    }
    let crash = CRASH_BEFORE_RENAME.with(|c| {
        let mut c = c.borrow_mut();
        if c.as_deref() == Some(name.as_str()) {
            c.take();
            true
        } else {
            false
        }
    });
    if crash {
        return Err(StoreError::Io {
            path: path.to_path_buf(),
            source: io::Error::other("injected crash before rename"),
        });
    }
    fs::rename(&tmp, path).map_err(StoreError::io(path))
}

/// Held while writing; removed on drop.
struct Lock(PathBuf);

impl Lock {
    fn acquire(mvx: &Path) -> Result<Lock, StoreError> {
        let path = mvx.join("lock");
        match fs::OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(&path)
        {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
                Ok(Lock(path))
            }
            Err(e) if e.kind() == io::ErrorKind::AlreadyExists => Err(StoreError::Locked(path)),
            Err(e) => Err(StoreError::Io { path, source: e }),
        }
    }
}

impl Drop for Lock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.0);
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
struct Manifest {
    format_version: String,
    multiverses: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
struct ArtifactEntry {
    path: String,
    kind: ArtifactKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    exports: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
struct SliceEntry {
    version: String,
    artifacts: BTreeMap<String, ArtifactEntry>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    internal_refs: Vec<InternalRef>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
struct LinkEntry {
    artifact: String,
    correspondence: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    delta_ref: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
struct TransitionEntry {
    from: String,
    to: String,
    #[serde(default)]
    rationale: String,
    evolution_links: Vec<LinkEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
struct GraphFile {
    name: String,
    slices: Vec<SliceEntry>,
    transitions: Vec<TransitionEntry>,
}

/// Reads an artifact file given on the command line. `.json` files are
/// metamodels or models; anything else is a blob, described by an
/// `<file>.exports.json` or `exports.json` next to it when present.
pub fn read_artifact_file(path: &Path) -> Result<(String, Artifact), StoreError> {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().to_string())
        .unwrap_or_default();
    let name: String = stem.split('.').next().unwrap_or_default().to_string();
    let bytes = fs::read(path).map_err(StoreError::io(path))?;
    if path.extension().is_some_and(|e| e == "json") {
        let text = String::from_utf8(bytes).map_err(|e| StoreError::Parse {
            file: path.to_path_buf(),
            line: 1,
            column: 1,
            message: e.to_string(),
        })?;
        return Ok((name, parse_json_artifact(path, &text, None)?));
    }
    let file_name = path
        .file_name()
        .expect("file name")
        .to_string_lossy()
        .to_string();
    let dir = path.parent().unwrap_or(Path::new("."));
    let exports = [
        dir.join(format!("{file_name}.exports.json")),
        dir.join("exports.json"),
    ]
    .into_iter()
    .find(|p| p.is_file())
    .map(|p| {
        let text = fs::read_to_string(&p).map_err(StoreError::io(&p))?;
        Metamodel::from_json(&text).map_err(|e| parse_error(&p, e))
    })
    .transpose()?;
    Ok((
        name,
        Artifact::Blob(Blob {
            file_name,
            bytes,
            exports,
        }),
    ))
}

fn parse_error(file: &Path, e: ModelError) -> StoreError {
    match e {
        ModelError::Json {
            line,
            column,
            message,
        } => StoreError::Parse {
            file: file.to_path_buf(),
            line,
            column,
            message,
        },
        other => StoreError::Parse {
            file: file.to_path_buf(),
            line: 0,
            column: 0,
            message: other.to_string(),
        },
    }
}

fn parse_json_artifact(
    file: &Path,
    text: &str,
    expected: Option<ArtifactKind>,
) -> Result<Artifact, StoreError> {
    let value: serde_json::Value =
        serde_json::from_str(text).map_err(|e| parse_error(file, ModelError::from_json(e)))?;
    let kind = match expected {
        Some(k) => k,
        None if value.get("classes").is_some() => ArtifactKind::Metamodel,
        None if value.get("conformsTo").is_some() => ArtifactKind::Model,
        None => {
            return Err(StoreError::Parse {
                file: file.to_path_buf(),
                line: 1,
                column: 1,
                message: "neither a metamodel (`classes`) nor a model (`conformsTo`)".into(),
            })
        }
    };
    match kind {
        ArtifactKind::Metamodel => Ok(Artifact::Metamodel(
            Metamodel::from_json(text).map_err(|e| parse_error(file, e))?,
        )),
        ArtifactKind::Model => Ok(Artifact::Model(
            ModelInstance::from_json(text).map_err(|e| parse_error(file, e))?,
        )),
        ArtifactKind::Blob => unreachable!("blobs are not parsed"),
    }
}

/// Rejects absolute paths and `..` so graph references stay inside the repo.
fn contained(base: &Path, rel: &str, graph: &Path) -> Result<PathBuf, StoreError> {
    let p = Path::new(rel);
    if rel.is_empty() || !p.components().all(|c| matches!(c, Component::Normal(_))) {
        return Err(StoreError::corrupt(
            graph,
            format!("path `{rel}` leaves the repository"),
        ));
    }
    Ok(base.join(p))
}

fn delta_file_name(from: &str, to: &str, artifact: &str, first: bool) -> String {
    if first {
        format!("{from}..{to}.json")
    } else {
        format!("{from}..{to}.{artifact}.json")
    }
}

/// A loaded repository: an immutable snapshot plus the root it came from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Repository {
    root: PathBuf,
    universe: Universe,
    links: LinksRegistry,
}

impl Repository {
    /// Creates an empty repository in `path`.
    pub fn init(path: &Path) -> Result<Repository, StoreError> {
        let mvx = path.join(REPO_DIR);
        if mvx.exists() {
            return Err(StoreError::AlreadyInitialized(path.to_path_buf()));
        }
        for d in [mvx.join("multiverses"), mvx.join("deltas")] {
            fs::create_dir_all(&d).map_err(StoreError::io(&d))?;
        }
        let repo = Repository {
            root: path.to_path_buf(),
            universe: Universe::new(),
            links: LinksRegistry::default(),
        };
        repo.write_links()?;
        repo.write_manifest()?;
        Ok(repo)
    }

    /// Nearest directory at or above `start` containing `.mvx`.
    pub fn discover(start: &Path) -> Result<PathBuf, StoreError> {
        start
            .ancestors()
            .find(|d| d.join(REPO_DIR).is_dir())
            .map(Path::to_path_buf)
            .ok_or_else(|| StoreError::NotARepository(start.to_path_buf()))
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn mvx_dir(&self) -> PathBuf {
        self.root.join(REPO_DIR)
    }

    pub fn universe(&self) -> &Universe {
        &self.universe
    }

    pub fn multiverse(&self, name: &str) -> Result<&Multiverse, StoreError> {
        self.universe
            .get(name)
            .ok_or_else(|| StoreError::UnknownMultiverse(name.to_string()))
    }

    pub fn links(&self) -> &LinksRegistry {
        &self.links
    }

    /// Reads and cross-validates the repository rooted at `path`.
    pub fn load(path: &Path) -> Result<Repository, StoreError> {
        let mvx = path.join(REPO_DIR);
        if !mvx.is_dir() {
            return Err(StoreError::NotARepository(path.to_path_buf()));
        }
        let manifest_path = mvx.join("manifest.json");
        let text = read_repo_file(&manifest_path)?;
        let manifest: Manifest =
            serde_json::from_str(&text).map_err(|e| StoreError::corrupt(&manifest_path, e))?;
        if manifest.format_version != FORMAT_VERSION {
            return Err(StoreError::UnsupportedFormat(manifest.format_version));
        }
        let mut universe = Universe::new();
        for name in &manifest.multiverses {
            if universe.contains_key(name) {
                return Err(StoreError::corrupt(
                    &manifest_path,
                    format!("`{name}` listed twice"),
                ));
            }
            if !crate::model::is_identifier(name) {
                return Err(StoreError::corrupt(
                    &manifest_path,
                    format!("invalid name `{name}`"),
                ));
            }
            universe.insert(name.clone(), load_multiverse(&mvx, name)?);
        }
        let links_path = mvx.join("links.json");
        let text = read_repo_file(&links_path)?;
        let links =
            LinksRegistry::from_json(&text).map_err(|e| StoreError::corrupt(&links_path, e))?;
        for l in &links.links {
            for end in [&l.source, &l.target] {
                let ok = universe
                    .get(&end.multiverse)
                    .and_then(|mv| mv.slice(&end.version).ok())
                    .is_some_and(|s| s.artifact(&end.artifact).is_some());
                if !ok {
                    return Err(StoreError::corrupt(
                        &links_path,
                        format!("link `{}` refers to missing artifact {end}", l.id),
                    ));
                }
            }
        }
        Ok(Repository {
            root: path.to_path_buf(),
            universe,
            links,
        })
    }

    /// Writes the whole repository into a fresh directory `path`.
    pub fn save_to(&self, path: &Path) -> Result<Repository, StoreError> {
        let mut out = Repository::init(path)?;
        out.universe = self.universe.clone();
        out.links = self.links.clone();
        for mv in out.universe.values() {
            for s in mv.slices() {
                out.write_slice(mv.name(), s)?;
            }
            out.write_graph(mv)?;
        }
        out.write_links()?;
        out.write_manifest()?;
        Ok(out)
    }

    /// Adds a slice (creating the multiverse on first use) and persists it.
    /// Artifact files and deltas are written first; the slice becomes visible
    /// when graph.json is atomically replaced.
    pub fn commit_slice(
        &mut self,
        multiverse: &str,
        version: &str,
        artifacts: BTreeMap<String, Artifact>,
        parents: &[String],
        rationale: &str,
        hints: Option<&DeltaHints>,
    ) -> Result<(), StoreError> {
        let _lock = Lock::acquire(&self.mvx_dir())?;
        let slice = Slice::new(version, artifacts, vec![])?;
        let is_new = !self.universe.contains_key(multiverse);
        let current = match self.universe.get(multiverse) {
            Some(mv) => mv.clone(),
            None => Multiverse::new(multiverse)?,
        };
        let next = current.add_slice(slice, parents, rationale, hints)?;
        self.write_slice(multiverse, next.slice(version)?)?;
        self.write_graph(&next)?;
        self.universe.insert(multiverse.to_string(), next);
        if is_new {
            self.write_manifest()?;
        }
        Ok(())
    }

    /// Registers a cross-link; both ends must exist.
    pub fn add_link(&mut self, link: CrossLink) -> Result<(), StoreError> {
        let _lock = Lock::acquire(&self.mvx_dir())?;
        for end in [&link.source, &link.target] {
            let mv = self.multiverse(&end.multiverse)?;
            if mv.slice(&end.version)?.artifact(&end.artifact).is_none() {
                return Err(GraphError::UnknownArtifact(end.to_string()).into());
            }
        }
        let mut links = self.links.clone();
        links.add(link)?;
        let previous = std::mem::replace(&mut self.links, links);
        if let Err(e) = self.write_links() {
            self.links = previous;
            return Err(e);
        }
        Ok(())
    }

    fn mv_dir(&self, name: &str) -> PathBuf {
        self.mvx_dir().join("multiverses").join(name)
    }

    fn write_manifest(&self) -> Result<(), StoreError> {
        let m = Manifest {
            format_version: FORMAT_VERSION.into(),
            multiverses: self.universe.keys().cloned().collect(),
        };
        let text = serde_json::to_string_pretty(&m).expect("manifest serializes");
        write_atomic(&self.mvx_dir().join("manifest.json"), text.as_bytes())
    }

    fn write_links(&self) -> Result<(), StoreError> {
        write_atomic(
            &self.mvx_dir().join("links.json"),
            self.links.to_json().as_bytes(),
        )
    }

    fn write_slice(&self, mv: &str, slice: &Slice) -> Result<(), StoreError> {
        let dir = self.mv_dir(mv);
        for (name, a) in slice.artifacts() {
            let entry = artifact_entry(slice.version(), name, a);
            match a.as_ref() {
                Artifact::Metamodel(mm) => {
                    write_atomic(&dir.join(&entry.path), mm.to_json().as_bytes())?
                }
                Artifact::Model(m) => write_atomic(&dir.join(&entry.path), m.to_json().as_bytes())?,
                Artifact::Blob(b) => {
                    write_atomic(&dir.join(&entry.path), &b.bytes)?;
                    if let (Some(ex), Some(p)) = (&b.exports, &entry.exports) {
                        write_atomic(&dir.join(p), ex.to_json().as_bytes())?;
                    }
                }
            }
        }
        Ok(())
    }

    fn write_graph(&self, mv: &Multiverse) -> Result<(), StoreError> {
        let mut transitions = Vec::new();
        for t in mv.transitions() {
            let mut first = true;
            let mut evolution_links = Vec::new();
            for l in &t.evolution_links {
                let (correspondence, delta_ref) = match &l.correspondence {
                    Correspondence::Identity => ("identity", None),
                    Correspondence::Changed => ("changed", None),
                    Correspondence::Delta(d) => {
                        let rel = format!(
                            "deltas/{}/{}",
                            mv.name(),
                            delta_file_name(&t.from, &t.to, &l.artifact, first)
                        );
                        first = false;
                        write_atomic(&self.mvx_dir().join(&rel), d.to_json().as_bytes())?;
                        ("delta", Some(rel))
                    }
                };
                evolution_links.push(LinkEntry {
                    artifact: l.artifact.clone(),
                    correspondence: correspondence.into(),
                    delta_ref,
                });
            }
            transitions.push(TransitionEntry {
                from: t.from.clone(),
                to: t.to.clone(),
                rationale: t.rationale.clone(),
                evolution_links,
            });
        }
        let graph = GraphFile {
            name: mv.name().to_string(),
            slices: mv
                .slices()
                .map(|s| SliceEntry {
                    version: s.version().to_string(),
                    artifacts: s
                        .artifacts()
                        .iter()
                        .map(|(n, a)| (n.clone(), artifact_entry(s.version(), n, a)))
                        .collect(),
                    internal_refs: s.internal_refs().to_vec(),
                })
                .collect(),
            transitions,
        };
        let text = serde_json::to_string_pretty(&graph).expect("graph serializes");
        write_atomic(&self.mv_dir(mv.name()).join("graph.json"), text.as_bytes())
    }
}

fn artifact_entry(version: &str, name: &str, a: &Artifact) -> ArtifactEntry {
    match a {
        Artifact::Blob(b) => {
            let dir = format!("slices/{version}/blobs/{name}");
            ArtifactEntry {
                path: format!("{dir}/{}", b.file_name),
                kind: ArtifactKind::Blob,
                exports: b.exports.as_ref().map(|_| format!("{dir}/exports.json")),
            }
        }
        _ => ArtifactEntry {
            path: format!("slices/{version}/{name}.json"),
            kind: a.kind(),
            exports: None,
        },
    }
}

fn read_repo_file(path: &Path) -> Result<String, StoreError> {
    match fs::read_to_string(path) {
        Ok(t) => Ok(t),
        Err(e) if e.kind() == io::ErrorKind::NotFound => Err(StoreError::corrupt(path, "missing")),
        Err(e) => Err(StoreError::Io {
            path: path.to_path_buf(),
            source: e,
        }),
    }
}

fn load_multiverse(mvx: &Path, name: &str) -> Result<Multiverse, StoreError> {
    let dir = mvx.join("multiverses").join(name);
    let graph_path = dir.join("graph.json");
    let text = read_repo_file(&graph_path)?;
    let graph: GraphFile =
        serde_json::from_str(&text).map_err(|e| StoreError::corrupt(&graph_path, e))?;
    if graph.name != name {
        return Err(StoreError::corrupt(
            &graph_path,
            format!("names multiverse `{}`", graph.name),
        ));
    }
    let missing =
        |p: &Path| StoreError::corrupt(&graph_path, format!("dangling reference {}", p.display()));
    let mut slices = Vec::new();
    for s in graph.slices {
        let mut artifacts = BTreeMap::new();
        for (aname, entry) in s.artifacts {
            let file = contained(&dir, &entry.path, &graph_path)?;
            if !file.is_file() {
                return Err(missing(&file));
            }
            let artifact = match entry.kind {
                ArtifactKind::Blob => {
                    let bytes = fs::read(&file).map_err(StoreError::io(&file))?;
                    let exports = match &entry.exports {
                        Some(rel) => {
                            let p = contained(&dir, rel, &graph_path)?;
                            if !p.is_file() {
                                return Err(missing(&p));
                            }
                            let text = fs::read_to_string(&p).map_err(StoreError::io(&p))?;
                            Some(
                                Metamodel::from_json(&text)
                                    .map_err(|e| StoreError::corrupt(&p, e))?,
                            )
                        }
                        None => None,
                    };
                    Artifact::Blob(Blob {
                        file_name: file
                            .file_name()
                            .expect("file")
                            .to_string_lossy()
                            .to_string(),
                        bytes,
                        exports,
                    })
                }
                kind => {
                    let text = fs::read_to_string(&file).map_err(StoreError::io(&file))?;
                    parse_json_artifact(&file, &text, Some(kind))
                        .map_err(|e| StoreError::corrupt(&file, e))?
                }
            };
            artifacts.insert(aname, artifact);
        }
        slices.push(
            Slice::new(&s.version, artifacts, s.internal_refs)
                .map_err(|e| StoreError::corrupt(&graph_path, e))?,
        );
    }
    let mut transitions = Vec::new();
    for t in graph.transitions {
        let mut evolution_links = Vec::new();
        for l in t.evolution_links {
            let correspondence = match (l.correspondence.as_str(), &l.delta_ref) {
                ("identity", None) => Correspondence::Identity,
                ("changed", None) => Correspondence::Changed,
                ("delta", Some(rel)) => {
                    let p = contained(mvx, rel, &graph_path)?;
                    if !p.is_file() {
                        return Err(missing(&p));
                    }
                    let text = fs::read_to_string(&p).map_err(StoreError::io(&p))?;
                    let d = Delta::from_json(&text).map_err(|e| StoreError::corrupt(&p, e))?;
                    if d.from != t.from || d.to != t.to {
                        return Err(StoreError::corrupt(
                            &p,
                            format!("labelled {}..{}", d.from, d.to),
                        ));
                    }
                    Correspondence::Delta(d)
                }
                (other, _) => {
                    return Err(StoreError::corrupt(
                        &graph_path,
                        format!("bad correspondence `{other}` for {}", l.artifact),
                    ))
                }
            };
            evolution_links.push(EvolutionLink {
                artifact: l.artifact,
                correspondence,
            });
        }
        transitions.push(DesignTransition {
            from: t.from,
            to: t.to,
            rationale: t.rationale,
            evolution_links,
        });
    }
    Multiverse::from_parts(name, slices, transitions)
        .map_err(|e| StoreError::corrupt(&graph_path, e))
}
