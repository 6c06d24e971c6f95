use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use mvx_core::fixtures;
use tempfile::TempDir;

struct Env {
    dir: TempDir,
}

impl Env {
    fn root(&self) -> &Path {
        self.dir.path()
    }

    fn file(&self, name: &str, text: &str) -> PathBuf {
        let p = self.root().join("inputs").join(name);
        fs::create_dir_all(p.parent().unwrap()).unwrap();
        fs::write(&p, text).unwrap();
        p
    }

    fn mvx(&self, args: &[&str]) -> Output {
        Command::new(env!("CARGO_BIN_EXE_mvx"))
            .args(args)
            .env("MVX_REPO", self.root())
            .current_dir(self.root())
            .output()
            .unwrap()
    }

    fn ok(&self, args: &[&str]) -> String {
        let out = self.mvx(args);
        assert_eq!(
            out.status.code(),
            Some(0),
            "{args:?}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
        String::from_utf8(out.stdout).unwrap()
    }
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

/// MM: 1.0 -> 2.0 -> 2.1, MyModel@7.2 holding the converter, link `chi` to MM@1.0.
fn running_example() -> Env {
    let env = Env {
        dir: tempfile::tempdir().unwrap(),
    };
    env.ok(&["init"]);
    let mm1 = env.file("v1/mm.json", &fixtures::mm_v1().to_json());
    let mm2 = env.file("v2/mm.json", &fixtures::mm_v2().to_json());
    let mm21 = env.file("v21/mm.json", &fixtures::mm_v21().to_json());
    let hints = env.file("hints.json", &fixtures::merge_hints().to_json());
    let conv = env.file("m/converter.json", &fixtures::converter().to_json());
    let s = |p: &PathBuf| p.to_str().unwrap().to_string();
    env.ok(&["slice", "add", "MM", "1.0", "--artifact", &s(&mm1)]);
    env.ok(&[
        "slice",
        "add",
        "MM",
        "2.0",
        "--parent",
        "1.0",
        "--artifact",
        &s(&mm2),
        "--hints",
        &s(&hints),
        "--rationale",
        "merge port lists",
    ]);
    env.ok(&[
        "slice",
        "add",
        "MM",
        "2.1",
        "--parent",
        "2.0",
        "--artifact",
        &s(&mm21),
    ]);
    env.ok(&["slice", "add", "MyModel", "7.2", "--artifact", &s(&conv)]);
    env.ok(&[
        "link",
        "add",
        "--type",
        "conformance",
        "--from",
        "MyModel@7.2:converter",
        "--to",
        "MM@1.0:mm",
        "--id",
        "chi",
    ]);
    env
}

fn tree(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.join(".mvx")];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.clone(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

#[test]
fn partial_multiverse_spans_branch() {
    let env = running_example();
    assert_eq!(
        env.ok(&["partial", "MM", "1.0", "2.1"]).trim(),
        "1.0 2.0 2.1"
    );
    let v: serde_json::Value =
        serde_json::from_str(&env.ok(&["--json", "partial", "MM", "1.0", "2.1"])).unwrap();
    assert_eq!(v["slices"], serde_json::json!(["1.0", "2.0", "2.1"]));
}

#[test]
fn diff_reports_merge() {
    let env = running_example();
    let out = env.ok(&["--json", "diff", "MM", "1.0", "2.0"]);
    let v: serde_json::Value = serde_json::from_str(&out).unwrap();
    let ops = v["ops"].as_array().unwrap();
    assert_eq!(ops.len(), 1, "{out}");
    assert!(out.contains("MergeFeatures"), "{out}");
}

#[test]
fn migrate_plan_needs_one_decision() {
    let env = running_example();
    let out = env.mvx(&[
        "--json",
        "migrate",
        "MyModel@7.2:converter",
        "--delta",
        "MM:1.0..2.0",
        "--plan",
    ]);
    assert_eq!(code(&out), 1);
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["requiredDecisions"].as_array().unwrap().len(), 1, "{v}");
}

#[test]
fn check_detects_nonconformance_after_metamodel_change() {
    let env = running_example();
    let ok = env.mvx(&[
        "check",
        "--composite",
        "MyModel@7.2",
        "MM@1.0",
        "--type",
        "conformance",
    ]);
    assert_eq!(code(&ok), 0, "{}", String::from_utf8_lossy(&ok.stdout));
    let bad = env.mvx(&[
        "check",
        "--composite",
        "MyModel@7.2",
        "MM@2.0",
        "--type",
        "conformance",
    ]);
    assert_eq!(code(&bad), 1);
    assert!(String::from_utf8_lossy(&bad.stdout).contains("VIOLATED"));
}

#[test]
fn check_rejects_declared_only_link_type() {
    let env = running_example();
    let out = env.mvx(&[
        "check",
        "--composite",
        "MyModel@7.2",
        "MM@1.0",
        "--type",
        "refinement",
    ]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("no evaluator"));
}

#[test]
fn triggers_fire_for_merge() {
    let env = running_example();
    let out = env.mvx(&[
        "triggers",
        "--link-type",
        "conformance",
        "--after",
        "MM@2.0",
    ]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stdout).contains("TRIGGERED"));
}

#[test]
fn full_migration_restores_consistency() {
    let env = running_example();
    let decisions = env.file(
        "decisions.json",
        r#"{"decisions":[{"kind":"select_links","objectId":"converter","feature":"ports","keep":["in1","out1"]}]}"#,
    );
    env.ok(&[
        "migrate",
        "MyModel@7.2:converter",
        "--delta",
        "MM:1.0..2.0",
        "--decisions",
        decisions.to_str().unwrap(),
        "--plan",
    ]);
    let out = env.mvx(&[
        "migrate",
        "MyModel@7.2:converter",
        "--delta",
        "MM:1.0..2.0",
        "--decisions",
        decisions.to_str().unwrap(),
        "--as",
        "8.0",
    ]);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert_eq!(
        code(&out),
        0,
        "{stdout} {}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(stdout.contains("consistency restored"));
    assert!(stdout.contains("chi@8.0"));
    env.ok(&[
        "check",
        "--composite",
        "MyModel@8.0",
        "MM@2.0",
        "--type",
        "conformance",
    ]);
    let log = env.ok(&["log", "MyModel"]);
    assert!(log.contains("8.0 <- 7.2"), "{log}");
}

#[test]
fn eval_and_typecheck() {
    let env = running_example();
    let k = env.file(
        "k.mvc",
        "constraint AtMostTwo on MM { forall s : Service | count(s.ports) <= 2 }\n",
    );
    let k = k.to_str().unwrap();
    env.ok(&["typecheck", k, "--scope", "MM:2.0,2.1"]);
    assert_eq!(
        code(&env.mvx(&["typecheck", k, "--scope", "MM:1.0,2.0"])),
        1
    );
    let out = env.ok(&["types", "MM", "--versions", "2.0,2.1"]);
    assert!(out.contains("Service"), "{out}");
}

#[test]
fn checkout_writes_composite() {
    let env = running_example();
    let out = env.root().join("co");
    env.ok(&[
        "checkout",
        "--composite",
        "MyModel@7.2",
        "MM@1.0",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(out.join("MM/mm.json").exists());
    assert!(out.join("MyModel/converter.json").exists());
    assert!(out.join("composite.json").exists());
    let again = env.mvx(&[
        "checkout",
        "--composite",
        "MM@1.0",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code(&again), 2);
}

#[test]
fn read_only_commands_do_not_write() {
    let env = running_example();
    let before = tree(env.root());
    let k = env.file(
        "k.mvc",
        "constraint A on MM { forall s : Service | s.name == \"x\" }\n",
    );
    let k = k.to_str().unwrap();
    for args in [
        vec!["log", "MM"],
        vec!["diff", "MM", "1.0", "2.1"],
        vec!["partial", "MM", "2.0", "2.1"],
        vec!["link", "list"],
        vec!["check", "--composite", "MyModel@7.2", "MM@2.0"],
        vec![
            "triggers",
            "--link-type",
            "conformance",
            "--after",
            "MM@2.1",
        ],
        vec![
            "migrate",
            "MyModel@7.2:converter",
            "--delta",
            "MM:1.0..2.0",
            "--plan",
        ],
        vec!["types", "MM", "--versions", "1.0,2.0"],
        vec!["typecheck", k, "--scope", "MM:2.0"],
        vec!["eval", k, "--composite", "MyModel@7.2", "MM@1.0"],
    ] {
        let out = env.mvx(&args);
        assert_ne!(
            code(&out),
            2,
            "{args:?}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
        let mut json_args = vec!["--json"];
        json_args.extend(&args);
        let out = env.mvx(&json_args);
        serde_json::from_slice::<serde_json::Value>(&out.stdout)
            .unwrap_or_else(|e| panic!("{args:?}: {e}: {}", String::from_utf8_lossy(&out.stdout)));
    }
    assert_eq!(before, tree(env.root()));
}

#[test]
fn corrupt_repository_exits_3() {
    let env = running_example();
    fs::write(
        env.root().join(".mvx/multiverses/MM/graph.json"),
        "{ not json",
    )
    .unwrap();
    let out = env.mvx(&["log", "MM"]);
    assert_eq!(code(&out), 3, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn usage_errors_exit_2() {
    let env = running_example();
    assert_eq!(code(&env.mvx(&["partial"])), 2);
    assert_eq!(code(&env.mvx(&["frobnicate"])), 2);
    assert_eq!(code(&env.mvx(&["partial", "MM", "9.9"])), 2);
}
