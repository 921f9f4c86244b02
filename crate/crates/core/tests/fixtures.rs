use std::path::{Path, PathBuf};

use sandwich_core::scenario::{Scenario, SCHEMA_VERSION};
use serde_json::Value;

fn root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn fixtures() -> Vec<PathBuf> {
    let mut v: Vec<PathBuf> = std::fs::read_dir(root().join("fixtures"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    v.sort();
    v
}

#[test]
fn every_fixture_parses_and_builds() {
    let all = fixtures();
    assert!(all.len() >= 6);
    for p in all {
        let text = std::fs::read_to_string(&p).unwrap();
        let sc = Scenario::from_json(&text).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
        let built = sc.build().unwrap_or_else(|e| panic!("{}: {e}", p.display()));
        for name in sc.payoffs.keys() {
            assert!(built.payoffs.contains_key(name));
        }
        assert_eq!(Scenario::from_json(&sc.to_json()).unwrap(), sc, "{}", p.display());
    }
}

#[test]
fn schema_matches_the_parser() {
    let schema: Value = serde_json::from_str(&std::fs::read_to_string(root().join("schema/scenario.schema.json")).unwrap()).unwrap();
    assert_eq!(schema["properties"]["schema_version"]["const"], SCHEMA_VERSION);
    let props = schema["properties"].as_object().unwrap();
    let required: Vec<&str> = schema["required"].as_array().unwrap().iter().map(|v| v.as_str().unwrap()).collect();
    for p in fixtures() {
        let doc: Value = serde_json::from_str(&std::fs::read_to_string(&p).unwrap()).unwrap();
        let obj = doc.as_object().unwrap();
        for k in obj.keys() {
            assert!(props.contains_key(k), "{}: {k} not in schema", p.display());
        }
        for k in &required {
            assert!(obj.contains_key(*k), "{}: missing {k}", p.display());
        }
    }
}
