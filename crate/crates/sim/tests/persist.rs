mod common;

use ethanos_core::chain::Engine;
use ethanos_core::storage::KvStore;
use ethanos_sim::persist::{load_store, load_trace, save_json, save_store, save_trace};

#[test]
fn trace_roundtrips_through_a_file() {
    let trace = common::trace(40, 30, 10, 3);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("trace.jsonl");
    save_trace(&path, &trace).unwrap();
    let back = load_trace(&path).unwrap();
    assert_eq!(back.to_jsonl(), trace.to_jsonl());
}

#[test]
fn store_roundtrips_through_a_file() {
    let host = common::host(&common::trace(40, 30, 10, 3), Engine::Ethanos);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("store.db");
    save_store(&path, host.chain.store()).unwrap();
    let back: KvStore = load_store(&path).unwrap();
    assert_eq!(back.stats(), host.chain.store().stats());
    assert_eq!(back.dump(), host.chain.store().dump());
    assert!(load_store(&dir.path().join("missing.db")).is_err());
}

#[test]
fn json_is_written() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("x.json");
    save_json(&path, &vec![1, 2, 3]).unwrap();
    assert_eq!(std::fs::read_to_string(&path).unwrap().split_whitespace().collect::<String>(), "[1,2,3]");
}
