use std::path::PathBuf;

use harness::config::RunConfig;

fn dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

#[test]
fn reference_file_lists_the_defaults() {
    let c = RunConfig::load(&dir().join("reference.toml")).unwrap();
    assert_eq!(c, RunConfig::default());
}

#[test]
fn shipped_configs_load() {
    let mut n = 0;
    for e in std::fs::read_dir(dir()).unwrap() {
        let p = e.unwrap().path();
        if p.extension().is_some_and(|x| x == "toml") {
            let c = RunConfig::load(&p).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
            c.build_env().unwrap();
            n += 1;
        }
    }
    assert!(n >= 10);
}
