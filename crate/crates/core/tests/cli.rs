use std::process::Command;

fn persona(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_persona")).args(args).output().unwrap()
}

#[test]
fn help_exits_zero_with_subcommands() {
    let out = persona(&["--help"]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8_lossy(&out.stdout);
    for sub in ["gen-data", "train-dam", "train-editor", "partition", "build-groups", "simulate", "eval", "sweep", "latency"] {
        assert!(text.contains(sub), "help lacks {sub}");
    }
}

#[test]
fn usage_errors_exit_one_with_help() {
    for args in [&["--bogus", "eval"][..], &["frobnicate"], &[], &["sweep"], &["sweep", "--axis", "colour"]] {
        let out = persona(args);
        assert_eq!(out.status.code(), Some(1), "{args:?}");
        assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"), "{args:?}");
    }
}

#[test]
fn runtime_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().to_string_lossy().into_owned();
    // a later stage without its inputs
    let out = persona(&["simulate", "--output-dir", &out_dir]);
    assert_eq!(out.status.code(), Some(2));
    // a config key that does not exist
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "no_such_key = 1\n").unwrap();
    let out = persona(&["gen-data", "--config", &cfg.to_string_lossy(), "--output-dir", &out_dir]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn gen_data_writes_manifest_and_csv() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().to_string_lossy().into_owned();
    let out = persona(&["gen-data", "--output-dir", &out_dir, "--seeds", "0,1", "--set", "mixture.archetypes=2"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["config.toml", "manifest.json", "seed-0/interactions.csv", "seed-1/labels.csv"] {
        assert!(dir.path().join(f).exists(), "missing {f}");
    }
    let saved = persona::cli::RunConfig::load(&dir.path().join("config.toml")).unwrap();
    assert_eq!(saved.mixture.archetypes, 2);
    assert_eq!(saved.seeds, vec![0, 1]);
}
