//! Drives the command-line pipeline in-process on a tiny run, the same as
//! invoking the `persona` binary once per stage.
//!
//!     cargo run --release --example command_line

fn main() {
    let dir = std::env::temp_dir().join("persona-example-run");
    let out = dir.to_string_lossy().into_owned();
    let common = [
        "--output-dir", &out,
        "--seeds", "0",
        "--groups", "3",
        "--set", "mixture.archetypes=3",
        "--set", "mixture.item_clusters=12",
        "--set", "mixture.devices_per_archetype=8",
        "--set", "mixture.seq_len=50",
    ];
    for stage in ["gen-data", "train-dam", "train-editor", "partition", "build-groups", "simulate", "eval"] {
        let argv = std::iter::once("persona").chain([stage]).chain(common);
        let code = persona::cli::dispatch(argv);
        println!("-- {stage} exited with {code}");
        if code != 0 {
            std::process::exit(code);
        }
    }
    println!("artifacts and manifest.json are in {out}");
}
