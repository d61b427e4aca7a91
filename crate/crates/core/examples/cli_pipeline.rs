//! The command-line pipeline driven in-process: synthesize the household
//! planning task, then preprocess, harvest, train, generate and evaluate.

use toolken::cli;

fn main() {
    let dir = tempfile::tempdir().expect("temporary directory");
    let out = dir.path().to_str().expect("utf-8 path").to_string();
    let conf = format!("{out}/run.conf");
    let steps: Vec<Vec<&str>> = vec![
        vec!["synth", "--task", "home", "--out", &out],
        vec!["--config", &conf, "preprocess"],
        vec!["--config", &conf, "harvest"],
        vec!["--config", &conf, "train", "--report", "/dev/null"],
        vec!["--config", &conf, "generate"],
        vec!["--config", &conf, "eval"],
    ];
    for args in steps {
        let code = cli::run(std::iter::once("toolken").chain(args.iter().copied()));
        println!("toolken {} -> exit {code}", args.join(" "));
        if code != cli::EXIT_OK {
            std::process::exit(code);
        }
    }
}
