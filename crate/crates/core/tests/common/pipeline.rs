//! Drives the `aesthyper` binary through every subcommand.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_aesthyper"));
    c.env("RUST_LOG", "warn");
    c
}

pub fn run<S: AsRef<std::ffi::OsStr>>(args: &[S]) -> Output {
    bin().args(args).output().expect("binary runs")
}

pub fn run_ok<S: AsRef<std::ffi::OsStr> + std::fmt::Debug>(args: &[S]) {
    let out = run(args);
    assert!(
        out.status.success(),
        "aesthyper {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

/// Shape of the tiny pipeline model.
pub const DIMS: [&str; 12] = [
    "--embedding-dim",
    "16",
    "--styles",
    "4",
    "--comps",
    "3",
    "--buckets",
    "5",
    "--seed",
    "3",
    "--attribute-dim",
    "8",
];
const HEAD: [&str; 4] = ["--hidden-dims", "8,4", "--reduced-dim", "4"];

/// `cmd` followed by `args`, the pipeline dims and `--out out`.
pub fn args(cmd: &str, args: &[&dyn AsRef<std::ffi::OsStr>], out: &Path) -> Vec<std::ffi::OsString> {
    let mut v = vec![cmd.into()];
    v.extend(args.iter().map(|a| a.as_ref().to_os_string()));
    v.extend(DIMS.iter().chain(&HEAD).map(Into::into));
    v.push("--out".into());
    v.push(out.into());
    v
}

/// Runs gen-synth, both training stages, evaluate (model and baseline),
/// predict and export-weights under `root`. Returns the output
/// directory of each step.
pub fn full_pipeline(root: &Path) -> Vec<PathBuf> {
    let dirs: Vec<PathBuf> = ["data", "attr", "model", "eval", "baseline", "predict", "weights"]
        .iter()
        .map(|d| root.join(d))
        .collect();
    let [data, attr, model, eval, base, pred, weights] = <[PathBuf; 7]>::try_from(dirs.clone()).unwrap();
    let emb = data.join("embeddings.csv");
    let split = data.join("split.csv");
    let scores = data.join("scores.csv");
    let ckpt = model.join("model.ckpt");

    run_ok(&args("gen-synth", &[&"--n", &"240", &"--attr-extra", &"120"], &data));
    run_ok(&args(
        "train-attributes",
        &[
            &"--embeddings",
            &emb,
            &"--attributes",
            &data.join("attributes.csv"),
            &"--split",
            &split,
            &"--epochs",
            &"3",
            &"--attr-lr",
            &"1e-3",
        ],
        &attr,
    ));
    run_ok(&args(
        "train-aesthetic",
        &[
            &"--embeddings",
            &emb,
            &"--scores",
            &scores,
            &"--split",
            &split,
            &"--attr-checkpoint",
            &attr.join("attr.ckpt"),
            &"--epochs",
            &"3",
            &"--hyper-lr",
            &"1e-3",
        ],
        &model,
    ));
    run_ok(&args(
        "evaluate",
        &[
            &"--embeddings",
            &emb,
            &"--model",
            &ckpt,
            &"--scores",
            &scores,
            &"--split",
            &split,
            &"--by-attribute",
        ],
        &eval,
    ));
    run_ok(&args(
        "evaluate",
        &[
            &"--embeddings",
            &emb,
            &"--baseline",
            &"--scores",
            &scores,
            &"--split",
            &split,
        ],
        &base,
    ));
    run_ok(&args("predict", &[&"--embeddings", &emb, &"--model", &ckpt], &pred));
    run_ok(&args(
        "export-weights",
        &[&"--embeddings", &emb, &"--model", &ckpt],
        &weights,
    ));
    dirs
}

/// Every file under `dir`, keyed by path relative to `dir`.
pub fn snapshot(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    out
}
