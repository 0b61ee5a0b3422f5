//! Every command re-run with the same seed reproduces identical bytes.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::Path;

use fiberwatch_cli::{cmd_calibrate, cmd_eval, cmd_gen, cmd_monitor, cmd_train_ae, cmd_train_diag, Context, RunConfig};

use crate::Outcome;

fn tiny_config() -> RunConfig {
    let mut c = RunConfig::default();
    c.generator.ae_size = 600;
    c.generator.diag_size = 400;
    c.ae_training.max_epochs = 2;
    c.diag_training.max_epochs = 2;
    c.baselines.trees = 10;
    c.baselines.lof_k = 5;
    c.monitor.trace_length_m = 40.0;
    c
}

/// Runs the six commands and returns every produced file by relative path.
fn run_all(out: &Path) -> BTreeMap<String, Vec<u8>> {
    let ctx = Context::new(tiny_config(), Some(99), out.to_path_buf()).expect("valid config");
    let log = &mut io::sink();
    cmd_gen(&ctx, 4, log).expect("gen");
    cmd_train_ae(&ctx, log).expect("train-ae");
    cmd_calibrate(&ctx, log).expect("calibrate");
    cmd_train_diag(&ctx, true, log).expect("train-diag");
    cmd_eval(&ctx, log).expect("eval");
    let mut alerts = Vec::new();
    cmd_monitor(&ctx, &[ctx.trace_dir()], &mut alerts, log).expect("monitor");
    let mut files = BTreeMap::from([("<monitor stdout>".to_string(), alerts)]);
    collect(out, out, &mut files);
    files
}

fn collect(root: &Path, dir: &Path, files: &mut BTreeMap<String, Vec<u8>>) {
    for entry in fs::read_dir(dir).expect("readable output directory") {
        let path = entry.expect("directory entry").path();
        if path.is_dir() {
            collect(root, &path, files);
        } else {
            let rel = path.strip_prefix(root).expect("inside root").to_string_lossy().into_owned();
            files.insert(rel, fs::read(&path).expect("readable output file"));
        }
    }
}

pub fn determinism() -> Outcome {
    let (a, b) = (tempfile::tempdir().expect("tempdir"), tempfile::tempdir().expect("tempdir"));
    let (fa, fb) = (run_all(a.path()), run_all(b.path()));
    let differing: Vec<&String> = fa.keys().filter(|k| fa.get(*k) != fb.get(*k)).collect();
    let same_set = fa.keys().eq(fb.keys());
    Outcome::new(
        same_set && differing.is_empty() && fa.len() > 10,
        format!(
            "{} artifacts compared across two runs, {} differ{}",
            fa.len(),
            differing.len(),
            if same_set { String::new() } else { " (file sets differ)".into() }
        ),
    )
}
