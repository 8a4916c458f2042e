#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use smad_core::synth::{write_corpus, SynthSpec};

pub fn smad(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_smad"))
        .args(args)
        .output()
        .expect("spawn smad")
}

pub fn run(args: &[&str]) -> i32 {
    let mut full = vec!["smad"];
    full.extend_from_slice(args);
    smad_cli::run(full)
}

pub fn small_corpus(dir: &Path) -> PathBuf {
    let spec = SynthSpec {
        bonafide: 24,
        per_tool: 12,
        ..SynthSpec::default()
    };
    write_corpus(&spec, dir).expect("corpus").0
}

pub fn s(p: &Path) -> &str {
    p.to_str().expect("utf-8 path")
}
