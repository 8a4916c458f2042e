//! Writes the synthetic three-tool corpus: `cargo run -p smad-core --example synth_corpus -- DIR`.

use std::path::PathBuf;

use smad_core::synth::{write_corpus, SynthSpec};

fn main() -> smad_core::Result<()> {
    let dir = std::env::args_os()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("synth-corpus"));
    let (path, manifest) = write_corpus(&SynthSpec::default(), &dir)?;
    println!("{} records -> {}", manifest.len(), path.display());
    Ok(())
}
