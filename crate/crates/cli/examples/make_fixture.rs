//! Regenerate the synthetic fixture corpus.
//!
//! ```text
//! cargo run -p latticegen-cli --example make_fixture -- crates/cli/fixtures/corpus [params.json]
//! ```

use std::fs;
use std::path::PathBuf;

use anyhow::Context;
use latticegen_cli::fixture::{generate, FixtureParams};

fn main() -> anyhow::Result<()> {
    let mut args = std::env::args().skip(1);
    let out = PathBuf::from(args.next().context("usage: make_fixture OUT_DIR [PARAMS_JSON]")?);
    let params = match args.next() {
        Some(p) => serde_json::from_str(&fs::read_to_string(&p)?)?,
        None => FixtureParams::default(),
    };
    let corpus = generate(&params);
    fs::create_dir_all(&out)?;
    for (name, lines) in [("train", &corpus.train), ("dev", &corpus.dev), ("test", &corpus.test)] {
        fs::write(out.join(format!("{name}.txt")), lines.join("\n") + "\n")?;
    }
    fs::write(
        out.join("params.json"),
        serde_json::to_string_pretty(&params)? + "\n",
    )?;
    Ok(())
}
