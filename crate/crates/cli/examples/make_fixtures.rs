//! Writes the bundled synthetic fixtures: `cargo run --example make_fixtures -- <dir>`.

fn main() {
    let dir = std::env::args().nth(1).unwrap_or_else(|| "fixtures".into());
    let dir = std::path::PathBuf::from(dir);
    match vistrace_core::synth::write_fixtures(&dir) {
        Ok(paths) => {
            for p in paths {
                println!("{}", p.display());
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(2);
        }
    }
}
