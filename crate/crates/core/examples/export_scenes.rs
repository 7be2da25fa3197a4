//! Writes the canonical scene descriptions as TOML files.
//!
//! Usage: `cargo run --example export_scenes -- <dir>`

use std::path::PathBuf;

use solmplan::scene::canonical;

fn main() {
    let dir = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "scenes".into()));
    std::fs::create_dir_all(&dir).expect("create output directory");
    let mut scenes = canonical::comparison_scenes().to_vec();
    scenes.push(canonical::two_corridor());
    for desc in scenes {
        let path = dir.join(format!("{}.toml", desc.name));
        std::fs::write(&path, desc.to_toml_string()).expect("write scene");
        println!("{}", path.display());
    }
}
