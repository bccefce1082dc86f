//! Writes the bundled scenarios as JSON into `crates/core/scenarios/`.

use std::path::Path;

fn main() -> gronav::Result<()> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios");
    for s in gronav::scenarios::bundled() {
        let path = dir.join(format!("{}.json", s.name));
        s.save(&path)?;
        println!("{}", path.display());
    }
    Ok(())
}
