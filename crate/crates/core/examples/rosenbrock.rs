//! Every Rosenbrock preset from (1, −1) for 200 full-batch steps.
//!
//! `cargo run --example rosenbrock -- [out_dir]` also writes one trajectory
//! CSV per preset.

use adamqlr::bench::{run_rosenbrock, RosenbrockPreset};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out_dir = std::env::args().nth(1).map(std::path::PathBuf::from);
    for preset in RosenbrockPreset::ALL {
        let t = run_rosenbrock(&preset.config(), 200, (1.0, -1.0))?;
        let last = t.last();
        let status = t.diverged_at.map_or(String::new(), |s| format!(" (diverged at step {s})"));
        println!("{:<16} f = {:<12.4e} at ({:+.4}, {:+.4}){status}", preset.name(), last.f, last.x, last.y);
        if let Some(dir) = &out_dir {
            t.write_csv(dir.join(format!("{}.csv", preset.name())))?;
        }
    }
    Ok(())
}
