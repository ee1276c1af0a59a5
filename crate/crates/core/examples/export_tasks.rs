//! Regenerates the committed stand-in task files under `tasks/`.
//!
//! Usage: `cargo run -p dtcontrol --example export_tasks -- [outdir]`
//! (default outdir: `tasks`). The emitted JSON is deterministic, so a clean
//! checkout reproduces the committed files byte for byte.

use dtcontrol::data::{builtin_task, builtin_task_names};

fn main() {
    let outdir = std::env::args()
        .nth(1)
        .unwrap_or_else(|| "tasks".to_string());
    std::fs::create_dir_all(&outdir).expect("create output directory");
    for name in builtin_task_names() {
        let task = builtin_task(name).expect("builtin task");
        let json = serde_json::to_string(&task).expect("serialize task");
        let path = format!("{outdir}/{name}.json");
        std::fs::write(&path, json + "\n").expect("write task file");
        println!("wrote {path}");
    }
}
