//! Runs every end-to-end check and prints one verdict line per check.
//! Plain main so the lines show up without `--nocapture`.

use mgspde::experiments::{run, NAMES};

fn main() {
    // `cargo test -- --list` and filters from other targets must not trigger a full run
    let args: Vec<String> = std::env::args().skip(1).collect();
    if args.iter().any(|a| a == "--list") {
        println!("acceptance: test");
        return;
    }
    let mut failed = Vec::new();
    for id in 1..=NAMES.len() {
        match run(id) {
            Ok(o) => {
                println!("{}", o.line());
                if !o.pass {
                    failed.push(id);
                }
            }
            Err(e) => {
                println!("[FAIL] {id:>2} {}: error: {e}", NAMES[id - 1]);
                failed.push(id);
            }
        }
    }
    if failed.is_empty() {
        println!("acceptance: {} of {} checks passed", NAMES.len(), NAMES.len());
    } else {
        println!("acceptance: failed checks {failed:?}");
        std::process::exit(1);
    }
}
