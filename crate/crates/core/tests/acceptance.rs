use std::process::ExitCode;

use bwla::acceptance::{run_criterion, CRITERIA};

fn main() -> ExitCode {
    // `cargo test -- --list` and filters are not meaningful here
    if std::env::args().any(|a| a == "--list") {
        return ExitCode::SUCCESS;
    }
    let mut failed = 0;
    for (id, name, _) in CRITERIA {
        match run_criterion(id) {
            Ok(outcome) => {
                println!("{}", outcome.line());
                failed += usize::from(!outcome.passed());
            }
            Err(e) => {
                println!("FAIL [{id}] {name}: error: {e}");
                failed += 1;
            }
        }
    }
    println!("{} of {} criteria passed", CRITERIA.len() - failed, CRITERIA.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
