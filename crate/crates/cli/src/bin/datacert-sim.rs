//! Serves a built-in model over the line protocol on stdin/stdout, so the
//! external-system path can be exercised without writing a simulator.

use std::process::ExitCode;

use datacert_core::systems::builtin_system;
use datacert_core::systems::external::serve;
use datacert_core::systems::model::BUILTIN_NAMES;

fn main() -> ExitCode {
    let Some(name) = std::env::args().nth(1) else {
        eprintln!("usage: datacert-sim <{}>", BUILTIN_NAMES.join("|"));
        return ExitCode::from(1);
    };
    let result = builtin_system(&name).and_then(|sys| {
        serve(
            sys.as_ref(),
            std::io::stdin().lock(),
            std::io::stdout().lock(),
        )
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("datacert-sim: {e}");
            ExitCode::from(1)
        }
    }
}
