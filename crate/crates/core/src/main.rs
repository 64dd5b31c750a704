use std::process::ExitCode;
use std::sync::atomic::{AtomicBool, Ordering};

static CANCEL: AtomicBool = AtomicBool::new(false);

fn main() -> ExitCode {
    // A second Ctrl-C falls through to the default handler.
    let _ = ctrlc::set_handler(|| {
        if CANCEL.swap(true, Ordering::Relaxed) {
            std::process::exit(130);
        }
    });
    let code = sgd_sde_lab::cli::main_with_args(std::env::args_os(), Some(&CANCEL));
    ExitCode::from(code as u8)
}
