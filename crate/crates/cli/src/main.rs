use std::io::{self, Write};

fn main() {
    let mut input = io::stdin().lock();
    let mut out = io::stdout().lock();
    let mut err = io::stderr().lock();
    let code = pcd_gateway::cli::run(
        std::env::args_os(),
        &mut pcd_gateway::cli::Io {
            input: &mut input,
            out: &mut out,
            err: &mut err,
        },
    );
    // exit skips destructors
    let _ = out.flush();
    std::process::exit(code);
}
