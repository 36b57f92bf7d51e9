use std::io;

use clarifystl_cli::{run, Streams};

fn main() {
    let stdin = io::stdin();
    let code = run(
        std::env::args_os(),
        Streams {
            input: &mut stdin.lock(),
            out: &mut io::stdout(),
            err: &mut io::stderr(),
        },
    );
    std::process::exit(code);
}
