//! Mock analysis slave: reads call-syntax expressions on stdin.
//! `--ignore-quit` makes it refuse to exit on `q()`; `--delay-ms N` pauses
//! before every line.

use hdb_testkit::mock_slave::{run, MockOptions};

fn main() {
    let opts = MockOptions::from_args(std::env::args().skip(1));
    let stdin = std::io::stdin();
    let code = run(stdin.lock(), std::io::stdout(), std::io::stderr(), opts);
    std::process::exit(code);
}
