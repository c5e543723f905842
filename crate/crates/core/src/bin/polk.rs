use std::io;

fn main() {
    let code = polk::cli::run(std::env::args().collect(), &mut io::stdout(), &mut io::stderr());
    std::process::exit(code);
}
