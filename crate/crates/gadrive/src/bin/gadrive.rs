use std::process::ExitCode;

fn main() -> ExitCode {
    match gadrive::cli::run() {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
