use std::process::ExitCode;

fn main() -> ExitCode {
    match t2smark_cli::commands::run_args(std::env::args_os()) {
        Ok(out) => {
            print!("{out}");
            if !out.ends_with('\n') {
                println!();
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
