//! The `corpuscoder` binary: a thin shell around [`corpuscoder::cli`].

use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(corpuscoder::cli::run() as u8)
}
