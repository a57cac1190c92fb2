// SPDX-License-Identifier: MIT OR Apache-2.0

fn main() {
    std::process::exit(rivalry_tools::cli::main_with_args(std::env::args_os()));
}
