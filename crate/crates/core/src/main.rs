// Copyright 2026 Gravdec Contributors
// SPDX-License-Identifier: Apache-2.0

fn main() {
    let code = gravdec::cli::run(std::env::args_os().collect());
    std::process::exit(code);
}
