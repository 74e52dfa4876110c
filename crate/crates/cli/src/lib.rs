//! Library surface of the command-line tool: the on-disk interchange
//! format. The binary in `main.rs` adds argument parsing and dispatch.

pub mod format;
