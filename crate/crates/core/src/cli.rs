//! Configuration, oracle suite and result writers behind the command line.

pub mod config;
pub mod oracles;
pub mod output;
