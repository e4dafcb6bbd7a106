pub mod check;
pub mod error;
pub mod harness;
pub mod output;
pub mod spec;
