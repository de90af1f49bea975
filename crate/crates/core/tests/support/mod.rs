//! Independent reference implementations shared by integration tests.
#![allow(dead_code)]

pub mod oracles;
