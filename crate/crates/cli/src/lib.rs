//! Command-line front end for `infogeo`: JSON model specs in, JSON reports
//! out, plus the `verify-all` acceptance suite.

pub mod commands;
pub mod report;
pub mod spec;
pub mod verify;
