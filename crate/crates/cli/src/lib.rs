//! Batch front end: design reports, oracle checks, simulation, integration,
//! log analysis, figure reproduction and the session server.

pub mod checks;
pub mod manifest;
pub mod parse;
pub mod reproduce;
