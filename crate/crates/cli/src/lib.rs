//! Library surface of the command-line front end: scenario corpus and the
//! JSON report shapes, shared with the integration and acceptance tests.

pub mod report;
pub mod scenarios;
