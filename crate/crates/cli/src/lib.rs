//! Command line verbs and the HTTP completion service.

pub mod commands;
pub mod service;
