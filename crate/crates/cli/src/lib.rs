//! `crm` command-line driver.

pub mod cli;
pub mod commands;
pub mod config;
