//! `morsecell`: command-line front end for the Morse cell toolkit.

pub mod app;
pub mod commands;
pub mod config;
pub mod error;
pub mod output;
pub mod system;
