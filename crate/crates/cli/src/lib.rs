pub mod checks;
pub mod commands;
pub mod config;
pub mod plot;
