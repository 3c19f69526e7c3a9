pub mod alignment;
pub mod attribution;
pub mod data;
pub mod gateway;
pub mod harness;
pub mod models;
pub mod prompt;
