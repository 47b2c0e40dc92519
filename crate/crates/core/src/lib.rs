pub mod nn;
pub mod data;
pub mod model;
pub mod train;
pub mod engine;
pub mod service;
