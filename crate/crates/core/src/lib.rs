pub mod accel;
pub mod analysis;
pub mod bench;
pub mod cfg;
pub mod config;
pub mod cosim;
pub mod fixtures;
pub mod fuzz;
pub mod hwmodel;
pub mod jir;
pub mod transform;
