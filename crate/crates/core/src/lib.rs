pub mod analysis;
pub mod automata;
pub mod config;
pub mod grid;
pub mod harness;
pub mod oracle;
pub mod product;
pub mod seed;
pub mod stl;
pub mod trainer;
