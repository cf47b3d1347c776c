pub mod algebra;
pub mod averages;
pub mod baxterq;
pub mod cli;
pub mod chp;
pub mod linalg;
pub mod model;
pub mod sov;
pub mod spectrum;
pub mod weyl;
