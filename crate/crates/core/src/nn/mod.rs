pub mod checkpoint;
pub mod ops;
pub mod refnet;
