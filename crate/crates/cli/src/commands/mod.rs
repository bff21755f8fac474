pub mod data;
pub mod learn;
pub mod nav;
pub mod sift;
