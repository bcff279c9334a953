pub mod dsl;
pub mod frames;
pub mod geometry;
pub mod linalg;
pub mod soliton;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
