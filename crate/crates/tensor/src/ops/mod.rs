pub mod conv;
pub mod elementwise;
pub mod norm;
pub mod pool;
pub mod resample;
pub mod shape;

pub use conv::ConvSpec;
pub use norm::BatchStats;
