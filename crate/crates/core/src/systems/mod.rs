//! Black-box systems, reproducible randomness and regions.

pub mod external;
pub mod model;
pub mod region;
pub mod rng;

pub use external::{external_system, ExternalSystem};
pub use model::{
    builtin_system, AffineSystem, BuiltinKind, BuiltinSystem, CountingSystem, System, SystemModel,
    BUILTIN_NAMES,
};
pub use region::{Aabb, Region, SafetySpec};
pub use rng::{NoiseKey, RngStream};
