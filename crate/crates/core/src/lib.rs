//! Distributed exact triangle counting on a 2-D cyclic process grid.
//!
//! A graph is relabeled by degree, split into upper and lower triangles,
//! scattered over a `√p × √p` grid of ranks and counted with Cannon-style
//! block shifts. Ranks are threads that talk only through a
//! [`transport::Communicator`].

pub mod driver;
pub mod engine;
pub mod error;
pub mod graph;
pub mod metrics;
pub mod oracle;
pub mod preprocess;
pub mod rmat;
pub mod transport;

pub use driver::{run, RunConfig, RunReport};
pub use engine::{EngineOptions, Enumeration};
pub use error::{Error, Result};
pub use graph::{EdgeList, GraphStats};
