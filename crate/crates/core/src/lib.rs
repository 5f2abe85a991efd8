//! Routing, charging and infrastructure planning for a mixed-fleet
//! demand-responsive feeder service.

pub mod bilevel;
pub mod charging;
pub mod error;
pub mod instancegen;
pub mod milpexport;
pub mod model;
pub mod oracle;
pub mod preprocess;
pub mod routesched;
pub mod search;

pub use error::*;
pub use model::*;
