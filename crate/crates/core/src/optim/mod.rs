pub mod adadelta;
pub mod lbfgsb;

pub use adadelta::{adadelta_run, AdaDelta, AdaDeltaConfig, EpochSchedule};
pub use lbfgsb::{lbfgsb_minimize, lbfgsb_minimize_with, BoxBounds, LbfgsbConfig, LbfgsbResult};
