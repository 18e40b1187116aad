//! Minimal dense-tensor reverse-mode differentiation and the layers built
//! on top of it. Everything runs in f64 on a per-forward-pass tape.

mod gradcheck;
pub mod layers;
mod params;
mod tape;

pub use gradcheck::grad_check;
pub use params::{Param, ParamPayload, Params, INIT_SCALE};
pub use tape::{Tape, TensorId};
