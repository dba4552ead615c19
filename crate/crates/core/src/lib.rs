//! Neural operator surrogates for dynamic magnetic hysteresis.
//!
//! [`material`] synthesizes steady-state B–H loops, [`data`] turns them into
//! training tensors, [`models`] holds the FNO, U-FNO and DeepONet operators
//! built on the [`diffkernel`] autodiff engine, [`train`] fits them and
//! [`metrics`] scores predicted core loss.

pub mod data;
pub mod diffkernel;
pub mod material;
pub mod metrics;
pub mod models;
pub mod train;

/// Coarse failure category, used by front-ends to choose exit codes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Input,
    Numerical,
    Io,
}
