//! A small reverse-mode automatic differentiation engine.
//!
//! Values are row-major 2-D tensors (vectors are `1 x n`). A [`Graph`] records
//! every primitive evaluated eagerly during a forward pass and replays the
//! records in reverse in [`Graph::backward`].

mod adam;
mod gradcheck;
pub(crate) mod graph;
mod params;
mod schedule;
mod tensor;

pub use adam::{Adam, AdamConfig};
pub use gradcheck::{
    grad_check, relative_error, CoordinateCheck, Evaluation, GradCheckConfig, GradCheckError, GradCheckReport, ParamCheck,
};
pub use graph::{Gradients, Graph, Reduce, Var};
pub use params::{Init, ParamId, ParameterStore};
pub use schedule::lr_at_epoch;
pub use tensor::{Real, Tensor};
