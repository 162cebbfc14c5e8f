//! Minimal reverse-mode automatic differentiation for small dense networks.
//!
//! Build a [`Graph`] per forward pass, pull trainable tensors in from a
//! [`ParamStore`], call [`Graph::backward`] on a scalar loss and fold the
//! resulting [`Gradients`] back into the store with
//! [`ParamStore::accumulate`].
//!
//! ```
//! use steerlab_autodiff::{Graph, ParamStore, Tensor};
//!
//! let mut store = ParamStore::new();
//! let x = store.insert("x", Tensor::scalar(3.0)).unwrap();
//! let mut g = Graph::new();
//! let xv = g.param(&store, x);
//! let loss = g.mul(xv, xv).unwrap();
//! let grads = g.backward(loss).unwrap();
//! store.accumulate(&g, &grads);
//! assert_eq!(store.get(x).grad.item(), 6.0);
//! ```
//!
//! There is no implicit broadcasting: shapes must agree exactly, and
//! row-wise expansion goes through [`Graph::repeat_rows`] or
//! [`Graph::expand_add`].

mod checkpoint;
mod error;
mod graph;
mod params;
mod tensor;

pub use checkpoint::{read_checkpoint, write_checkpoint, Metadata, MAGIC, VERSION};
pub use error::{Error, Result};
pub use graph::{Gradients, Graph, Var};
pub use params::{Param, ParamId, ParamStore};
pub use tensor::Tensor;
