//! Exemplar-based image colourisation with axial attention.
//!
//! The crate is organised bottom-up: [`tensor`] and [`autodiff`] provide the
//! numeric substrate, [`colorspace`] handles Lab conversion, [`backbone`],
//! [`attention`] and [`network`] build the colourisation network, [`losses`]
//! and [`trainer`] implement the multi-scale objective and its optimisation,
//! and [`metrics`] and [`recommender`] cover evaluation and reference
//! selection.

pub mod attention;
pub mod autodiff;
pub mod backbone;
pub mod checkpoint;
pub mod colorspace;
pub mod complexity;
pub mod config;
pub mod data;
pub mod discriminator;
pub mod error;
pub mod gradsuite;
pub mod image_io;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod network;
pub mod ntf;
pub mod params;
pub mod recommender;
pub mod tensor;
pub mod trainer;

pub use autodiff::{Activation, Graph, Var};
pub use error::{Error, Result};
pub use colorspace::LabImage;
pub use config::Config;
pub use model::Model;
pub use network::{Colorizer, PredictionSet};
pub use params::{ParamId, ParamStore};
pub use tensor::Tensor;
