//! Lightweight skin-lesion segmentation network built on `lssf-tensor`.
//!
//! ```
//! use lssf_core::{config::NetworkConfig, network::Model};
//! use lssf_tensor::{Mode, Tensor};
//!
//! let mut model = Model::new(NetworkConfig::tiny(16)).unwrap();
//! let x = Tensor::full([1, 16, 16, 3], 0.5f32);
//! let p = model.predict(&x, Mode::Infer, 0).unwrap();
//! assert_eq!(p.shape(), &[1, 16, 16, 1]);
//! ```

pub mod attention;
pub mod blocks;
pub mod cfma;
pub mod checkpoint;
pub mod config;
pub mod context;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod loss;
pub mod metrics;
pub mod network;
pub mod optim;
pub mod params;
pub mod profile;
pub mod selftest;
pub mod train;

pub use error::{LssfError, Result};
