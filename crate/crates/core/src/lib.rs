//! Self-supervised layered motion segmentation of event-camera streams.
//!
//! A window of events is explained by two affine motion layers. Per-pixel
//! logits pick a layer through softmax and maxout, the resulting combined flow
//! warps every event to the start and end of the window, and the fit
//! minimizes the squared per-pixel average timestamp of the warped events.
//! Well-aligned (deblurred) events give low loss, and the mask that achieves
//! it is the segmentation.
//!
//! Modules:
//!
//! - [`event`], [`io`] – event types, windows, and file formats;
//! - [`voxel`] – B-bin event volume;
//! - [`affine`], [`layers`] – motion models, masks, and flow composition;
//! - [`objective`] – warp, average-timestamp images, loss and gradient;
//! - [`assign`] – translation sweep and per-pixel layer labelling;
//! - [`fit`] – Adam over the affine parameters, relabelling the logit grid
//!   as it goes;
//! - [`sim`] – a small 2D event renderer with ground truth;
//! - [`metrics`] – IoU and detection rate.
//!
//! # Features
//!
//! - `parallel` *(default)* – runs the per-event and per-row loops on rayon.
//!   Results are bit-identical to the sequential path; see [`exec`].

pub mod affine;
pub mod assign;
pub mod error;
pub mod event;
pub mod exec;
pub mod fit;
pub mod io;
pub mod layers;
pub mod metrics;
pub mod objective;
pub mod sim;
pub mod voxel;

pub use error::{Error, Result};
pub use exec::Execution;
