//! Correspondence-guided reference inpainting on a desk-scale diffusion simulator.
//!
//! The reference and target images are stitched side by side into one token
//! grid. Self-attention between the halves is read out every denoising step,
//! accumulated into a matching map, turned into a per-token correspondence
//! field, refined (dominant-token filtering and consensus-weighted smoothing),
//! and fed back into the next step as an additive attention mask and as a
//! gradient objective on the evolving latent.
//!
//! The crate is `no_std` (with `alloc`). Wall-clock timing and all IO live in
//! the `corrguide` companion crate.

#![cfg_attr(not(any(test, feature = "std")), no_std)]
#![deny(unsafe_code)]

extern crate alloc;

pub mod attn;
pub mod corr;
pub mod domain;
pub mod error;
pub mod eval;
pub mod guide;
pub mod mat;
pub mod synthdata;
pub mod tape;
pub mod toydiff;

pub use domain::{
    AttentionKind, AttentionMap, AttentionMask, Correspondence, CorrespondenceField,
    GridShape, GuidanceConfig, Half, LatentTensor, MatchingMap, TokenCoord, NEG_INF,
};
pub use error::{Error, Result};
