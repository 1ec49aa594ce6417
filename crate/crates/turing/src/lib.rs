//! Visual Turing Test backend: a rater sees real and synthetic slices in a
//! fixed random order and judges each as real/synthetic and
//! tumor/non-tumor; reports tally both confusion matrices.

pub mod engine;
pub mod events;
pub mod server;
pub mod service;

pub use engine::{
    create_session, Ack, ByProvenance, LabelConfusion, LabelErrorBreakdown, NextItem, PoolKind, PoolPaths, Pools,
    Response, SessionItem, Source, SourceConfusion, Status, TuringError, TuringReport, TuringSession,
};
pub use server::{router, serve, DEFAULT_N_PER_POOL};
pub use service::SessionStore;
