//! Spatio-temporal graph forecasting with a fully learnable symmetric
//! node-interaction layer feeding a GRU sequence model, plus the spectral and
//! community-structure analysis tools used to interpret what the interaction
//! matrices learn.

pub mod bundle;
pub mod community;
pub mod graphio;
pub mod model;
pub mod numkern;
pub mod spatial;
pub mod spectra;
pub mod temporal;
pub mod trainer;
