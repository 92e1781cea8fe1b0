//! Core library for timing-aware recurrent modeling.
//!
//! The crate is organized around one idea: treat event timing as a
//! computable quantity. An LSTM backbone gains a time-transformation gate
//! that rescales the cell state by `exp(-gamma_i)` per step, the
//! accumulated coefficients define a per-individual relative timeline, and
//! excess kurtosis of event positions on that timeline ("timing
//! attention") drives greedy trajectory discovery. Supporting modules
//! provide hand-derived backpropagation with finite-difference
//! verification, an ODE oracle for the de-damping construction, cohort
//! generators and CSV ingestion, and survival-analysis evaluation.

pub mod attention;
pub mod cells;
pub mod grad;
pub mod cohort;
pub mod numkit;
pub mod timeline;
