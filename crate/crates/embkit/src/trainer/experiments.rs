//! Experiment runners.
