//! Reinforcement-learning teachers that choose curriculum-ordered training data
//! for a student classifier.
//!
//! The student's weights are summarised into a fixed-length state vector; a DDPG
//! teacher picks a window `(center, width)` over the difficulty-sorted training
//! set, a DQN teacher picks one of `N` precomputed batches. Rewards are the change
//! in training accuracy weighted by validation accuracy.

pub mod error;
pub mod nncore;

pub use error::{Error, Result};
pub mod curriculum;
pub mod env;
pub mod replay;
pub mod student;
pub mod teacher_ddpg;
pub mod teacher_dqn;
pub mod harness;
