//! Probabilistic active meta-learning for families of dynamical systems.
//!
//! A multi-task sparse variational GP learns the shared dynamics of a task
//! family while a low-dimensional latent embedding per task captures what
//! differs between tasks. A descriptor head ties embeddings to observable
//! task descriptors, so the model can propose which task to learn next by
//! scoring points in latent space.

pub mod descriptor;
pub mod diffcore;
pub mod envs;
pub mod gp;
pub mod harness;
pub mod objective;
pub mod selection;
pub mod taskspace;
