//! Gradient descent laboratory for two-layer absolute-value networks with
//! Gaussian inputs: exact population engine, sampled engine, initialisers,
//! trainer and numerical checks of the landscape properties.

pub mod empirical;
pub mod error;
pub mod init;
pub mod io;
pub mod kernels;
pub mod linalg;
pub mod mc;
pub mod net;
pub mod population;
pub mod rng;
pub mod svg;
pub mod train;
pub mod verify;

pub use error::{Error, Result};
pub use net::{
    angle_up_to_sign, delta_max, effective_neuron, optimal_linear_beta, partition_students,
    NeuronPartition, RandomTeacherSpec, Separation, StudentNetwork, TeacherNetwork, WeightVector,
};
