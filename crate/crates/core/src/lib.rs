//! Sound-commanded robot control: an MFCC front end, a BiLSTM/attention sound
//! encoder, a visual-motor integrator and PPO training in two kinematic
//! simulators, with the harness to train, evaluate and ablate them.

pub mod audio;
pub mod diff;
pub mod envs;
pub mod harness;
pub mod model;
pub mod ppo;
pub mod seeding;
