//! Drone base station (DBS) trajectory design as an episodic decision problem,
//! solved with vanilla policy gradient and with meta-gradient policy gradient
//! (MGPG), which tunes the return discount online by cross-validating each
//! policy update on a fresh rollout.
//!
//! The crate is `no_std` + `alloc` when built without the default `std`
//! feature. All floating point transcendental functions go through [`libm`],
//! so results are bit-identical with and without `std`.
//!
//! Layout:
//!
//! * [`scenario`]: clusters, user requests, the uplink channel, hover and
//!   trajectory timing, and the service success rate.
//! * [`mdp`]: states, feasibility-masked actions, transitions, rollouts and the
//!   exhaustive optimum for tiny instances.
//! * [`policy`]: a one-hidden-layer softmax network with hand-written
//!   backpropagation of `log pi(a|s)`.
//! * [`learner`]: returns, the policy gradient, the meta-gradient of the
//!   discount and the two training loops.
//! * [`metrics`]: per-episode records and convergence statistics.

#![cfg_attr(not(feature = "std"), no_std)]
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod learner;
pub mod math;
pub mod mdp;
pub mod metrics;
pub mod policy;
pub mod rng;
pub mod scenario;

pub use learner::{
    meta_grad, mgpg_train, policy_objective_grad, returns, vanilla_pg_train, Algorithm, FreshRealizations,
    LearnerConfig, LearnerError, MetaSign, RealizationStream, Trainer,
};
pub use mdp::{
    enumerate_optimal, feasible_actions, rollout, step, Action, ActionMask, EnvState, Experience, Location, MdpError,
    Policy, State, Step,
};
pub use metrics::{episodes_to_converge, EpisodeRecord, RunMetrics};
pub use policy::{Architecture, GradientVec, PolicyError, PolicyParams};
pub use scenario::{
    generate_realization, ChannelParams, Geometry, Point2, Realization, ScenarioError, ScenarioSpec, UserRequest,
};
