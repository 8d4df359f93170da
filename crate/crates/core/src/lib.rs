//! Pole-assignment control of equilibrium selection in a 5-strategy
//! evolutionary game: game definition, replicator dynamics, controller
//! design, agent-based sessions and the measurement suite.
//!
//! Numerical code is generic over the scalar type; the aliases below fix the
//! common choices.

pub mod agents;
pub mod controller;
pub mod dynamics;
pub mod error;
pub mod game;
pub mod measurements;
pub mod scalar;

pub use error::{Error, Result};

/// Exact rational scalar used for payoff identities.
pub type Rational = num_rational::Rational64;

pub type Payoffs = game::PayoffMatrix<f64>;
pub type ExactPayoffs = game::PayoffMatrix<Rational>;
pub type Payoffs32 = game::PayoffMatrix<f32>;

pub type Point = game::SimplexPoint<f64>;
pub type ExactPoint = game::SimplexPoint<Rational>;
pub type Point32 = game::SimplexPoint<f32>;

pub type Design = controller::ControlDesign<f64>;
pub type Design32 = controller::ControlDesign<f32>;

pub type Series = measurements::StateSeries<f64>;
pub type ExactSeries = measurements::StateSeries<Rational>;
