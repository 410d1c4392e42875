//! Compartment-model mathematics: parameters, time grids, the closed-form
//! forward model and its ODE cross-check.

pub mod input;
pub mod model;
pub mod ode;
pub mod params;
pub mod schedule;

pub use input::InputFunction;
pub use model::{model_tac, model_tac_with, ModelOptions, Tac, TacModel, DEFAULT_FINE_STEP_S};
pub use ode::{ode_solve, ode_solve_with, OdeOptions};
pub use params::{impulse_response, macro_ki, multi_clamp, Interval, KineticParams, ParamBounds, PARAM_NAMES};
pub use schedule::{Frame, FrameSchedule};
