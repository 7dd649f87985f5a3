//! Offline trajectory planning for linear systems under Signal Temporal Logic
//! specifications, with continuous-time guarantees.
//!
//! Controls are piecewise constant (zero-order hold) on a time grid. STL
//! predicates are enforced at grid nodes through a big-M mixed-integer
//! encoding, while per-window barrier lower bounds keep `Always` requirements
//! satisfied *between* grid nodes. The resulting mixed-integer quadratic
//! program is solved by an embedded branch-and-bound engine, and every plan is
//! re-checked by an independent continuous-time monitor built on the
//! closed-form ZOH solution of the dynamics.
//!
//! Modules follow the pipeline order:
//!
//! * [`lin_dynamics`] — exact ZOH discretization and modal decomposition,
//! * [`stl`] — formula parsing, normalization, grounding, discrete robustness,
//! * [`encoder`] — translation of grounded STL + barrier windows into a MIQP,
//! * [`miqp`] — QP relaxation solver, branch-and-bound, LP export,
//! * [`monitor`] — continuous-time verification of planned trajectories,
//! * [`scenario`] / [`pipeline`] — file formats and end-to-end entry points.

pub mod encoder;
pub mod examples;
pub mod lin_dynamics;
pub mod miqp;
pub mod monitor;
pub mod pipeline;
pub mod scenario;
pub mod stl;

pub use encoder::{build_miqp, EncodedModel, EncodingConfig};
pub use lin_dynamics::{LinearSystem, ModeDecomposition, TimeGrid};
pub use miqp::{branch_and_bound, export_lp, solve_qp, MiqpModel, Solution, SolveStatus};
pub use monitor::{check_continuous, Trajectory, Verdict};
pub use pipeline::{
    run_check, run_export, run_plan, write_outputs, CheckReport, PipelineError, RunOptions,
    RunReport,
};
pub use scenario::Scenario;
pub use stl::{Formula, Predicate};
