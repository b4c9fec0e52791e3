//! Numerical constants shared by all operations.

/// Relative step for first-order central differences: `h = 1e-5 * max(1, |x|)`.
pub const FD_FIRST_REL: f64 = 1e-5;

/// Relative step for the outer difference of nested second derivatives.
pub const FD_SECOND_REL: f64 = 1e-4;

/// Frames and Jacobians with `|det|` below this are rejected as singular.
pub const SINGULAR_DET: f64 = 1e-12;

/// Minimum number of RK4 steps per integration.
pub const MIN_STEPS: usize = 8;

/// Expression-path velocities use `h = (t1 - t0) / (PATH_VELOCITY_DIVISOR * N)`.
pub const PATH_VELOCITY_DIVISOR: f64 = 64.0;

/// Polyline segments always get at least this many RK4 steps.
pub const MIN_STEPS_PER_SEGMENT: usize = 2;

/// Relative step of the transport-limit covariant derivative.
pub const COVD_LIMIT_REL: f64 = 1e-4;

/// Default tolerance for flatness and connection-preservation verdicts.
pub const DEFAULT_TOL: f64 = 1e-6;

/// A staircase residual above `NOT_FLAT_FACTOR * tol` is reported as `NotFlat`.
pub const NOT_FLAT_FACTOR: f64 = 100.0;

/// Relative step for both levels of the second derivatives of base maps,
/// where the inner derivative is itself a finite difference.
pub const FD_MAP_SECOND_REL: f64 = 1e-3;
