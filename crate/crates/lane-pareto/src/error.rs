use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// A scenario document failed validation. `field` names the offending key.
    #[error("invalid config field `{field}`: {message}")]
    Config { field: String, message: String },

    /// A car-following update saw a non-positive (net) gap.
    #[error("collision in car-following update: follower {follower} has gap {gap:.3} m to leader {leader}")]
    CarFollowingCollision {
        follower: usize,
        leader: usize,
        gap: f64,
    },

    /// No finite equilibrium spacing exists at or above the desired speed.
    #[error("no finite equilibrium spacing at speed {speed} m/s (desired speed {v_desire} m/s)")]
    NoEquilibrium { speed: f64, v_desire: f64 },

    /// Warm-up simulation did not reach steady state in time.
    #[error("warm-up did not converge within {duration} s; worst residual {residual:.3e} ({what})")]
    WarmupNotConverged {
        duration: f64,
        residual: f64,
        what: &'static str,
    },

    /// The quintic boundary problem is numerically singular.
    #[error("infeasible quintic boundary problem (duration {duration} s)")]
    SingularQuintic { duration: f64 },

    /// Steering angle magnitude reached pi/2, tan(delta) is unbounded.
    #[error("steering angle {0} rad out of range (|delta| must be < pi/2)")]
    SteeringOutOfRange(f64),

    /// MPC asked for more reference samples than were supplied.
    #[error("reference window too short: have {have} samples, need {need}")]
    ReferenceWindowTooShort { have: usize, need: usize },

    /// Closed-loop tracking left the divergence envelope.
    #[error("tracking diverged at t = {t:.2} s (position error {error:.2} m)")]
    TrackingDiverged { t: f64, error: f64 },

    /// Neighbor traces are not time-aligned with the maneuver samples.
    #[error("misaligned traces: expected {expected} ticks, vehicle {vehicle} has {actual}")]
    MisalignedTrace {
        vehicle: usize,
        expected: usize,
        actual: usize,
    },

    /// Cost series / weight vector dimensions disagree.
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// An objective evaluated to NaN.
    #[error("NaN objective for candidate {candidate:?}")]
    NanObjective { candidate: Vec<f64> },

    /// Candidate evaluation failed; the offending candidate is attached.
    #[error("evaluation failed for candidate {candidate:?}: {source}")]
    Evaluation {
        candidate: Vec<f64>,
        #[source]
        source: Box<Error>,
    },

    /// An operation that needs a non-empty front got an empty one.
    #[error("empty Pareto front")]
    EmptyFront,

    /// The measurement region is not covered by the trace.
    #[error("measurement region [{t_min}, {t_max}] s outside trace span [{trace_start}, {trace_end}] s")]
    RegionOutsideTrace {
        t_min: f64,
        t_max: f64,
        trace_start: f64,
        trace_end: f64,
    },

    /// Optimization finished without a single feasible candidate.
    #[error("no feasible candidate found (best violation {best_violation:.4})")]
    NoFeasibleCandidate { best_violation: f64 },
}

impl Error {
    pub fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
