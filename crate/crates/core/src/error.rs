use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid scenario: {0}")]
    InvalidScenario(String),

    /// The requested harvested power is at or above the rectifier ceiling.
    #[error("EH target {target:e} W is not reachable (saturation at {ceiling:e} W)")]
    SaturationExceeded { target: f64, ceiling: f64 },

    #[error("problem is infeasible")]
    Infeasible,

    #[error("problem is infeasible at the smallest ratio tried (t = {t_lo:e})")]
    ProblemInfeasible { t_lo: f64 },

    #[error("SAR limit cannot be met even along the least-exposure direction")]
    SarInfeasible,

    #[error("rank-1 recovery failed, eigenvalue ratios {ratios:?}")]
    RankRecoveryFailed { ratios: Vec<f64> },

    #[error("projected channel of user {user} is numerically zero")]
    DegenerateChannel { user: usize },

    #[error("randomization found no feasible candidate (best gap {best_gap:e})")]
    RandomizationFailed { best_gap: f64 },

    #[error("solver failure: {0}")]
    Solver(String),

    #[error("config error: {0}")]
    Config(String),
}

impl Error {
    /// Outcomes that mean "no solution at this operating point" rather than a
    /// malfunction. Bisection treats these as an infeasible probe.
    pub fn is_infeasibility(&self) -> bool {
        matches!(
            self,
            Error::Infeasible
                | Error::SaturationExceeded { .. }
                | Error::SarInfeasible
                | Error::ProblemInfeasible { .. }
                | Error::RandomizationFailed { .. }
        )
    }
}
