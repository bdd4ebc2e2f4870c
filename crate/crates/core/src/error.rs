use thiserror::Error;

/// All failure modes surfaced by the library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("point lies outside the domain box: {0}")]
    OutOfDomain(String),
    #[error("iteration did not converge: {0}")]
    NoConvergence(String),
    #[error("critical point is not a saddle (hessian determinant {det:e})")]
    NotASaddle { det: f64 },
    #[error("trajectory escaped before reaching the section: {0}")]
    Escape(String),
    #[error("|h| = {h:e} is below the separatrix floor {floor:e}")]
    TooCloseToSeparatrix { h: f64, floor: f64 },
    #[error("no closed orbit at this energy: {0}")]
    OutsideChart(String),
    #[error("insufficient range for the fit: {0}")]
    InsufficientRange(String),
    #[error("nonpositive separatrix integral: theta1 = {theta1:e}, theta2 = {theta2:e}")]
    NonpositiveTheta { theta1: f64, theta2: f64 },
    #[error("averaged field is not finite: {0}")]
    FieldBlowup(String),
    #[error("averaged trajectory left its domain: {0}")]
    LeftDomain(String),
    #[error("fourier table is aliased: {0}")]
    Aliasing(String),
    #[error("energy lies outside the admissible resonance region: {0}")]
    OutsidePi(String),
    #[error("melnikov tail did not converge: {0}")]
    TailNotConverged(String),
    #[error("grid size mismatch: {0}")]
    GridMismatch(String),
    #[error("mean force is not positive: {0:e}")]
    NonpositiveMean(f64),
    #[error("step size underflow at t = {t}")]
    StepFailure { t: f64 },
    #[error("trajectory left the model box: {0}")]
    LeftDomainBox(String),
    #[error("maximum number of steps exceeded ({0})")]
    MaxSteps(usize),
    #[error("too many unclassified trajectories: {unclassified} of {n}")]
    TooManyUnclassified { unclassified: usize, n: usize },
    #[error("resonance zone was not crossed: {0}")]
    ZoneNotCrossed(String),
    #[error("invalid configuration: {0}")]
    ConfigInvalid(String),
    #[error("missing dependency: {0}")]
    MissingDependency(String),
    #[error("separatrix is not a figure eight for this system")]
    NotFigureEight,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("io error: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Stable numeric code, shared with the C interface.
    pub fn code(&self) -> i32 {
        match self {
            Error::OutOfDomain(_) => 1,
            Error::NoConvergence(_) => 2,
            Error::NotASaddle { .. } => 3,
            Error::Escape(_) => 4,
            Error::TooCloseToSeparatrix { .. } => 5,
            Error::OutsideChart(_) => 6,
            Error::InsufficientRange(_) => 7,
            Error::NonpositiveTheta { .. } => 8,
            Error::FieldBlowup(_) => 9,
            Error::LeftDomain(_) => 10,
            Error::Aliasing(_) => 11,
            Error::OutsidePi(_) => 12,
            Error::TailNotConverged(_) => 13,
            Error::GridMismatch(_) => 14,
            Error::NonpositiveMean(_) => 15,
            Error::StepFailure { .. } => 16,
            Error::LeftDomainBox(_) => 17,
            Error::MaxSteps(_) => 18,
            Error::TooManyUnclassified { .. } => 19,
            Error::ZoneNotCrossed(_) => 20,
            Error::ConfigInvalid(_) => 21,
            Error::MissingDependency(_) => 22,
            Error::NotFigureEight => 23,
            Error::InvalidArgument(_) => 24,
            Error::Io(_) => 25,
        }
    }

    /// Short identifier used in logs and manifests.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::OutOfDomain(_) => "OUT_OF_DOMAIN",
            Error::NoConvergence(_) => "NO_CONVERGENCE",
            Error::NotASaddle { .. } => "NOT_A_SADDLE",
            Error::Escape(_) => "ESCAPE",
            Error::TooCloseToSeparatrix { .. } => "TOO_CLOSE_TO_SEPARATRIX",
            Error::OutsideChart(_) => "OUTSIDE_CHART",
            Error::InsufficientRange(_) => "INSUFFICIENT_RANGE",
            Error::NonpositiveTheta { .. } => "NONPOSITIVE_THETA",
            Error::FieldBlowup(_) => "FIELD_BLOWUP",
            Error::LeftDomain(_) => "LEFT_DOMAIN",
            Error::Aliasing(_) => "ALIASING",
            Error::OutsidePi(_) => "OUTSIDE_PI",
            Error::TailNotConverged(_) => "TAIL_NOT_CONVERGED",
            Error::GridMismatch(_) => "GRID_MISMATCH",
            Error::NonpositiveMean(_) => "NONPOSITIVE_MEAN",
            Error::StepFailure { .. } => "STEP_FAILURE",
            Error::LeftDomainBox(_) => "LEFT_DOMAIN_BOX",
            Error::MaxSteps(_) => "MAX_STEPS",
            Error::TooManyUnclassified { .. } => "TOO_MANY_UNCLASSIFIED",
            Error::ZoneNotCrossed(_) => "ZONE_NOT_CROSSED",
            Error::ConfigInvalid(_) => "CONFIG_INVALID",
            Error::MissingDependency(_) => "MISSING_DEPENDENCY",
            Error::NotFigureEight => "NOT_FIGURE_EIGHT",
            Error::InvalidArgument(_) => "INVALID_ARGUMENT",
            Error::Io(_) => "IO",
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Io(e.to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn codes_are_distinct() {
        let all = [
            Error::OutOfDomain(String::new()),
            Error::NoConvergence(String::new()),
            Error::NotASaddle { det: 1.0 },
            Error::Escape(String::new()),
            Error::TooCloseToSeparatrix { h: 0.0, floor: 1e-9 },
            Error::OutsideChart(String::new()),
            Error::InsufficientRange(String::new()),
            Error::NonpositiveTheta { theta1: 0.0, theta2: 0.0 },
            Error::FieldBlowup(String::new()),
            Error::LeftDomain(String::new()),
            Error::Aliasing(String::new()),
            Error::OutsidePi(String::new()),
            Error::TailNotConverged(String::new()),
            Error::GridMismatch(String::new()),
            Error::NonpositiveMean(0.0),
            Error::StepFailure { t: 0.0 },
            Error::LeftDomainBox(String::new()),
            Error::MaxSteps(0),
            Error::TooManyUnclassified { unclassified: 0, n: 0 },
            Error::ZoneNotCrossed(String::new()),
            Error::ConfigInvalid(String::new()),
            Error::MissingDependency(String::new()),
            Error::NotFigureEight,
            Error::InvalidArgument(String::new()),
            Error::Io(String::new()),
        ];
        let mut codes: Vec<i32> = all.iter().map(|e| e.code()).collect();
        codes.sort();
        codes.dedup();
        assert_eq!(codes.len(), all.len());
        assert!(codes.iter().all(|&c| c > 0));
    }
}
