use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dangling reference: {kind} `{id}` is not defined")]
    DanglingReference { kind: &'static str, id: String },

    #[error("turning ratios of link `{link}` sum to {sum}, expected 1")]
    TurningRatioSum { link: String, sum: f64 },

    #[error("real link `{link}` must have positive length")]
    ZeroLengthRealLink { link: String },

    #[error("phase `{phase}` of node `{node}` is empty")]
    EmptyPhase { node: String, phase: String },

    #[error("node `{node}`: movement `{movement}` appears in no phase")]
    UncoveredMovement { node: String, movement: String },

    #[error("movement `{movement}` belongs to no configured node")]
    OrphanMovement { movement: String },

    #[error(
        "route-induced turn fraction for `{movement}` is {induced}, configured ratio is {configured}"
    )]
    RouteTurnMismatch {
        movement: String,
        induced: f64,
        configured: f64,
    },

    #[error("invalid scenario: {0}")]
    InvalidScenario(String),

    #[error("admissibility problem is degenerate: {0}")]
    DegenerateLp(String),

    #[error("trace segment too short: {got} decision steps, need at least {need}")]
    SegmentTooShort { got: usize, need: usize },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}
