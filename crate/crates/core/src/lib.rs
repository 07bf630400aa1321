//! Agent-based news spreading on k-regular random networks, with a
//! trait-profile logistic model and a two-group mean-field SI model for
//! inference.

pub mod contagion;
pub mod events;
pub mod gateway;
pub mod graph;
pub mod logistic;
pub mod meanfield;
pub mod metrics;
pub mod policy;
pub mod traits;

pub use graph::{generate_k_regular, generate_k_regular_with, GenerateOptions, Graph, GraphError};
pub use traits::{
    assign_profiles, enumerate_profiles, studentized_range_quantile, tukey_grouping,
    ProfileAssignment, ProfileGroup, ProfileGrouping, ResponseRatioTable, Trait, TraitProfile,
    TraitsError,
};
pub use events::{
    cluster_1d, ingest_events, kmeans, principal_components, select_clustering, silhouette,
    ClusterModel, EmbeddingSet, EventRecord, EventsError, Severity, SeverityLabelMap,
};
pub use logistic::{
    fit, nll, sigmoid, wald_stats, ExposureDataset, ExposureRow, FitOptions, FitResult,
    LinearTraitParams, LogisticError, LogisticParams, ModelSpec, TwoGroupParams,
};
pub use gateway::{Gateway, GatewayConfig, GatewayError, PromptBundle, ResponseCache, Templates};
pub use policy::{
    Decision, DecisionContext, DecisionPolicy, DecisionRecord, LlmPolicy, LogisticPolicy,
    PolicyError, ReplayPolicy, TablePolicy,
};
pub use contagion::{
    aggregate_runs, run, seed_initial, step, AggregateCurve, EngagementCurve, EventContext,
    ReplicateSetup, SimConfig, SimState, SimulationRun,
};
pub use meanfield::{
    early_growth_check, equilibria, fit_tau, integrate, rhs, stability, Classification,
    FitTauOptions, MeanFieldError, MeanFieldParams, MeanFieldState, StabilityReport, TauFit,
    Trajectory,
};
pub use metrics::{disaggregate, nrmse, rmse, Disaggregation, FitReport as CurveFitReport, MetricsError};
