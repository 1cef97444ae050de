//! Contextual bandits on a metric of trials, routed through a hierarchy of
//! nearest-neighbour levels.

pub mod agents;
pub mod ann;
pub mod audit;
pub mod bandit;
pub mod env;
pub mod error;
pub mod metric;
pub mod router;
pub mod scalar;

pub use ann::{CoverTree, LinearScan, Neighbor, NeighborIndex};
pub use agents::{
    regret_vs, run_exp3, run_hnn_cb, run_nan, run_nn_cb, AgentKind, NanMode, Reference, RunMeta, RunRecord, TrialRow,
};
pub use audit::{
    theorem2_margin, verify_lemmas, AnalysisConstants, AuditOptions, AuditReport, LemmaCheck, MarginSpec,
    Theorem2Report,
};
pub use bandit::{
    create_node, select_action, switch_count, update, BanditNode, FixedShareTree, ParentFedBandit, SubroutineParams,
};
pub use env::{
    gen_boundary_cover, gen_cloud, gen_two_balls, ingest_csv, BoundaryCoverConfig, CloudConfig, CoverBall, Environment,
    ExtendedPolicy, LossKind, LossModel, LossSource, TwoBallsConfig,
};
pub use error::{Error, Result};
pub use metric::{
    aspect_ratio, dedup_bin, parse_metric_csv, read_metric_csv, trials, validate_instance, validate_metric, write_metric_csv,
    AspectRatio, Binning, DistanceOracle, MetricInstance, TrialId, ValidationReport, Violation,
};
pub use router::{HnnRouter, Placement, RouteInfo, RoutingTree, TreeRelations};
pub use scalar::Scalar;

/// Metric instance over `f64` distances.
pub type Metric = MetricInstance<f64>;
/// Cover tree over `f64` distances.
pub type Cover = CoverTree<f64>;
/// Router over `f64` distances with cover-tree levels.
pub type Router = HnnRouter<f64>;
