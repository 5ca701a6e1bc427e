//! Classifiers, scoring, experiment grids and plot data.

mod classifier;
mod experiment;
mod plot;

pub use classifier::{accuracy, Classifier, ClassifierSpec};
pub use experiment::{
    adapt, desk_scale_task, prepare_task, run_experiment, CellResult, ExperimentConfig,
    ExperimentReport, MethodMean, PreparedTask, TaskData, TaskSpec, DEFAULT_MAX_SAMPLES,
    RESULTS_HEADER, SCHEMA_VERSION,
};
pub use plot::{emit_plot_data, project_2d, sidecar_path, Projection, ProjectionInfo, Role};
