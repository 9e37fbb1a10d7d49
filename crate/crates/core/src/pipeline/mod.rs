//! The reproducible-experiment layer: render bundles on disk, dataset
//! generation with replayable manifests, image metrics, and split scoring.

mod bundle;
mod dataset;
mod eval;
mod metrics;

pub use bundle::{
    read_bundle, read_gray_pfm, read_rgba_pfm, write_bundle, write_rgba_pfm, BundleManifest,
    BundleMeta, BUNDLE_MANIFEST,
};
pub use dataset::{
    generate_dataset, load_example, load_examples, regenerate_example, AugRecord, DatasetConfig,
    DatasetManifest, ExampleBuffers, ExampleFiles, ExampleRecord, Split,
};
pub use eval::{
    albedo_mae, csv_report, evaluate, predict_diffused, score_example, table_report, EvalReport,
    EvalRow,
};
pub use metrics::{metrics, MetricsReport};
