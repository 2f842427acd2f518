//! File formats: bundles, checkpoints, configs, and text exports.

mod bundle;
mod checkpoint;
mod config;
mod export;

pub use bundle::{read_bundle, write_bundle, MatrixBundle, NdArray, BUNDLE_MAGIC, CHECKPOINT_MAGIC};
pub use checkpoint::{read_checkpoint, write_checkpoint, Checkpoint, FileSink};
pub use config::{
    format_config, parse_config, parse_pairs, parse_sim_config, parse_train_config,
    sim_config_entries, train_config_entries, Config,
};
pub use export::{
    csv_string, csv_table, export_dot, format_sig17, parse_csv, read_csv, svg_heatmap, write_csv,
    write_svg_heatmap,
};
