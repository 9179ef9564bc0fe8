//! Panel data: labels, concept graphs, CSV ingestion and a synthetic market.

mod io;
mod panel;
mod synthetic;

pub use io::{load_concepts, load_panel, read_panel_records, write_concepts, write_panel_records};
pub use panel::{
    build_panel, change_rate, normalize_labels_per_date, ConceptGraph, DateGraph, DateSlice,
    FeaturePanel, PanelRecord, FEATURE_WIDTH, FIELDS, LOOKBACK,
};
pub use synthetic::{generate_synthetic, GroundTruth, SyntheticMarket, SyntheticSpec};
