pub mod analysis;
pub mod background;
pub mod error;
pub mod energy;
pub mod evolve;
pub mod fields;
pub mod grid;
pub mod initial_data;
pub mod jet;
pub mod quadrature;

pub use background::{Background, BackgroundKind, CustomMetric, RadialPoint};
pub use error::{Error, Result};
pub use evolve::{evolve_mode, evolve_mode_with, evolve_refined, EvolveOptions, ModeSolution, NodeField};
pub use grid::GridSpec;
pub use initial_data::{bump_data, static_tail_data, BumpShape, CharacteristicData, StaticIngoing};
pub use fields::{derived_field, DerivedField, Equation, FieldSelector};
pub use analysis::{decay_report, fit_tail, local_power_index, DecayReport, FitModel, Measurable, PowerLawFit, SeriesBundle, Verdict};
