pub mod cil;
pub mod data;
pub mod experiments;
pub mod featurize;
pub mod gradsuite;
pub mod hmfm;
pub mod metrics;
pub mod model;
pub mod molgraph;
pub mod ndiff;
pub mod train;
