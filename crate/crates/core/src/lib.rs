pub mod comparator;
pub mod dag;
pub mod engine;
pub mod experiment;
pub mod exporter;
pub mod linearizer;
pub mod oracle;
pub mod scenario;
pub mod simulator;
pub mod visibility;
