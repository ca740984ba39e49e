//! Attention-weighted Wi-Fi AoA localization: channel simulation, heatmap
//! featurization, a reverse-mode autodiff tape, the encoder/attention/decoder
//! model, training and evaluation.

pub mod autodiff;
pub mod binio;
pub mod chansim;
pub mod config;
pub mod evalreport;
pub mod featurizer;
pub mod geometry;
pub mod network;
pub mod rng;
pub mod scalar;
pub mod scenario;
pub mod selftest;
pub mod training;

pub type Tensor64 = autodiff::Tensor<f64>;
pub type Graph64 = autodiff::Graph<f64>;
pub type Point = geometry::Point2<f64>;
pub type Ap = geometry::ApPose<f64>;
pub type Bearings = geometry::BearingSet<f64>;
pub type Model64 = network::Model<f64>;
pub type Model32 = network::Model<f32>;
pub type Trained64 = training::Trained<f64>;
