//! Short-horizon wind speed forecasting from a single anemometer.
//!
//! Raw observations are resampled onto an hourly grid ([`series`]), turned
//! into lagged regression problems ([`lagset`]), and fitted with lightly
//! regularised least squares ([`linear_model`]) or Nyström kernel ridge
//! regression ([`kernel_model`]) tuned by blocked cross-validation
//! ([`select`]). [`rolling`] replays a test period under several retraining
//! policies, [`sweep`] runs whole design grids, and [`diurnal`] measures how
//! strong the daily cycle is.

pub mod diurnal;
pub mod evaluate;
pub mod kernel_model;
pub mod lagset;
pub mod linear_model;
pub mod model;
pub mod numeric;
pub mod rolling;
pub mod select;
pub mod series;
pub mod sweep;
pub mod synthetic;
