//! Numerical primitives shared by every weighting method.

pub mod boxcox;
pub mod normal;
pub mod quadrature;
pub mod roots;
pub mod spline;
pub mod stats;

pub use boxcox::{box_cox, box_cox_transform};
pub use normal::{norm_cdf, norm_isf, norm_pdf, norm_quantile, norm_sf};
pub use roots::{brent_root, grid_search_root, newton_raphson, open_grid, Root, SolverConfig};
pub use spline::{fit_smoothing_spline, SplineFit};
