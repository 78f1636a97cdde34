//! Direct finite-volume solution of the sieve problem in a slab of
//! thickness `2 delta` over `U' = (0, 1)^2`, and the oscillating test
//! functions built from cell potentials.

pub mod rescale;
pub mod solver;
pub mod test_function;
pub mod thin_grid;

pub use rescale::{a_priori_bound, compare_profile, jump_profile, rescale, slab_averages, RescaledField};
pub use solver::{apply_operator, slab_energies, solve_direct, source_norms, DirectOptions, DirectSolution, Reduction, ThinSource};
pub use test_function::{build_w, CellOptions, CellPotentialCache, Region, TestFunctionField};
pub use thin_grid::{SieveField, ThinGrid, ThinGridOptions};

#[cfg(test)]
mod tests;
