pub mod bench;
pub mod cost;
pub mod schedule;
pub mod trainsim;
pub mod verify;

use anyhow::{bail, Context};
use torusred::topology::GridTopology;

/// Resolve the worker layout from `--ranks` and/or `--grid`.
pub fn resolve_grid(
    ranks: Option<u32>,
    grid: Option<GridTopology>,
) -> anyhow::Result<GridTopology> {
    match (ranks, grid) {
        (Some(n), Some(g)) => {
            if g.n_ranks() != n {
                bail!("--grid {g} covers {} ranks but --ranks is {n}", g.n_ranks());
            }
            Ok(g)
        }
        (None, Some(g)) => Ok(g),
        (Some(n), None) => GridTopology::squarest(n).context("choosing a grid for the rank count"),
        (None, None) => bail!("one of --ranks or --grid is required"),
    }
}
