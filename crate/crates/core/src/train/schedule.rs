//! Coarse-to-fine grid resolution schedule.

/// Milestones at a 10000-iteration budget; shorter or longer runs scale
/// them proportionally.
pub const REFERENCE_MILESTONES: [usize; 5] = [2000, 3000, 4000, 5500, 7000];
pub const REFERENCE_ITERATIONS: usize = 10_000;

/// Reference milestones rescaled to `iterations`.
pub fn scaled_milestones(iterations: usize) -> Vec<usize> {
    REFERENCE_MILESTONES
        .iter()
        .map(|m| ((*m as f64) * iterations as f64 / REFERENCE_ITERATIONS as f64).round() as usize)
        .collect()
}

/// Per-axis size after milestone `i` of `count` (1-based):
/// `N_i = N0 · (N / N0)^(i / count)`; `i = 0` gives `N0`.
pub fn milestone_size(n0: usize, n_final: usize, i: usize, count: usize) -> usize {
    if count == 0 || i == 0 {
        return n0;
    }
    if i >= count {
        return n_final;
    }
    let ratio = n_final as f64 / n0 as f64;
    ((n0 as f64) * ratio.powf(i as f64 / count as f64)).round() as usize
}

/// Grid dims after milestone `i`: the voxel count is `N_i³`, spread over the
/// axes in proportion to the box `extent` (cubic when `None`), each axis at
/// least 2.
pub fn milestone_dims(n0: usize, n_final: usize, i: usize, count: usize, extent: Option<[f64; 3]>) -> [usize; 3] {
    let n = milestone_size(n0, n_final, i, count);
    proportional_dims(n, extent)
}

/// Per-axis dims with `n³` voxels in total, shaped like `extent`.
pub fn proportional_dims(n: usize, extent: Option<[f64; 3]>) -> [usize; 3] {
    match extent {
        None => [n; 3],
        Some(e) => {
            let mean = (e[0] * e[1] * e[2]).cbrt();
            e.map(|x| (((n as f64) * x / mean).round() as usize).max(2))
        }
    }
}

/// New grid dims if `iteration` is a milestone. Coinciding milestones (a
/// very short run) jump straight to the last of them.
pub fn upsample_schedule(
    iteration: usize,
    milestones: &[usize],
    n0: usize,
    n_final: usize,
    extent: Option<[f64; 3]>,
) -> Option<[usize; 3]> {
    let i = milestones.iter().rposition(|m| *m == iteration)?;
    Some(milestone_dims(n0, n_final, i + 1, milestones.len(), extent))
}
