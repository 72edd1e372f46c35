//! Central finite-difference gradient checking.

/// Default step for central differences in 64-bit precision.
pub const FD_STEP: f64 = 1e-5;

/// Denominator floor for the relative error, so coordinates whose true
/// gradient is exactly zero are judged on absolute error.
const REL_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_error: f64,
    /// Coordinate of the worst mismatch, with its analytic and numeric values.
    pub worst: Option<(usize, f64, f64)>,
    pub tolerance: f64,
    /// Coordinates left out because no usable step was found.
    pub skipped: usize,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.tolerance && self.skipped == 0
    }

    /// Folds another report in, keeping the worst coordinate.
    pub fn merge(&mut self, other: &GradCheckReport) {
        self.checked += other.checked;
        self.skipped += other.skipped;
        if other.max_rel_error > self.max_rel_error {
            self.max_rel_error = other.max_rel_error;
            self.worst = other.worst;
        }
    }

    pub fn record(&mut self, i: usize, analytic: f64, numeric: f64) {
        let err = relative_error(analytic, numeric);
        self.checked += 1;
        if self.worst.is_none() || err > self.max_rel_error {
            self.max_rel_error = err;
            self.worst = Some((i, analytic, numeric));
        }
    }

    pub fn empty(tolerance: f64) -> Self {
        GradCheckReport {
            checked: 0,
            max_rel_error: 0.0,
            worst: None,
            tolerance,
            skipped: 0,
        }
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Central difference of `loss` along coordinate `i` of `point`.
pub fn numeric_partial(loss: &mut impl FnMut(&[f64]) -> f64, point: &mut [f64], i: usize, h: f64) -> f64 {
    let orig = point[i];
    point[i] = orig + h;
    let up = loss(point);
    point[i] = orig - h;
    let down = loss(point);
    point[i] = orig;
    (up - down) / (2.0 * h)
}

/// Compares `analytic[i]` with the central difference of `loss` at `point`
/// for every `i` in `coords`.
pub fn gradcheck(
    loss: impl FnMut(&[f64]) -> f64,
    point: &[f64],
    analytic: &[f64],
    coords: impl IntoIterator<Item = usize>,
    tolerance: f64,
) -> GradCheckReport {
    gradcheck_with_step(loss, point, analytic, coords, tolerance, FD_STEP)
}

/// As [`gradcheck`] with an explicit difference step. Deep ReLU stacks need a
/// smaller step so the two probes stay on the same linear piece.
pub fn gradcheck_with_step(
    mut loss: impl FnMut(&[f64]) -> f64,
    point: &[f64],
    analytic: &[f64],
    coords: impl IntoIterator<Item = usize>,
    tolerance: f64,
    h: f64,
) -> GradCheckReport {
    let mut x = point.to_vec();
    let mut report = GradCheckReport::empty(tolerance);
    for i in coords {
        let numeric = numeric_partial(&mut loss, &mut x, i, h);
        report.record(i, analytic[i], numeric);
    }
    report
}
