use serde::Serialize;

use crate::error::{Error, Result};

/// Cumulative share of hallucination counts (y) against the share of
/// hallucinated responses consumed (x), responses taken in descending order
/// of their count.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConcentrationCurve {
    points: Vec<(f64, f64)>,
}

impl ConcentrationCurve {
    /// Emitted points, starting at `(0, 0)` and ending at `(1, 1)`.
    pub fn points(&self) -> &[(f64, f64)] {
        &self.points
    }

    /// Step lookup: y of the last emitted point with abscissa ≤ `x`.
    pub fn y_at(&self, x: f64) -> f64 {
        self.points
            .iter()
            .take_while(|(px, _)| *px <= x)
            .last()
            .map_or(0.0, |&(_, y)| y)
    }

    /// Smallest emitted x whose y reaches `share`.
    pub fn x_for_share(&self, share: f64) -> f64 {
        self.points
            .iter()
            .find(|(_, y)| *y >= share)
            .map_or(1.0, |&(x, _)| x)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("x,y\n");
        for (x, y) in &self.points {
            out.push_str(&format!("{x},{y}\n"));
        }
        out
    }
}

pub fn concentration_curve(per_response_counts: &[usize]) -> Result<ConcentrationCurve> {
    let mut counts: Vec<usize> = per_response_counts.iter().copied().filter(|&c| c > 0).collect();
    if counts.is_empty() {
        return Err(Error::Domain(
            "concentration curve needs at least one hallucinated response".into(),
        ));
    }
    counts.sort_unstable_by(|a, b| b.cmp(a));
    let total: usize = counts.iter().sum();
    let n = counts.len();
    let mut points = Vec::with_capacity(n + 1);
    points.push((0.0, 0.0));
    let mut consumed = 0;
    for (i, c) in counts.iter().enumerate() {
        consumed += c;
        points.push(((i + 1) as f64 / n as f64, consumed as f64 / total as f64));
    }
    Ok(ConcentrationCurve { points })
}
