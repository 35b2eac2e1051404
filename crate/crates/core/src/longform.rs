//! Sentence-by-sentence style interpolation for long-form synthesis: each
//! freshly sampled style is blended with the previous sentence's style.

use serde::{Deserialize, Serialize};

use crate::denoiser::StyleVector;
use crate::error::{domain, shape, Result};
use crate::table::{fmt_real, Table};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LongformConfig {
    /// Weight of the current sentence's raw style.
    pub alpha: f64,
}

impl Default for LongformConfig {
    fn default() -> Self {
        Self { alpha: 0.7 }
    }
}

impl LongformConfig {
    pub fn validate(&self) -> Result<()> {
        if (0.0..=1.0).contains(&self.alpha) {
            Ok(())
        } else {
            Err(domain(format!("alpha must lie in [0, 1], got {}", self.alpha)))
        }
    }
}

/// `alpha * curr_raw + (1 - alpha) * prev`.
pub fn interpolate_style(prev: &StyleVector, curr_raw: &StyleVector, alpha: f64) -> Result<StyleVector> {
    LongformConfig { alpha }.validate()?;
    if prev.dim() != curr_raw.dim() {
        return Err(shape(format!(
            "style dimensions differ: {} vs {}",
            prev.dim(),
            curr_raw.dim()
        )));
    }
    // alpha = 0 and alpha = 1 must return an endpoint bit-for-bit.
    if alpha == 1.0 {
        return Ok(curr_raw.clone());
    }
    if alpha == 0.0 {
        return Ok(prev.clone());
    }
    Ok(StyleVector::new(
        curr_raw
            .iter()
            .zip(prev.iter())
            .map(|(c, p)| alpha * c + (1.0 - alpha) * p)
            .collect(),
    ))
}

/// Runs the recurrence over a paragraph; the first sentence keeps its raw
/// style.
pub fn longform_styles(raw_styles: &[StyleVector], alpha: f64) -> Result<Vec<StyleVector>> {
    let Some(first) = raw_styles.first() else {
        return Err(domain("no sentences"));
    };
    let mut out = Vec::with_capacity(raw_styles.len());
    out.push(first.clone());
    for raw in &raw_styles[1..] {
        let next = interpolate_style(out.last().unwrap(), raw, alpha)?;
        out.push(next);
    }
    Ok(out)
}

/// One row per sentence: style coordinates, then the distance to the
/// previous sentence's style (0 for the first).
pub fn trajectory_table(styles: &[StyleVector]) -> Table {
    let dim = styles.first().map_or(0, StyleVector::dim);
    let mut table = Table::new((0..dim).map(|k| format!("s{k}")).chain(["step_norm".to_string()]));
    for (i, s) in styles.iter().enumerate() {
        let step = if i == 0 { 0.0 } else { s.distance(&styles[i - 1]) };
        let mut row: Vec<String> = s.iter().map(|v| fmt_real(*v)).collect();
        row.push(fmt_real(step));
        table.push(row);
    }
    table
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sv(v: &[f64]) -> StyleVector {
        StyleVector::new(v.to_vec())
    }

    #[test]
    fn endpoints() {
        let prev = sv(&[0.1, 0.2]);
        let curr = sv(&[0.9, -0.4]);
        assert_eq!(interpolate_style(&prev, &curr, 1.0).unwrap(), curr);
        assert_eq!(interpolate_style(&prev, &curr, 0.0).unwrap(), prev);
        let mid = interpolate_style(&sv(&[0.0, 0.0]), &sv(&[1.0, 1.0]), 0.7).unwrap();
        assert_eq!(mid.as_slice(), &[0.7, 0.7]);
    }

    #[test]
    fn errors() {
        assert!(interpolate_style(&sv(&[0.0]), &sv(&[0.0, 1.0]), 0.5).is_err());
        assert!(interpolate_style(&sv(&[0.0]), &sv(&[1.0]), 1.5).is_err());
        assert!(longform_styles(&[], 0.5).is_err());
    }

    #[test]
    fn recursion_by_hand() {
        let raw = [sv(&[0.0]), sv(&[1.0]), sv(&[1.0])];
        let out = longform_styles(&raw, 0.5).unwrap();
        let got: Vec<f64> = out.iter().map(|s| s[0]).collect();
        assert_eq!(got, [0.0, 0.5, 0.75]);
        assert_eq!(longform_styles(&raw[..1], 0.3).unwrap(), raw[..1].to_vec());
        assert_eq!(longform_styles(&raw, 1.0).unwrap(), raw.to_vec());
    }

    #[test]
    fn order_matters() {
        let raw = [sv(&[0.0]), sv(&[1.0]), sv(&[4.0])];
        let forward = longform_styles(&raw, 0.5).unwrap();
        let mut reversed_input = raw.to_vec();
        reversed_input.reverse();
        let mut backward = longform_styles(&reversed_input, 0.5).unwrap();
        backward.reverse();
        assert_ne!(forward, backward);
    }

    #[test]
    fn table_has_step_norms() {
        let styles = [sv(&[0.0, 0.0]), sv(&[3.0, 4.0])];
        let text = trajectory_table(&styles).render();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines[0], "s0,s1,step_norm");
        assert!(lines[2].ends_with(",5.0000000000000000e0"));
    }

    proptest! {
        #[test]
        fn step_size_identity_and_hull(
            raw in proptest::collection::vec(proptest::collection::vec(-3.0f64..3.0, 3), 1..20),
            alpha in 0.0f64..=1.0,
        ) {
            let raw: Vec<StyleVector> = raw.into_iter().map(StyleVector::new).collect();
            let out = longform_styles(&raw, alpha).unwrap();
            let mut lo = raw[0].to_vec();
            let mut hi = raw[0].to_vec();
            for i in 0..out.len() {
                for k in 0..3 {
                    lo[k] = lo[k].min(raw[i][k]);
                    hi[k] = hi[k].max(raw[i][k]);
                    prop_assert!(out[i][k] >= lo[k] - 1e-12 && out[i][k] <= hi[k] + 1e-12);
                }
                if i > 0 {
                    let step = out[i].distance(&out[i - 1]);
                    let pull = alpha * raw[i].distance(&out[i - 1]);
                    prop_assert!((step - pull).abs() <= 1e-12 * pull.max(1.0));
                }
            }
        }
    }
}
