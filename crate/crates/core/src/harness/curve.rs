use std::io::{BufRead, Write};

use crate::error::{Error, Result};

pub const CURVE_HEADER: &str = "env_step,eval_return_raw,eval_return_smoothed";

/// Centered moving average. Near the ends the window shrinks symmetrically
/// to the points available on both sides, so output length equals input
/// length.
pub fn smooth(values: &[f64], window: usize) -> Result<Vec<f64>> {
    if window == 0 || window % 2 == 0 {
        return Err(Error::param(format!("smoothing window must be odd and ≥ 1, got {window}")));
    }
    let n = values.len();
    let half = window / 2;
    Ok((0..n)
        .map(|i| {
            let h = half.min(i).min(n - 1 - i);
            let slice = &values[i - h..=i + h];
            slice.iter().sum::<f64>() / slice.len() as f64
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct LearningCurve {
    pub env_steps: Vec<u64>,
    pub raw: Vec<f64>,
    pub smoothed: Vec<f64>,
}

impl LearningCurve {
    pub fn from_raw(env_steps: Vec<u64>, raw: Vec<f64>, window: usize) -> Result<Self> {
        if env_steps.len() != raw.len() {
            return Err(Error::invalid("curve steps and returns differ in length"));
        }
        if env_steps.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("curve env steps must be strictly increasing"));
        }
        let smoothed = smooth(&raw, window)?;
        Ok(Self {
            env_steps,
            raw,
            smoothed,
        })
    }

    pub fn len(&self) -> usize {
        self.raw.len()
    }

    pub fn is_empty(&self) -> bool {
        self.raw.is_empty()
    }

    /// Mean of the smoothed curve over its last `window` points (fewer if the
    /// curve is shorter). NaN for an empty curve.
    pub fn final_score(&self, window: usize) -> f64 {
        let n = self.smoothed.len();
        if n == 0 {
            return f64::NAN;
        }
        let tail = &self.smoothed[n - window.clamp(1, n)..];
        tail.iter().sum::<f64>() / tail.len() as f64
    }

    pub fn write_csv<W: Write>(&self, out: &mut W) -> Result<()> {
        writeln!(out, "{CURVE_HEADER}")?;
        for ((s, r), m) in self.env_steps.iter().zip(&self.raw).zip(&self.smoothed) {
            writeln!(out, "{s},{r:.16e},{m:.16e}")?;
        }
        Ok(())
    }

    /// Reads a curve CSV; only the step and raw columns are needed, the
    /// smoothed column is recomputed with `window`.
    pub fn read_csv<R: BufRead>(input: R, window: usize) -> Result<Self> {
        let mut steps = Vec::new();
        let mut raw = Vec::new();
        for (i, line) in input.lines().enumerate() {
            let line = line?;
            if i == 0 {
                if !line.starts_with("env_step,eval_return_raw") {
                    return Err(Error::Parse {
                        line: 1,
                        message: format!("expected header `{CURVE_HEADER}`"),
                    });
                }
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            let mut fields = line.split(',');
            let bad = |m: String| Error::Parse { line: i + 1, message: m };
            let step = fields
                .next()
                .and_then(|f| f.trim().parse().ok())
                .ok_or_else(|| bad("bad env_step".into()))?;
            let value = fields
                .next()
                .and_then(|f| f.trim().parse().ok())
                .ok_or_else(|| bad("bad eval_return_raw".into()))?;
            steps.push(step);
            raw.push(value);
        }
        Self::from_raw(steps, raw, window)
    }
}
