//! Trajectory metrics: displacement, RMSF and error sweeps.

use crate::error::{Error, Result};
use crate::format::fmt_f64;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    Time,
    Atom,
    Steps,
}

impl Axis {
    fn label(self) -> &'static str {
        match self {
            Axis::Time => "t",
            Axis::Atom => "atom",
            Axis::Steps => "steps",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricSeries {
    pub name: String,
    pub axis: Axis,
    pub values: Vec<f64>,
}

impl MetricSeries {
    pub fn new(name: &str, axis: Axis, values: Vec<f64>) -> Self {
        Self {
            name: name.into(),
            axis,
            values,
        }
    }

    /// Two-column CSV `<axis>,<name>`.
    pub fn to_csv(&self) -> String {
        let mut out = format!("{},{}\n", self.axis.label(), self.name);
        for (i, v) in self.values.iter().enumerate() {
            out.push_str(&format!("{i},{}\n", fmt_f64(*v)));
        }
        out
    }
}

fn dims(traj: &Tensor) -> Result<(usize, usize, usize)> {
    match traj.shape() {
        &[n, t, d] if n > 0 && t > 0 => Ok((n, t, d)),
        s => Err(Error::dim(format!("trajectory shape {s:?} is not a nonempty [N,T,D]"))),
    }
}

/// `‖r_t − r_0‖` over the whole configuration, per step.
pub fn displacement(traj: &Tensor) -> Result<Vec<f64>> {
    let (n, t, d) = dims(traj)?;
    let x = traj.data();
    Ok((0..t)
        .map(|step| {
            let mut acc = 0.0;
            for i in 0..n {
                for k in 0..d {
                    let diff = x[(i * t + step) * d + k] - x[(i * t) * d + k];
                    acc += diff * diff;
                }
            }
            acc.sqrt()
        })
        .collect())
}

/// Squared deviation of each `(atom, step)` from that atom's time mean,
/// accumulated relative to the first step so constant series give exact zeros.
fn squared_deviation(traj: &Tensor) -> Result<(usize, usize, Vec<f64>)> {
    let (n, t, d) = dims(traj)?;
    let x = traj.data();
    let mut out = vec![0.0; n * t];
    for i in 0..n {
        let origin = &x[(i * t) * d..(i * t + 1) * d];
        let mut mean = vec![0.0; d];
        for step in 0..t {
            for k in 0..d {
                mean[k] += x[(i * t + step) * d + k] - origin[k];
            }
        }
        mean.iter_mut().for_each(|m| *m /= t as f64);
        for step in 0..t {
            out[i * t + step] = (0..d)
                .map(|k| (x[(i * t + step) * d + k] - origin[k] - mean[k]).powi(2))
                .sum();
        }
    }
    Ok((n, t, out))
}

/// Per step: `sqrt(mean_i ‖r_t(i) − r̄(i)‖²)`.
pub fn rmsf_over_atoms(traj: &Tensor) -> Result<Vec<f64>> {
    let (n, t, sq) = squared_deviation(traj)?;
    Ok((0..t)
        .map(|step| ((0..n).map(|i| sq[i * t + step]).sum::<f64>() / n as f64).sqrt())
        .collect())
}

/// Per atom: `sqrt(mean_t ‖r_t(i) − r̄(i)‖²)`.
pub fn rmsf_over_time(traj: &Tensor) -> Result<Vec<f64>> {
    let (n, t, sq) = squared_deviation(traj)?;
    Ok((0..n)
        .map(|i| (sq[i * t..(i + 1) * t].iter().sum::<f64>() / t as f64).sqrt())
        .collect())
}

/// Mean squared and mean absolute error over steps `1..T` of each window;
/// the observed first step is excluded.
pub fn mse_mae(preds: &[Tensor], truth: &[&Tensor]) -> Result<(f64, f64)> {
    if preds.len() != truth.len() {
        return Err(Error::dim("prediction and truth window counts differ"));
    }
    let (mut se, mut ae, mut count) = (0.0, 0.0, 0usize);
    for (p, y) in preds.iter().zip(truth) {
        if p.shape() != y.shape() {
            return Err(Error::dim("prediction and truth shapes differ"));
        }
        let (n, t, d) = dims(y)?;
        for i in 0..n {
            for step in 1..t {
                for k in 0..d {
                    let off = (i * t + step) * d + k;
                    let e = p.data()[off] - y.data()[off];
                    se += e * e;
                    ae += e.abs();
                    count += 1;
                }
            }
        }
    }
    if count == 0 {
        return Ok((0.0, 0.0));
    }
    Ok((se / count as f64, ae / count as f64))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepRow {
    pub steps: usize,
    pub windows: usize,
    pub mse: f64,
    pub mae: f64,
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("steps,windows,mse,mae\n");
    for r in rows {
        out.push_str(&format!("{},{},{},{}\n", r.steps, r.windows, fmt_f64(r.mse), fmt_f64(r.mae)));
    }
    out
}

/// Per-sample series as columns plus a trailing mean column.
pub fn series_table_csv(axis: &str, series: &[Vec<f64>]) -> String {
    let len = series.iter().map(Vec::len).max().unwrap_or(0);
    let mut out = String::from(axis);
    for s in 0..series.len() {
        out.push_str(&format!(",sample{s}"));
    }
    out.push_str(",mean\n");
    for i in 0..len {
        out.push_str(&i.to_string());
        let mut acc = 0.0;
        let mut count = 0usize;
        for s in series {
            match s.get(i) {
                Some(v) => {
                    out.push(',');
                    out.push_str(&fmt_f64(*v));
                    acc += v;
                    count += 1;
                }
                None => out.push(','),
            }
        }
        out.push(',');
        out.push_str(&fmt_f64(if count > 0 { acc / count as f64 } else { 0.0 }));
        out.push('\n');
    }
    out
}
