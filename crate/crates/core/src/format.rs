//! Plain-text corpus files.
//!
//! Line 1 is a `#`-prefixed JSON metadata record. Line 2 is the CSV header
//! `sample,atom,t,x,y,z` (fewer coordinate columns for D < 3). Data rows are
//! ordered by `(sample, atom, t)` and floats carry 17 significant digits,
//! so a save/load round trip is exact.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{HbTriple, Regime, RegimeLabels, SampleOrigin, TrajectoryCorpus};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const FORMAT_NAME: &str = "bondcause-corpus";
pub const FORMAT_VERSION: u32 = 1;
const AXES: [&str; 3] = ["x", "y", "z"];

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Metadata {
    format: String,
    version: u32,
    n: usize,
    t: usize,
    d: usize,
    samples: usize,
    dt: f64,
    atom_names: Vec<String>,
    normalization_scale: f64,
    #[serde(default)]
    predicted: bool,
    #[serde(default)]
    regimes: Option<Vec<Regime>>,
    #[serde(default)]
    root_cause_nodes: Vec<usize>,
    #[serde(default)]
    boundary_step: Option<usize>,
    #[serde(default)]
    hb_triples: Vec<HbTriple>,
    #[serde(default)]
    origins: Option<Vec<SampleOrigin>>,
}

/// Formats a float with 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn to_string(corpus: &TrajectoryCorpus, labels: Option<&RegimeLabels>) -> Result<String> {
    corpus.validate()?;
    let (n, t, d) = (corpus.n_atoms(), corpus.steps(), corpus.dims());
    if !(1..=3).contains(&d) {
        return Err(Error::dim(format!("corpus files hold 1 to 3 dimensions, got {d}")));
    }
    if let Some(l) = labels {
        l.validate(corpus.len(), n)?;
    }
    let meta = Metadata {
        format: FORMAT_NAME.into(),
        version: FORMAT_VERSION,
        n,
        t,
        d,
        samples: corpus.len(),
        dt: corpus.dt,
        atom_names: corpus.atom_names.clone(),
        normalization_scale: corpus.normalization_scale,
        predicted: corpus.predicted,
        regimes: labels.map(|l| l.regimes.clone()),
        root_cause_nodes: labels.map(|l| l.root_cause_nodes.clone()).unwrap_or_default(),
        boundary_step: labels.and_then(|l| l.boundary_step),
        hb_triples: corpus.hb_triples.clone(),
        origins: Some(corpus.origins.clone()),
    };
    let mut out = String::with_capacity(corpus.len() * n * t * (12 + 25 * d));
    out.push_str("# ");
    out.push_str(&serde_json::to_string(&meta).map_err(|e| Error::Config(e.to_string()))?);
    out.push('\n');
    out.push_str("sample,atom,t");
    for axis in &AXES[..d] {
        out.push(',');
        out.push_str(axis);
    }
    out.push('\n');
    for (s, sample) in corpus.samples.iter().enumerate() {
        let data = sample.data();
        for i in 0..n {
            for step in 0..t {
                let _ = write!(out, "{s},{i},{step}");
                for k in 0..d {
                    out.push(',');
                    out.push_str(&fmt_f64(data[(i * t + step) * d + k]));
                }
                out.push('\n');
            }
        }
    }
    Ok(out)
}

pub fn from_str(text: &str) -> Result<(TrajectoryCorpus, Option<RegimeLabels>)> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    let (_, first) = lines.next().ok_or_else(|| Error::parse(1, "empty file"))?;
    let json = first
        .strip_prefix('#')
        .ok_or_else(|| Error::parse(1, "missing metadata record"))?;
    let meta: Metadata =
        serde_json::from_str(json.trim()).map_err(|e| Error::parse(1, format!("bad metadata: {e}")))?;
    if meta.format != FORMAT_NAME {
        return Err(Error::parse(1, format!("unknown format '{}'", meta.format)));
    }
    if meta.version != FORMAT_VERSION {
        return Err(Error::parse(1, format!("unsupported version {}", meta.version)));
    }
    let (n, t, d) = (meta.n, meta.t, meta.d);
    if !(1..=3).contains(&d) || n == 0 || t == 0 || meta.samples == 0 {
        return Err(Error::parse(1, "metadata dimensions must be positive with 1 <= d <= 3"));
    }
    if meta.atom_names.len() != n {
        return Err(Error::parse(1, "atom_names length differs from n"));
    }

    let expected_header = format!("sample,atom,t,{}", AXES[..d].join(","));
    let (hline, header) = lines.next().ok_or_else(|| Error::parse(2, "missing CSV header"))?;
    if header.trim() != expected_header {
        return Err(Error::parse(
            hline,
            format!("expected header '{expected_header}', got '{}'", header.trim()),
        ));
    }

    let per_sample = n * t * d;
    let mut samples = Vec::with_capacity(meta.samples);
    let mut current = Vec::with_capacity(per_sample);
    let total_rows = meta.samples * n * t;
    let mut row = 0usize;
    for (lineno, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        if row >= total_rows {
            return Err(Error::parse(lineno, "more rows than the metadata declares"));
        }
        let (s, i, step) = (row / (n * t), (row / t) % n, row % t);
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 3 + d {
            return Err(Error::parse(
                lineno,
                format!("expected {} fields, got {}", 3 + d, fields.len()),
            ));
        }
        let key: Vec<usize> = fields[..3]
            .iter()
            .map(|f| f.trim().parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::parse(lineno, format!("bad index: {e}")))?;
        if key != [s, i, step] {
            return Err(Error::parse(
                lineno,
                format!("expected row ({s},{i},{step}), got ({},{},{})", key[0], key[1], key[2]),
            ));
        }
        for f in &fields[3..] {
            let v: f64 = f
                .trim()
                .parse()
                .map_err(|e| Error::parse(lineno, format!("bad value '{f}': {e}")))?;
            if !v.is_finite() {
                return Err(Error::parse(lineno, format!("non-finite value '{f}'")));
            }
            current.push(v);
        }
        row += 1;
        if current.len() == per_sample {
            samples.push(Tensor::new(vec![n, t, d], std::mem::take(&mut current))?);
        }
    }
    if row != total_rows {
        return Err(Error::parse(
            text.lines().count(),
            format!("expected {total_rows} data rows, found {row}"),
        ));
    }

    let origins = match meta.origins {
        Some(o) if o.len() == meta.samples => o,
        Some(_) => return Err(Error::parse(1, "origins length differs from samples")),
        None => (0..meta.samples)
            .map(|i| SampleOrigin {
                trajectory: i,
                start: 0,
            })
            .collect(),
    };
    let corpus = TrajectoryCorpus {
        samples,
        atom_names: meta.atom_names,
        dt: meta.dt,
        normalization_scale: meta.normalization_scale,
        hb_triples: meta.hb_triples,
        origins,
        predicted: meta.predicted,
    };
    let labels = match meta.regimes {
        Some(regimes) => {
            let l = RegimeLabels {
                regimes,
                root_cause_nodes: meta.root_cause_nodes,
                boundary_step: meta.boundary_step,
            };
            l.validate(corpus.len(), n).map_err(|e| Error::parse(1, e.to_string()))?;
            Some(l)
        }
        None => None,
    };
    Ok((corpus, labels))
}

pub fn save(path: &Path, corpus: &TrajectoryCorpus, labels: Option<&RegimeLabels>) -> Result<()> {
    fs::write(path, to_string(corpus, labels)?)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<(TrajectoryCorpus, Option<RegimeLabels>)> {
    from_str(&fs::read_to_string(path)?)
}
