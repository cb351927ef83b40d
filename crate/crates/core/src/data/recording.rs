use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use super::labels::StateLabel;
use crate::error::{Error, Result};

pub const RECORDING_FORMAT: &str = "wormgraph-recording";
pub const RECORDING_VERSION: u32 = 1;

/// One individual's labeled multi-neuron recording.
///
/// `traces` and `derivatives` are `N x T` (neurons by timesteps).
#[derive(Debug, Clone, PartialEq)]
pub struct WormRecording {
    pub worm_id: String,
    pub dataset_tag: String,
    pub sample_period_s: f64,
    pub neuron_names: Vec<String>,
    pub traces: Array2<f64>,
    pub derivatives: Array2<f64>,
    pub labels: Vec<StateLabel>,
}

/// On-disk recording encodings.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RecordingFormat {
    /// JSON document (`.json`).
    Json,
    /// Line-oriented `key: value` header with whitespace-separated matrix rows (`.wrec`).
    Text,
}

impl RecordingFormat {
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("json") => RecordingFormat::Json,
            _ => RecordingFormat::Text,
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct RecordingFile {
    format: String,
    version: u32,
    worm_id: String,
    dataset_tag: String,
    sample_period_s: f64,
    neuron_names: Vec<String>,
    traces: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    derivatives: Option<Vec<Vec<f64>>>,
    labels: Vec<String>,
}

impl WormRecording {
    pub fn n_neurons(&self) -> usize {
        self.traces.nrows()
    }

    pub fn n_timesteps(&self) -> usize {
        self.traces.ncols()
    }

    /// Checks the structural invariants (shapes, name uniqueness, sizes).
    pub fn validate(&self) -> Result<()> {
        let (n, t) = self.traces.dim();
        if n == 0 {
            return Err(Error::InvalidRecording(format!(
                "{}: neuron_names: recording has no neurons",
                self.worm_id
            )));
        }
        if t < 2 {
            return Err(Error::InvalidRecording(format!(
                "{}: traces: need at least 2 timesteps, got {t}",
                self.worm_id
            )));
        }
        if self.neuron_names.len() != n {
            return Err(Error::InvalidRecording(format!(
                "{}: neuron_names: {} names for {n} trace rows",
                self.worm_id,
                self.neuron_names.len()
            )));
        }
        if self.derivatives.dim() != (n, t) {
            return Err(Error::InvalidRecording(format!(
                "{}: derivatives: shape {:?} differs from traces {:?}",
                self.worm_id,
                self.derivatives.dim(),
                (n, t)
            )));
        }
        if self.labels.len() != t {
            return Err(Error::InvalidRecording(format!(
                "{}: labels: length {} differs from timestep count {t}",
                self.worm_id,
                self.labels.len()
            )));
        }
        let mut seen = HashSet::new();
        for name in &self.neuron_names {
            if !seen.insert(name) {
                return Err(Error::InvalidRecording(format!(
                    "{}: neuron_names: duplicate neuron name `{name}`",
                    self.worm_id
                )));
            }
        }
        if self.traces.iter().chain(self.derivatives.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidRecording(format!(
                "{}: traces: non-finite value",
                self.worm_id
            )));
        }
        if !(self.sample_period_s > 0.0) {
            return Err(Error::InvalidRecording(format!(
                "{}: sample_period_s: must be positive, got {}",
                self.worm_id, self.sample_period_s
            )));
        }
        Ok(())
    }

    /// Builds a recording from raw traces, computing the derivative channel.
    pub fn from_traces(
        worm_id: impl Into<String>,
        dataset_tag: impl Into<String>,
        sample_period_s: f64,
        neuron_names: Vec<String>,
        traces: Array2<f64>,
        labels: Vec<StateLabel>,
    ) -> Result<Self> {
        let derivatives = derivative_matrix(&traces)?;
        let rec = WormRecording {
            worm_id: worm_id.into(),
            dataset_tag: dataset_tag.into(),
            sample_period_s,
            neuron_names,
            traces,
            derivatives,
            labels,
        };
        rec.validate()?;
        Ok(rec)
    }

    pub fn neuron_index(&self, name: &str) -> Option<usize> {
        self.neuron_names.iter().position(|n| n == name)
    }
}

/// Forward difference with the last value repeated, keeping length `T`.
pub fn compute_derivative(trace: &[f64]) -> Result<Vec<f64>> {
    let t = trace.len();
    if t < 2 {
        return Err(Error::InvalidRecording(format!(
            "derivative needs at least 2 samples, got {t}"
        )));
    }
    let mut d: Vec<f64> = trace.windows(2).map(|w| w[1] - w[0]).collect();
    d.push(d[t - 2]);
    Ok(d)
}

fn derivative_matrix(traces: &Array2<f64>) -> Result<Array2<f64>> {
    let (n, t) = traces.dim();
    let mut out = Array2::zeros((n, t));
    for (row, mut dst) in traces.rows().into_iter().zip(out.rows_mut()) {
        let d = compute_derivative(&row.to_vec())?;
        dst.assign(&ndarray::ArrayView1::from(&d));
    }
    Ok(out)
}

/// Min-max scales a row to `[0, 1]`; constant rows become zeros.
pub fn normalize_row(row: &mut [f64]) {
    let (lo, hi) = row
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let span = hi - lo;
    if span > 0.0 && span.is_finite() {
        for v in row.iter_mut() {
            *v = (*v - lo) / span;
        }
    } else {
        row.iter_mut().for_each(|v| *v = 0.0);
    }
}

fn normalize_rows(m: &mut Array2<f64>) {
    for mut row in m.axis_iter_mut(Axis(0)) {
        let mut buf = row.to_vec();
        normalize_row(&mut buf);
        row.assign(&ndarray::ArrayView1::from(&buf));
    }
}

/// Scales every trace row and derivative row to `[0, 1]` over the whole recording.
pub fn normalize_recording(rec: &WormRecording) -> WormRecording {
    let mut out = rec.clone();
    normalize_rows(&mut out.traces);
    normalize_rows(&mut out.derivatives);
    out
}

/// How [`select_neurons`] interprets its name list.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Selection {
    /// Keep exactly these neurons, in the given order.
    Keep,
    /// Drop these neurons, preserving the original order of the rest.
    Exclude,
}

pub fn select_neurons(rec: &WormRecording, names: &[String], mode: Selection) -> Result<WormRecording> {
    let mut indices = Vec::new();
    for name in names {
        let idx = rec
            .neuron_index(name)
            .ok_or_else(|| Error::MissingNeuron(name.clone()))?;
        indices.push(idx);
    }
    let indices = match mode {
        Selection::Keep => indices,
        Selection::Exclude => (0..rec.n_neurons()).filter(|i| !indices.contains(i)).collect(),
    };
    if indices.is_empty() {
        return Err(Error::InvalidRecording(format!(
            "{}: neuron selection leaves no neurons",
            rec.worm_id
        )));
    }
    Ok(WormRecording {
        worm_id: rec.worm_id.clone(),
        dataset_tag: rec.dataset_tag.clone(),
        sample_period_s: rec.sample_period_s,
        neuron_names: indices.iter().map(|&i| rec.neuron_names[i].clone()).collect(),
        traces: rec.traces.select(Axis(0), &indices),
        derivatives: rec.derivatives.select(Axis(0), &indices),
        labels: rec.labels.clone(),
    })
}

/// Neuron names present in every recording, sorted.
pub fn shared_neurons(recs: &[WormRecording]) -> Vec<String> {
    let Some(first) = recs.first() else {
        return Vec::new();
    };
    let mut names: Vec<String> = first
        .neuron_names
        .iter()
        .filter(|n| recs.iter().all(|r| r.neuron_index(n).is_some()))
        .cloned()
        .collect();
    names.sort();
    names
}

fn parse_err(path: &Path, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

fn matrix_from_rows(path: &Path, field: &str, rows: Vec<Vec<f64>>) -> Result<Array2<f64>> {
    let n = rows.len();
    let t = rows.first().map_or(0, Vec::len);
    if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != t) {
        return Err(parse_err(
            path,
            format!("{field}: row {i} has {} values, expected {t}", r.len()),
        ));
    }
    Ok(Array2::from_shape_vec((n, t), rows.into_iter().flatten().collect()).unwrap())
}

fn parse_labels(path: &Path, raw: &[String]) -> Result<Vec<StateLabel>> {
    raw.iter()
        .enumerate()
        .map(|(i, s)| {
            let l: StateLabel = s
                .parse()
                .map_err(|e| parse_err(path, format!("labels[{i}]: {e}")))?;
            if l.is_coarse() {
                return Err(parse_err(
                    path,
                    format!("labels[{i}]: `{s}` is not in the fine alphabet"),
                ));
            }
            Ok(l)
        })
        .collect()
}

impl RecordingFile {
    fn into_recording(self, path: &Path) -> Result<WormRecording> {
        if self.format != RECORDING_FORMAT {
            return Err(parse_err(path, format!("format: expected `{RECORDING_FORMAT}`, got `{}`", self.format)));
        }
        if self.version != RECORDING_VERSION {
            return Err(parse_err(path, format!("version: unsupported version {}", self.version)));
        }
        let traces = matrix_from_rows(path, "traces", self.traces)?;
        if traces.nrows() != self.neuron_names.len() {
            return Err(parse_err(
                path,
                format!(
                    "traces: {} rows for {} neuron_names",
                    traces.nrows(),
                    self.neuron_names.len()
                ),
            ));
        }
        if self.labels.len() != traces.ncols() {
            return Err(parse_err(
                path,
                format!(
                    "labels: length {} differs from timestep count {}",
                    self.labels.len(),
                    traces.ncols()
                ),
            ));
        }
        let labels = parse_labels(path, &self.labels)?;
        let derivatives = match self.derivatives {
            Some(rows) => matrix_from_rows(path, "derivatives", rows)?,
            None => {
                if traces.ncols() < 2 {
                    return Err(parse_err(path, "traces: need at least 2 timesteps"));
                }
                derivative_matrix(&traces)?
            }
        };
        let rec = WormRecording {
            worm_id: self.worm_id,
            dataset_tag: self.dataset_tag,
            sample_period_s: self.sample_period_s,
            neuron_names: self.neuron_names,
            traces,
            derivatives,
            labels,
        };
        rec.validate().map_err(|e| parse_err(path, e.to_string()))?;
        Ok(rec)
    }

    fn from_recording(rec: &WormRecording) -> Self {
        RecordingFile {
            format: RECORDING_FORMAT.into(),
            version: RECORDING_VERSION,
            worm_id: rec.worm_id.clone(),
            dataset_tag: rec.dataset_tag.clone(),
            sample_period_s: rec.sample_period_s,
            neuron_names: rec.neuron_names.clone(),
            traces: rec.traces.rows().into_iter().map(|r| r.to_vec()).collect(),
            derivatives: Some(rec.derivatives.rows().into_iter().map(|r| r.to_vec()).collect()),
            labels: rec.labels.iter().map(|l| l.as_str().to_string()).collect(),
        }
    }
}

fn parse_text(path: &Path, text: &str) -> Result<RecordingFile> {
    let mut file = RecordingFile {
        format: String::new(),
        version: 0,
        worm_id: String::new(),
        dataset_tag: String::new(),
        sample_period_s: f64::NAN,
        neuron_names: Vec::new(),
        traces: Vec::new(),
        derivatives: None,
        labels: Vec::new(),
    };
    #[derive(PartialEq)]
    enum Section {
        Header,
        Traces,
        Derivatives,
        Labels,
    }
    let mut section = Section::Header;
    let mut seen_header = HashSet::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        let at = |m: String| parse_err(path, format!("line {}: {m}", lineno + 1));
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        match line {
            "traces:" => {
                section = Section::Traces;
                continue;
            }
            "derivatives:" => {
                section = Section::Derivatives;
                file.derivatives = Some(Vec::new());
                continue;
            }
            "labels:" => {
                section = Section::Labels;
                continue;
            }
            _ => {}
        }
        match section {
            Section::Header => {
                let (key, value) = line
                    .split_once(':')
                    .ok_or_else(|| at(format!("expected `key: value`, got `{line}`")))?;
                let (key, value) = (key.trim(), value.trim());
                if !seen_header.insert(key.to_string()) {
                    return Err(at(format!("{key}: repeated header field")));
                }
                match key {
                    "format" => file.format = value.to_string(),
                    "version" => {
                        file.version = value
                            .parse()
                            .map_err(|_| at(format!("version: not an integer: `{value}`")))?
                    }
                    "worm_id" => file.worm_id = value.to_string(),
                    "dataset_tag" => file.dataset_tag = value.to_string(),
                    "sample_period_s" => {
                        file.sample_period_s = value
                            .parse()
                            .map_err(|_| at(format!("sample_period_s: not a number: `{value}`")))?
                    }
                    "neuron_names" => {
                        file.neuron_names = value.split_whitespace().map(str::to_string).collect()
                    }
                    other => return Err(at(format!("unknown header field `{other}`"))),
                }
            }
            Section::Traces | Section::Derivatives => {
                let row = line
                    .split_whitespace()
                    .map(|v| v.parse::<f64>())
                    .collect::<std::result::Result<Vec<_>, _>>()
                    .map_err(|e| at(format!("matrix value: {e}")))?;
                if section == Section::Traces {
                    file.traces.push(row);
                } else {
                    file.derivatives.as_mut().unwrap().push(row);
                }
            }
            Section::Labels => file.labels.extend(line.split_whitespace().map(str::to_string)),
        }
    }
    for required in ["format", "version", "worm_id", "dataset_tag", "sample_period_s", "neuron_names"] {
        if !seen_header.contains(required) {
            return Err(parse_err(path, format!("{required}: missing header field")));
        }
    }
    Ok(file)
}

fn render_text(rec: &WormRecording) -> String {
    let mut s = String::new();
    writeln!(s, "format: {RECORDING_FORMAT}").unwrap();
    writeln!(s, "version: {RECORDING_VERSION}").unwrap();
    writeln!(s, "worm_id: {}", rec.worm_id).unwrap();
    writeln!(s, "dataset_tag: {}", rec.dataset_tag).unwrap();
    writeln!(s, "sample_period_s: {:?}", rec.sample_period_s).unwrap();
    writeln!(s, "neuron_names: {}", rec.neuron_names.join(" ")).unwrap();
    for (title, m) in [("traces:", &rec.traces), ("derivatives:", &rec.derivatives)] {
        writeln!(s, "{title}").unwrap();
        for row in m.rows() {
            let vals: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
            writeln!(s, "{}", vals.join(" ")).unwrap();
        }
    }
    writeln!(s, "labels:").unwrap();
    let labels: Vec<&str> = rec.labels.iter().map(|l| l.as_str()).collect();
    writeln!(s, "{}", labels.join(" ")).unwrap();
    s
}

/// Reads a recording file. The result is not normalized.
pub fn load_recording(path: &Path, format: RecordingFormat) -> Result<WormRecording> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file = match format {
        RecordingFormat::Json => {
            serde_json::from_str::<RecordingFile>(&text).map_err(|e| parse_err(path, e.to_string()))?
        }
        RecordingFormat::Text => parse_text(path, &text)?,
    };
    file.into_recording(path)
}

/// Serializes a recording; output is byte-stable for equal inputs.
pub fn render_recording(rec: &WormRecording, format: RecordingFormat) -> String {
    match format {
        RecordingFormat::Json => {
            let mut s = serde_json::to_string_pretty(&RecordingFile::from_recording(rec)).unwrap();
            s.push('\n');
            s
        }
        RecordingFormat::Text => render_text(rec),
    }
}

pub fn save_recording(rec: &WormRecording, path: &Path, format: RecordingFormat) -> Result<()> {
    fs::write(path, render_recording(rec, format)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use StateLabel::*;

    fn names(list: &[&str]) -> Vec<String> {
        list.iter().map(|s| s.to_string()).collect()
    }

    pub(crate) fn small_recording() -> WormRecording {
        let traces = Array2::from_shape_fn((3, 10), |(n, t)| (n as f64 + 1.0) * (t as f64).sin());
        let labels = (0..10).map(|t| if t < 5 { Forward } else { Reverse1 }).collect();
        WormRecording::from_traces("w1", "test", 0.33, names(&["A", "B", "C"]), traces, labels).unwrap()
    }

    #[test]
    fn derivative_examples() {
        assert_eq!(compute_derivative(&[5.0, 5.0, 5.0]).unwrap(), vec![0.0; 3]);
        assert_eq!(compute_derivative(&[0.0, 1.0, 2.0, 3.0]).unwrap(), vec![1.0; 4]);
        assert_eq!(compute_derivative(&[0.0, 2.0, 1.0]).unwrap(), vec![2.0, -1.0, -1.0]);
        assert!(compute_derivative(&[1.0]).is_err());
    }

    #[test]
    fn normalize_examples() {
        let mut r = vec![2.0, 4.0, 6.0];
        normalize_row(&mut r);
        assert_eq!(r, vec![0.0, 0.5, 1.0]);
        let mut c = vec![5.0, 5.0, 5.0];
        normalize_row(&mut c);
        assert_eq!(c, vec![0.0; 3]);
        let mut u = vec![0.0, 0.25, 1.0];
        normalize_row(&mut u);
        assert_eq!(u, vec![0.0, 0.25, 1.0]);
    }

    #[test]
    fn round_trip_both_formats() {
        let rec = small_recording();
        let dir = tempfile::tempdir().unwrap();
        for (name, fmt) in [("r.json", RecordingFormat::Json), ("r.wrec", RecordingFormat::Text)] {
            let path = dir.path().join(name);
            save_recording(&rec, &path, fmt).unwrap();
            assert_eq!(RecordingFormat::from_path(&path), fmt);
            let back = load_recording(&path, fmt).unwrap();
            assert_eq!(back, rec);
            assert_eq!((back.n_neurons(), back.n_timesteps()), (3, 10));
        }
    }

    #[test]
    fn label_length_mismatch_names_both_lengths() {
        let mut rec = small_recording();
        rec.labels.pop();
        let text = render_recording(&rec, RecordingFormat::Json);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.json");
        fs::write(&path, text).unwrap();
        let err = load_recording(&path, RecordingFormat::Json).unwrap_err().to_string();
        assert!(err.contains("labels") && err.contains("9") && err.contains("10"), "{err}");
    }

    #[test]
    fn duplicate_names_rejected() {
        let mut rec = small_recording();
        rec.neuron_names[2] = "A".into();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("dup.wrec");
        fs::write(&path, render_recording(&rec, RecordingFormat::Text)).unwrap();
        let err = load_recording(&path, RecordingFormat::Text).unwrap_err().to_string();
        assert!(err.contains("duplicate") && err.contains("`A`"), "{err}");
    }

    #[test]
    fn text_format_reports_line_of_bad_value() {
        let rec = small_recording();
        let text = render_recording(&rec, RecordingFormat::Text).replacen("traces:\n", "traces:\n0.1 oops\n", 1);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.wrec");
        fs::write(&path, text).unwrap();
        let err = load_recording(&path, RecordingFormat::Text).unwrap_err().to_string();
        assert!(err.contains("line 8"), "{err}");
    }

    #[test]
    fn missing_derivatives_are_computed() {
        let rec = small_recording();
        let mut file = RecordingFile::from_recording(&rec);
        file.derivatives = None;
        let back = file.into_recording(Path::new("mem")).unwrap();
        assert_eq!(back.derivatives, rec.derivatives);
    }

    #[test]
    fn selection_keeps_requested_order_and_excludes() {
        let shared = [
            "AIBL", "AIBR", "ALA", "AVAL", "AVAR", "AVBL", "AVER", "RID", "RIML", "RIMR", "RMED",
            "RMEL", "RMER", "VB01", "VB02",
        ];
        let traces = Array2::from_shape_fn((15, 4), |(n, t)| (n * 4 + t) as f64);
        let rec = WormRecording::from_traces("w", "t", 0.3, names(&shared), traces, vec![Forward; 4]).unwrap();

        let three = select_neurons(&rec, &names(&["AIBR", "AVAL", "VB02"]), Selection::Keep).unwrap();
        assert_eq!(three.neuron_names, names(&["AIBR", "AVAL", "VB02"]));
        assert_eq!(three.traces.row(1), rec.traces.row(3));

        let no_ava = select_neurons(&rec, &names(&["AVAL", "AVAR"]), Selection::Exclude).unwrap();
        assert_eq!(no_ava.n_neurons(), 13);
        assert!(no_ava.neuron_index("AVAL").is_none());

        let all = select_neurons(&rec, &rec.neuron_names.clone(), Selection::Keep).unwrap();
        assert_eq!(all, rec);

        let err = select_neurons(&rec, &names(&["XYZ"]), Selection::Keep).unwrap_err();
        assert!(err.to_string().contains("XYZ"));
    }
}
