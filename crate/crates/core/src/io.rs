//! File formats: weight JSON, dataset/waveform/history/PSD CSV.

use std::fmt::Write as _;
use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use serde_json::Number;

use crate::dataset::Dataset;
use crate::dpd::{DpdModel, FixedDpdModel, Params};
use crate::error::{Error, Result};
use crate::fxp::FxpFormat;
use crate::nonlin::ActivationPair;
use crate::quant::QuantConfig;
use crate::signal::Waveform;
use crate::train::TrainHistory;

pub const WEIGHT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Flavor {
    Float,
    Fixed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FormatDescriptor {
    total_bits: u32,
    frac_bits: u32,
}

impl FormatDescriptor {
    fn of(f: FxpFormat) -> Self {
        Self {
            total_bits: f.total_bits(),
            frac_bits: f.frac_bits(),
        }
    }

    fn format(self) -> Result<FxpFormat> {
        FxpFormat::new(self.total_bits, self.frac_bits)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct QuantDescriptor {
    weight: FormatDescriptor,
    activation: FormatDescriptor,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Shapes {
    input: usize,
    hidden: usize,
    output: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    data: Vec<Number>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WeightFile {
    schema_version: u32,
    flavor: Flavor,
    /// Fixed flavor only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    format: Option<QuantDescriptor>,
    activations: ActivationPair,
    shapes: Shapes,
    tensors: Vec<TensorEntry>,
}

/// A model loaded from a weight file.
#[derive(Debug, Clone, PartialEq)]
pub enum ModelFile {
    Float(DpdModel),
    Fixed(FixedDpdModel),
}

impl ModelFile {
    pub fn flavor(&self) -> Flavor {
        match self {
            ModelFile::Float(_) => Flavor::Float,
            ModelFile::Fixed(_) => Flavor::Fixed,
        }
    }
}

fn entries<T: Copy>(p: &Params<T>, mut num: impl FnMut(T) -> Number) -> Vec<TensorEntry> {
    p.tensors()
        .into_iter()
        .map(|t| TensorEntry {
            name: t.name.to_string(),
            shape: t.shape,
            data: t.data.iter().map(|&v| num(v)).collect(),
        })
        .collect()
}

fn shapes<T: Copy>(p: &Params<T>) -> Shapes {
    Shapes {
        input: p.input_size(),
        hidden: p.hidden_size(),
        output: p.output_size(),
    }
}

/// Serialize a model to pretty JSON. Float weights are written in shortest
/// round-trip form, fixed weights as raw integer codes.
pub fn model_to_json(model: &ModelFile) -> Result<String> {
    let file = match model {
        ModelFile::Float(m) => {
            m.params.validate_dims()?;
            let mut bad = None;
            let tensors = entries(&m.params, |v| {
                Number::from_f64(v).unwrap_or_else(|| {
                    bad = Some(v);
                    Number::from(0)
                })
            });
            if let Some(v) = bad {
                return Err(Error::NonFinite {
                    value: v,
                    context: "model weight".into(),
                });
            }
            WeightFile {
                schema_version: WEIGHT_SCHEMA_VERSION,
                flavor: Flavor::Float,
                format: None,
                activations: m.activations.clone(),
                shapes: shapes(&m.params),
                tensors,
            }
        }
        ModelFile::Fixed(m) => WeightFile {
            schema_version: WEIGHT_SCHEMA_VERSION,
            flavor: Flavor::Fixed,
            format: Some(QuantDescriptor {
                weight: FormatDescriptor::of(m.quant.weight_fmt),
                activation: FormatDescriptor::of(m.quant.activation_fmt),
            }),
            activations: m.activations.clone(),
            shapes: shapes(&m.params),
            tensors: entries(&m.params, Number::from),
        },
    };
    let mut s = serde_json::to_string_pretty(&file)?;
    s.push('\n');
    Ok(s)
}

fn fill<T: Copy>(params: &mut Params<T>, file: &WeightFile, conv: impl Fn(&Number) -> Option<T>) -> Result<()> {
    let expected: Vec<(String, Vec<usize>)> =
        params.tensors().into_iter().map(|t| (t.name.to_string(), t.shape)).collect();
    if file.tensors.len() != expected.len() {
        return Err(Error::Format(format!(
            "expected {} tensors, found {}",
            expected.len(),
            file.tensors.len()
        )));
    }
    let mut flat = Vec::with_capacity(params.param_count());
    for ((name, shape), t) in expected.iter().zip(&file.tensors) {
        if &t.name != name || &t.shape != shape {
            return Err(Error::Format(format!(
                "tensor `{}` {:?} where `{name}` {shape:?} was expected",
                t.name, t.shape
            )));
        }
        if t.data.len() != shape.iter().product::<usize>() {
            return Err(Error::Format(format!(
                "tensor `{name}` has {} values for shape {shape:?}",
                t.data.len()
            )));
        }
        for (i, v) in t.data.iter().enumerate() {
            flat.push(conv(v).ok_or_else(|| Error::Format(format!("tensor `{name}` value {i} is invalid: {v}")))?);
        }
    }
    params.assign_flat(&flat)
}

pub fn model_from_json(text: &str) -> Result<ModelFile> {
    let file: WeightFile = serde_json::from_str(text)?;
    if file.schema_version != WEIGHT_SCHEMA_VERSION {
        return Err(Error::Format(format!(
            "unsupported weight schema version {} (expected {WEIGHT_SCHEMA_VERSION})",
            file.schema_version
        )));
    }
    file.activations.validate()?;
    let Shapes { input, hidden, output } = file.shapes;
    match file.flavor {
        Flavor::Float => {
            if file.format.is_some() {
                return Err(Error::Format("float weight file carries a fixed-point format".into()));
            }
            let mut params = Params::filled(input, hidden, output, 0.0);
            fill(&mut params, &file, |n| n.as_f64().filter(|v| v.is_finite()))?;
            Ok(ModelFile::Float(DpdModel::new(params, file.activations)?))
        }
        Flavor::Fixed => {
            let d = file
                .format
                .ok_or_else(|| Error::Format("fixed weight file without `format`".into()))?;
            let quant = QuantConfig {
                weight_fmt: d.weight.format()?,
                activation_fmt: d.activation.format()?,
            };
            let mut params = Params::filled(input, hidden, output, 0i32);
            fill(&mut params, &file, |n| n.as_i64().and_then(|v| i32::try_from(v).ok()))?;
            Ok(ModelFile::Fixed(FixedDpdModel::new(params, quant, file.activations)?))
        }
    }
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

pub fn save_model(path: &Path, model: &ModelFile) -> Result<()> {
    write_text(path, &model_to_json(model)?)
}

pub fn load_model(path: &Path) -> Result<ModelFile> {
    model_from_json(&read_text(path)?).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

/// Exact decimal form of an f64 (17 significant digits).
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Rows of equally long float columns as CSV text.
pub fn columns_csv(header: &[&str], rows: impl IntoIterator<Item = Vec<f64>>) -> String {
    let mut s = header.join(",");
    s.push('\n');
    for row in rows {
        let cells: Vec<String> = row.into_iter().map(fmt_f64).collect();
        s.push_str(&cells.join(","));
        s.push('\n');
    }
    s
}

/// Parse float CSV with the given header; errors name the source and line.
pub fn parse_columns_csv(text: &str, header: &[&str], source: &str) -> Result<Vec<Vec<f64>>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let found: Vec<String> = rdr
        .headers()
        .map_err(|e| Error::Format(format!("{source}: {e}")))?
        .iter()
        .map(str::to_string)
        .collect();
    if found != header {
        return Err(Error::Format(format!(
            "{source}:1: expected header `{}`, found `{}`",
            header.join(","),
            found.join(",")
        )));
    }
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::Format(format!("{source}: {e}")))?;
        let line = rec.position().map_or(0, |p| p.line());
        let row = rec
            .iter()
            .enumerate()
            .map(|(i, cell)| {
                cell.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| Error::Format(format!("{source}:{line}: column `{}`: bad number `{cell}`", header[i])))
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    Ok(rows)
}

pub const DATASET_HEADER: [&str; 4] = ["I_in", "Q_in", "I_out", "Q_out"];
pub const WAVEFORM_HEADER: [&str; 2] = ["I", "Q"];

pub fn dataset_csv(d: &Dataset) -> String {
    columns_csv(
        &DATASET_HEADER,
        d.input
            .samples
            .iter()
            .zip(&d.output.samples)
            .map(|(x, y)| vec![x.re, x.im, y.re, y.im]),
    )
}

pub fn parse_dataset_csv(text: &str, sample_rate_hz: f64, source: &str) -> Result<Dataset> {
    let rows = parse_columns_csv(text, &DATASET_HEADER, source)?;
    if rows.is_empty() {
        return Err(Error::Empty("dataset"));
    }
    let input = rows.iter().map(|r| Complex64::new(r[0], r[1])).collect();
    let output = rows.iter().map(|r| Complex64::new(r[2], r[3])).collect();
    Dataset::new(Waveform::new(input, sample_rate_hz), Waveform::new(output, sample_rate_hz))
}

pub fn write_dataset_csv(path: &Path, d: &Dataset) -> Result<()> {
    write_text(path, &dataset_csv(d))
}

pub fn read_dataset_csv(path: &Path, sample_rate_hz: f64) -> Result<Dataset> {
    parse_dataset_csv(&read_text(path)?, sample_rate_hz, &path.display().to_string())
}

pub fn iq_csv(samples: &[Complex64]) -> String {
    columns_csv(&WAVEFORM_HEADER, samples.iter().map(|v| vec![v.re, v.im]))
}

pub fn parse_iq_csv(text: &str, source: &str) -> Result<Vec<Complex64>> {
    Ok(parse_columns_csv(text, &WAVEFORM_HEADER, source)?
        .into_iter()
        .map(|r| Complex64::new(r[0], r[1]))
        .collect())
}

pub fn history_csv(h: &TrainHistory) -> String {
    let mut s = String::from("epoch,train_loss,val_loss,lr\n");
    for e in &h.epochs {
        let _ = writeln!(s, "{},{},{},{}", e.epoch, fmt_f64(e.train_loss), fmt_f64(e.val_loss), fmt_f64(e.lr));
    }
    s
}

pub fn psd_csv(rows: &[(f64, f64)]) -> String {
    columns_csv(&["freq_hz", "power_db"], rows.iter().map(|&(f, p)| vec![f, p]))
}

/// Pretty JSON with a trailing newline.
pub fn to_json<T: Serialize>(v: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(v)?;
    s.push('\n');
    Ok(s)
}
