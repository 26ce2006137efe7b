//! Reversible encoding of a [`DataTable`] into a dense training matrix:
//! one-hot blocks for categorical columns and mode-specific normalization
//! (scalar + mode indicator) for continuous columns.

pub mod vgm;

use ndarray::{Array2, ArrayView1, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Cell, ColumnKind, ColumnSpec, DataTable, TableSchema};
use crate::error::{Error, Result};
use crate::par;

pub use vgm::{fit_vgm, GaussianMixtureFit, VgmConfig};

/// Continuous values are standardized by this many component deviations.
pub const NORMALIZATION_SPAN: f64 = 4.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SegmentKind {
    /// Normalized scalar of a continuous column (tanh head).
    Scalar,
    /// Mode indicator of a continuous column (softmax head).
    Mode,
    /// One-hot block of a categorical column (softmax head).
    Category,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub column: usize,
    pub kind: SegmentKind,
    pub offset: usize,
    pub width: usize,
}

impl Segment {
    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.width
    }

    pub fn is_softmax(&self) -> bool {
        self.kind != SegmentKind::Scalar
    }
}

/// Segment descriptor of an encoded row.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Layout {
    pub segments: Vec<Segment>,
    pub width: usize,
}

impl Layout {
    /// Segments belonging to one source column, in order.
    pub fn column_segments(&self, column: usize) -> impl Iterator<Item = &Segment> {
        self.segments.iter().filter(move |s| s.column == column)
    }

    pub fn category_segment(&self, column: usize) -> Option<&Segment> {
        self.column_segments(column).find(|s| s.kind == SegmentKind::Category)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum ColumnEncoder {
    Categorical { categories: usize },
    Continuous { mixture: GaussianMixtureFit },
}

impl ColumnEncoder {
    pub fn width(&self) -> usize {
        match self {
            ColumnEncoder::Categorical { categories } => *categories,
            ColumnEncoder::Continuous { mixture } => 1 + mixture.n_components(),
        }
    }
}

/// Fitted per-column encoders plus the resulting layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformModel {
    pub schema: TableSchema,
    pub encoders: Vec<ColumnEncoder>,
    pub layout: Layout,
}

/// Encoded rows together with the layout that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedMatrix {
    pub values: Array2<f64>,
    pub layout: Layout,
}

fn build_layout(encoders: &[ColumnEncoder]) -> Layout {
    let mut segments = Vec::new();
    let mut offset = 0;
    for (column, enc) in encoders.iter().enumerate() {
        match enc {
            ColumnEncoder::Categorical { categories } => {
                segments.push(Segment { column, kind: SegmentKind::Category, offset, width: *categories });
                offset += categories;
            }
            ColumnEncoder::Continuous { mixture } => {
                segments.push(Segment { column, kind: SegmentKind::Scalar, offset, width: 1 });
                let k = mixture.n_components();
                segments.push(Segment { column, kind: SegmentKind::Mode, offset: offset + 1, width: k });
                offset += 1 + k;
            }
        }
    }
    Layout { segments, width: offset }
}

impl TransformModel {
    /// Fit mixtures for every continuous column (in parallel) and derive the
    /// layout. Each column gets its own seed derived from `seed`.
    pub fn fit(data: &DataTable, config: &VgmConfig) -> Result<Self> {
        let schema = data.schema().clone();
        let columns: Vec<usize> = (0..schema.len()).collect();
        let encoders = par::map_slice(&columns, |&c| -> Result<ColumnEncoder> {
            let spec = &schema.columns[c];
            Ok(match spec.kind {
                ColumnKind::Categorical => ColumnEncoder::Categorical { categories: spec.categories.len() },
                ColumnKind::Continuous => {
                    let cfg = VgmConfig { seed: config.seed.wrapping_add(c as u64), ..*config };
                    ColumnEncoder::Continuous { mixture: fit_vgm(&data.continuous_column(c), &cfg)? }
                }
            })
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
        Self::from_parts(schema, encoders)
    }

    pub fn from_parts(schema: TableSchema, encoders: Vec<ColumnEncoder>) -> Result<Self> {
        if encoders.len() != schema.len() {
            return Err(Error::Shape(format!(
                "{} encoders for {} columns",
                encoders.len(),
                schema.len()
            )));
        }
        for (enc, spec) in encoders.iter().zip(&schema.columns) {
            match (enc, spec.kind) {
                (ColumnEncoder::Categorical { categories }, ColumnKind::Categorical)
                    if *categories == spec.categories.len() => {}
                (ColumnEncoder::Continuous { mixture }, ColumnKind::Continuous) => mixture.validate()?,
                _ => {
                    return Err(Error::Schema(format!(
                        "encoder does not match column '{}'",
                        spec.name
                    )))
                }
            }
        }
        let layout = build_layout(&encoders);
        Ok(TransformModel { schema, encoders, layout })
    }

    pub fn width(&self) -> usize {
        self.layout.width
    }

    pub fn transform(&self, data: &DataTable, seed: u64) -> Result<EncodedMatrix> {
        transform_table(data, self, seed)
    }

    pub fn inverse(&self, values: ArrayView2<f64>) -> Result<DataTable> {
        inverse_transform(values, self)
    }
}

/// One-hot vector for `label` over the column's categories.
pub fn encode_categorical(label: &str, spec: &ColumnSpec) -> Result<Vec<f64>> {
    let idx = spec
        .category_index(label)
        .ok_or_else(|| Error::Data(format!("unknown label '{label}' for column '{}'", spec.name)))?;
    let mut v = vec![0.0; spec.categories.len()];
    v[idx] = 1.0;
    Ok(v)
}

/// Sample a mode from the component responsibilities and return the clamped
/// normalized scalar together with the chosen mode index.
pub fn encode_continuous<R: Rng + ?Sized>(x: f64, fit: &GaussianMixtureFit, rng: &mut R) -> (f64, usize) {
    let probs = fit.responsibilities(x);
    let mut u = rng.random::<f64>();
    let mut mode = probs.len() - 1;
    for (k, &p) in probs.iter().enumerate() {
        if u < p {
            mode = k;
            break;
        }
        u -= p;
    }
    (normalize(x, fit, mode), mode)
}

pub fn normalize(x: f64, fit: &GaussianMixtureFit, mode: usize) -> f64 {
    ((x - fit.means[mode]) / (NORMALIZATION_SPAN * fit.stds[mode])).clamp(-1.0, 1.0)
}

pub fn denormalize(alpha: f64, fit: &GaussianMixtureFit, mode: usize) -> f64 {
    fit.means[mode] + NORMALIZATION_SPAN * fit.stds[mode] * alpha.clamp(-1.0, 1.0)
}

/// Encode every row. Mode sampling uses one random stream per column so the
/// columns can be encoded independently.
pub fn transform_table(data: &DataTable, model: &TransformModel, seed: u64) -> Result<EncodedMatrix> {
    if data.schema() != &model.schema {
        return Err(Error::Schema("table schema differs from the fitted transform".into()));
    }
    let n = data.n_rows();
    let columns: Vec<usize> = (0..model.encoders.len()).collect();
    let blocks = par::map_slice(&columns, |&c| {
        let width = model.encoders[c].width();
        let mut block = Array2::<f64>::zeros((n, width));
        match &model.encoders[c] {
            ColumnEncoder::Categorical { .. } => {
                for (i, row) in data.rows().iter().enumerate() {
                    block[[i, row[c].category().expect("categorical")]] = 1.0;
                }
            }
            ColumnEncoder::Continuous { mixture } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(c as u64);
                for (i, row) in data.rows().iter().enumerate() {
                    let (alpha, mode) = encode_continuous(row[c].value().expect("continuous"), mixture, &mut rng);
                    block[[i, 0]] = alpha;
                    block[[i, 1 + mode]] = 1.0;
                }
            }
        }
        block
    });
    let mut values = Array2::<f64>::zeros((n, model.layout.width));
    let mut offset = 0;
    for block in blocks {
        let w = block.ncols();
        values.slice_mut(ndarray::s![.., offset..offset + w]).assign(&block);
        offset += w;
    }
    Ok(EncodedMatrix { values, layout: model.layout.clone() })
}

fn argmax(v: ArrayView1<f64>) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Decode encoded (or generated, soft) rows back to a table. Soft segments are
/// resolved by argmax.
pub fn inverse_transform(values: ArrayView2<f64>, model: &TransformModel) -> Result<DataTable> {
    if values.ncols() != model.layout.width {
        return Err(Error::Shape(format!(
            "encoded width {} does not match model width {}",
            values.ncols(),
            model.layout.width
        )));
    }
    let rows = values
        .outer_iter()
        .map(|row| {
            let mut cells = Vec::with_capacity(model.encoders.len());
            let mut offset = 0;
            for enc in &model.encoders {
                match enc {
                    ColumnEncoder::Categorical { categories } => {
                        cells.push(Cell::Category(argmax(row.slice(ndarray::s![offset..offset + categories]))));
                        offset += categories;
                    }
                    ColumnEncoder::Continuous { mixture } => {
                        let k = mixture.n_components();
                        let mode = argmax(row.slice(ndarray::s![offset + 1..offset + 1 + k]));
                        cells.push(Cell::Value(denormalize(row[offset], mixture, mode)));
                        offset += 1 + k;
                    }
                }
            }
            cells
        })
        .collect();
    DataTable::new(model.schema.clone(), rows)
}
