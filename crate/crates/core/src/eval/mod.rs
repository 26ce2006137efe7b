//! Synthetic-data audits: statistical similarity, ML efficacy and
//! disclosure risk. Every metric is a pure function of its inputs (plus an
//! explicit seed where sampling is involved).

pub mod disclosure;
pub mod efficacy;
pub mod utility;

use crate::data::{DataTable, TableSchema};
use crate::{Error, Result};

pub use disclosure::{
    attribute_disclosure, identity_disclosure, record_distance, AttributeReport, DistanceScaler, IdentityReport,
};
pub use efficacy::{ml_efficacy, EfficacyEntry};
pub use utility::{cramers_v_diff, cs_score, kl_scores, ks_score, pearson_diff, utility_report, UtilityReport};

pub(crate) fn same_schema(a: &TableSchema, b: &TableSchema) -> Result<()> {
    let names = |s: &TableSchema| s.columns.iter().map(|c| (c.name.clone(), c.kind, c.categories.clone())).collect::<Vec<_>>();
    if names(a) != names(b) {
        return Err(Error::Schema("tables do not share a schema".into()));
    }
    Ok(())
}

pub(crate) fn check_tables(tables: &[&DataTable]) -> Result<()> {
    for t in &tables[1..] {
        same_schema(tables[0].schema(), t.schema())?;
    }
    Ok(())
}

/// Serialize `Option<f64>` as a number or the string `"not-applicable"`.
pub mod applicable {
    use serde::{de, Deserialize, Deserializer, Serializer};

    pub const NOT_APPLICABLE: &str = "not-applicable";

    pub fn serialize<S: Serializer>(v: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
        match v {
            Some(x) => s.serialize_f64(*x),
            None => s.serialize_str(NOT_APPLICABLE),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<f64>, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(x) => Ok(Some(x)),
            Raw::Text(t) if t == NOT_APPLICABLE => Ok(None),
            Raw::Text(t) => Err(de::Error::custom(format!("expected a number or \"{NOT_APPLICABLE}\", got {t:?}"))),
        }
    }
}
