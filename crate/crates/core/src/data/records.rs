use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, RowError};

/// One purchase-log row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawRecord {
    pub week: u32,
    pub gender: String,
    pub region: String,
    pub price: f64,
    pub large_category: String,
    pub middle_category: String,
    /// The small category name doubles as the item id.
    pub small_category: String,
    /// 0-based position among the data rows of the source file.
    pub row_index: usize,
}

/// Maps the logical fields onto column names of a delimited file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schema {
    pub week: String,
    pub gender: String,
    pub region: String,
    pub price: String,
    pub large_category: String,
    pub middle_category: String,
    pub small_category: String,
    pub delimiter: u8,
}

impl Default for Schema {
    fn default() -> Self {
        Self {
            week: "week".into(),
            gender: "gender".into(),
            region: "region".into(),
            price: "price".into(),
            large_category: "large_category".into(),
            middle_category: "middle_category".into(),
            small_category: "small_category".into(),
            delimiter: b',',
        }
    }
}

impl Schema {
    fn columns(&self) -> [&str; 7] {
        [
            &self.week,
            &self.gender,
            &self.region,
            &self.price,
            &self.large_category,
            &self.middle_category,
            &self.small_category,
        ]
    }
}

/// Parses a delimited purchase log with a header row. Malformed rows are
/// collected and reported together rather than skipped.
pub fn parse_records<R: Read>(source: R, schema: &Schema) -> Result<Vec<RawRecord>> {
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(schema.delimiter)
        .has_headers(true)
        .flexible(true)
        .from_reader(source);
    let headers = reader.headers()?.clone();
    let mut positions = [0usize; 7];
    for (slot, name) in positions.iter_mut().zip(schema.columns()) {
        *slot = headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::Schema(name.to_string()))?;
    }
    let [week_at, gender_at, region_at, price_at, large_at, middle_at, small_at] = positions;

    let mut records = Vec::new();
    let mut errors = Vec::new();
    for (row_index, row) in reader.records().enumerate() {
        let line = row_index + 2;
        let row = match row {
            Ok(r) => r,
            Err(e) => {
                errors.push(RowError {
                    line,
                    message: e.to_string(),
                });
                continue;
            }
        };
        let field = |i: usize| row.get(i).map(str::trim).unwrap_or("");
        let mut problems = Vec::new();

        let week = match field(week_at).parse::<u32>() {
            Ok(w) if w >= 1 => w,
            Ok(_) => {
                problems.push("week must be >= 1".to_string());
                0
            }
            Err(_) => {
                problems.push(format!("unparseable week {:?}", field(week_at)));
                0
            }
        };
        let price = match field(price_at).parse::<f64>() {
            Ok(p) if p.is_finite() && p > 0.0 => p,
            Ok(p) => {
                problems.push(format!("price must be positive, got {p}"));
                0.0
            }
            Err(_) => {
                problems.push(format!("unparseable price {:?}", field(price_at)));
                0.0
            }
        };
        for (name, at) in [
            (&schema.gender, gender_at),
            (&schema.region, region_at),
            (&schema.large_category, large_at),
            (&schema.middle_category, middle_at),
            (&schema.small_category, small_at),
        ] {
            if field(at).is_empty() {
                problems.push(format!("empty `{name}`"));
            }
        }

        if problems.is_empty() {
            records.push(RawRecord {
                week,
                gender: field(gender_at).to_string(),
                region: field(region_at).to_string(),
                price,
                large_category: field(large_at).to_string(),
                middle_category: field(middle_at).to_string(),
                small_category: field(small_at).to_string(),
                row_index,
            });
        } else {
            errors.push(RowError {
                line,
                message: problems.join("; "),
            });
        }
    }

    if errors.is_empty() {
        Ok(records)
    } else {
        Err(Error::Rows(errors))
    }
}

/// Writes records in the canonical layout: schema column order, shortest
/// round-trip float formatting.
pub fn write_records<W: Write>(records: &[RawRecord], sink: W, schema: &Schema) -> Result<()> {
    let mut writer = csv::WriterBuilder::new()
        .delimiter(schema.delimiter)
        .from_writer(sink);
    writer.write_record(schema.columns())?;
    for r in records {
        writer.write_record([
            r.week.to_string().as_str(),
            &r.gender,
            &r.region,
            &r.price.to_string(),
            &r.large_category,
            &r.middle_category,
            &r.small_category,
        ])?;
    }
    writer.flush()?;
    Ok(())
}
