use std::fs;
use std::path::Path;

use ndarray::Array2;

use super::{DataError, LabeledDataset, Result};

/// Reads `feature,...,feature,label` rows. The class count is `max label + 1`.
pub fn load_csv(path: impl AsRef<Path>, has_header: bool) -> Result<LabeledDataset> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_csv(&text, has_header)
}

pub fn parse_csv(text: &str, has_header: bool) -> Result<LabeledDataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(has_header)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());

    let mut width: Option<usize> = None;
    let mut values = Vec::new();
    let mut labels = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| DataError::Csv(e.to_string()))?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        if record.len() == 1 && record[0].is_empty() {
            continue;
        }
        let expected = *width.get_or_insert(record.len());
        if record.len() != expected {
            return Err(DataError::RaggedRow {
                line,
                expected,
                found: record.len(),
            });
        }
        if expected < 2 {
            return Err(DataError::RaggedRow {
                line,
                expected: 2,
                found: expected,
            });
        }
        for (column, cell) in record.iter().take(expected - 1).enumerate() {
            match cell.parse::<f64>() {
                Ok(v) if v.is_finite() => values.push(v),
                _ => {
                    return Err(DataError::NonNumeric {
                        line,
                        column: column + 1,
                        value: cell.to_string(),
                    })
                }
            }
        }
        let cell = &record[expected - 1];
        let label: i64 = cell.parse().map_err(|_| DataError::NonNumeric {
            line,
            column: expected,
            value: cell.to_string(),
        })?;
        if label < 0 {
            return Err(DataError::NegativeLabel { line, value: label });
        }
        labels.push(label as usize);
    }

    let Some(width) = width else {
        return Err(DataError::NoSamples);
    };
    let num_classes = labels.iter().max().map_or(0, |m| m + 1);
    let features = Array2::from_shape_vec((labels.len(), width - 1), values)
        .expect("every row checked for width");
    LabeledDataset::new(features, labels, num_classes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_parse() {
        let d = parse_csv("0.0,1.0,0\n1.0,0.0,1\n", false).unwrap();
        assert_eq!(d.len(), 2);
        assert_eq!(d.num_features(), 2);
        assert_eq!(d.num_classes(), 2);
        assert_eq!(d.labels(), &[0, 1]);
    }

    #[test]
    fn header_is_skipped() {
        let d = parse_csv("x,y,label\n0.5,1.5,3\n", true).unwrap();
        assert_eq!(d.len(), 1);
        assert_eq!(d.num_classes(), 4);
        assert_eq!(d.features().row(0).to_vec(), vec![0.5, 1.5]);
    }

    #[test]
    fn empty_input() {
        assert!(matches!(parse_csv("", false), Err(DataError::NoSamples)));
        assert!(matches!(
            parse_csv("a,b,c\n", true),
            Err(DataError::NoSamples)
        ));
    }

    #[test]
    fn ragged_row_reports_line() {
        let err = parse_csv("0,1,0\n1,0,1\n1,2,3,1\n", false).unwrap_err();
        assert!(matches!(
            err,
            DataError::RaggedRow {
                line: 3,
                expected: 3,
                found: 4
            }
        ));
    }

    #[test]
    fn bad_cells() {
        assert!(matches!(
            parse_csv("0,abc,1\n", false),
            Err(DataError::NonNumeric {
                line: 1,
                column: 2,
                ..
            })
        ));
        assert!(matches!(
            parse_csv("0,1,1.5\n", false),
            Err(DataError::NonNumeric { column: 3, .. })
        ));
        assert!(matches!(
            parse_csv("0,1,0\n0,1,-2\n", false),
            Err(DataError::NegativeLabel { line: 2, value: -2 })
        ));
    }
}
