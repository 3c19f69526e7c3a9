//! Reader for the public LendingClub 2007-2011 loan export.
//!
//! The raw export carries a one-line notice above the header and summary
//! lines after the data, and stores credit-line dates as `Mon-YYYY` text.
//! [`read_export`] strips the extra lines and derives
//! `credit_history_years` from `issue_d` and `earliest_cr_line`.

use std::io::Read;
use std::path::Path;

use super::{DataError, RawTable};

/// Feature schema for the export; 24 modelled features, same names as the
/// synthetic corpus.
pub const SCHEMA_TOML: &str = include_str!("../../assets/schemas/lendingclub_2007_2011.toml");

pub const HISTORY_COLUMN: &str = "credit_history_years";

pub fn load_export(path: &Path) -> Result<RawTable, DataError> {
    let file = std::fs::File::open(path).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    read_export(file)
}

pub fn read_export<R: Read>(mut reader: R) -> Result<RawTable, DataError> {
    let mut text = String::new();
    reader.read_to_string(&mut text).map_err(|source| DataError::Io {
        path: "<lendingclub export>".into(),
        source,
    })?;
    // the header is the first line naming the outcome column
    let start = text
        .lines()
        .position(|l| l.split(',').any(|h| h.trim().trim_matches('"') == "loan_status"))
        .ok_or_else(|| DataError::MissingColumn("loan_status".into()))?;
    let body: String = text.lines().skip(start).flat_map(|l| [l, "\n"]).collect();

    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(body.as_bytes());
    let mut headers: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
    let width = headers.len();
    let mut rows: Vec<Vec<String>> = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        // summary lines and blank separators are narrower than a loan row
        if rec.len() != width {
            continue;
        }
        rows.push(rec.iter().map(str::to_string).collect());
    }

    let issue = headers.iter().position(|h| h == "issue_d");
    let earliest = headers.iter().position(|h| h == "earliest_cr_line");
    if let (Some(i), Some(e), false) = (issue, earliest, headers.iter().any(|h| h == HISTORY_COLUMN)) {
        headers.push(HISTORY_COLUMN.to_string());
        for row in &mut rows {
            let years = match (month_index(&row[i]), month_index(&row[e])) {
                (Some(a), Some(b)) => ((a - b) as f64 / 12.0).to_string(),
                _ => String::new(),
            };
            row.push(years);
        }
    }
    RawTable::from_records(headers, rows)
}

/// Months since year 0 for `Mon-YYYY` or `Mon-YY`.
fn month_index(s: &str) -> Option<i64> {
    let (mon, year) = s.trim().split_once('-')?;
    const MONTHS: [&str; 12] = [
        "Jan", "Feb", "Mar", "Apr", "May", "Jun", "Jul", "Aug", "Sep", "Oct", "Nov", "Dec",
    ];
    let m = MONTHS.iter().position(|&x| x.eq_ignore_ascii_case(mon))? as i64;
    let y: i64 = year.parse().ok()?;
    // two-digit years: no credit line in this corpus postdates 2011
    let y = match (year.len(), y) {
        (2, y) if y <= 15 => 2000 + y,
        (2, y) => 1900 + y,
        (_, y) => y,
    };
    Some(12 * y + m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{prepare, FeatureSchema};

    const STATES: [&str; 4] = ["CA", "TX", "NY", "OH"];

    fn fake_export(n: usize) -> String {
        let mut s = String::from("Notes offered by Prospectus (https://example.invalid)\n");
        s.push_str(
            "id,loan_amnt,term,int_rate,installment,grade,emp_length,home_ownership,annual_inc,\
             verification_status,issue_d,loan_status,purpose,addr_state,dti,delinq_2yrs,earliest_cr_line,\
             fico_range_low,inq_last_6mths,mths_since_last_delinq,open_acc,pub_rec,revol_bal,revol_util,\
             total_acc,total_pymnt,pub_rec_bankruptcies,tax_liens\n",
        );
        for r in 0..n {
            let status = match r % 5 {
                0 => "Charged Off",
                4 if r % 10 == 4 => "Does not meet the credit policy. Status:Fully Paid",
                _ => "Fully Paid",
            };
            s.push_str(&format!(
                "{r},{},\" {} months\",\" {:.2}%\",{},{},{},{},{},{},Dec-2011,{status},{},{},\
                 {},{},Jan-19{:02},{},{},{},{},{},{},{}%,{},{},{},{}\n",
                1000 + 37 * r,
                [36, 60][r % 2],
                7.0 + (r % 13) as f64,
                30 + r,
                ["A", "B", "C"][r % 3],
                if r % 7 == 0 { "n/a" } else { "3 years" },
                ["RENT", "MORTGAGE", "OWN", "NONE"][r % 4],
                40_000 + 100 * r,
                ["Verified", "Not Verified", "Source Verified"][r % 3],
                ["credit_card", "car", "wedding", "other"][r % 4],
                STATES[r % 4],
                (r % 30) as f64 / 1.5,
                r % 3,
                80 + r % 20,
                660 + r % 40,
                r % 4,
                if r % 3 == 0 {
                    (r % 48).to_string()
                } else {
                    String::new()
                },
                3 + r % 9,
                r % 2,
                500 + 11 * r,
                (r % 90) as f64,
                10 + r % 15,
                900 + r,
                r % 2,
                r % 3,
            ));
        }
        s.push_str("\n\nTotal amount funded in policy code 1: 12345\n");
        s
    }

    #[test]
    fn month_parsing() {
        assert_eq!(
            month_index("Dec-2011").unwrap() - month_index("Jan-1985").unwrap(),
            26 * 12 + 11
        );
        assert_eq!(month_index("Mar-99"), month_index("Mar-1999"));
        assert_eq!(month_index("Jun-05"), month_index("Jun-2005"));
        assert_eq!(month_index("sometime"), None);
    }

    #[test]
    fn export_prepares_with_bundled_schema() {
        let raw = read_export(fake_export(200).as_bytes()).unwrap();
        assert_eq!(raw.n_rows(), 200);
        let schema = FeatureSchema::from_toml_str(SCHEMA_TOML).unwrap();
        assert!(schema.target.drop_other);
        let p = prepare(raw, &schema, 0.7, 1).unwrap();
        assert_eq!(p.report.other_outcome_rows, 20);
        assert_eq!(p.dataset.n_rows(), 180);
        assert_eq!(p.dataset.groups().len(), 24);
        let history = p
            .dataset
            .encoded_names()
            .iter()
            .position(|n| n == HISTORY_COLUMN)
            .unwrap();
        // Dec-2011 against Jan-1980
        assert!((p.dataset.row(0)[history] - (31.0 + 11.0 / 12.0)).abs() < 1e-9);
    }
}
