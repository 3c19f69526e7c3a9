//! Synthetic loan corpus with LendingClub-style columns.
//!
//! The default outcome depends on the features through a logit with
//! thresholds and interactions, so a tree ensemble has structure to find
//! that a linear model cannot express. Output is a pure function of
//! `(n_rows, seed)`.

use std::io::Write;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, Normal};

use super::DataError;

pub const DEFAULT_ROWS: usize = 10_000;
pub const DEFAULT_SEED: u64 = 7;

/// Schema matching the generated columns: 24 modelled features.
pub const SCHEMA_TOML: &str = include_str!("../../assets/schemas/synthetic.toml");

const GRADES: [(&str, f64); 7] = [
    ("A", 0.25),
    ("B", 0.30),
    ("C", 0.20),
    ("D", 0.12),
    ("E", 0.07),
    ("F", 0.04),
    ("G", 0.02),
];

const EMP_LENGTH: [&str; 11] = [
    "< 1 year",
    "1 year",
    "2 years",
    "3 years",
    "4 years",
    "5 years",
    "6 years",
    "7 years",
    "8 years",
    "9 years",
    "10+ years",
];

const HOME: [(&str, f64); 5] = [
    ("RENT", 0.47),
    ("MORTGAGE", 0.44),
    ("OWN", 0.08),
    ("OTHER", 0.007),
    ("NONE", 0.003),
];

const VERIFICATION: [(&str, f64); 3] = [("Not Verified", 0.43), ("Verified", 0.32), ("Source Verified", 0.25)];

const PURPOSE: [(&str, f64); 14] = [
    ("debt_consolidation", 0.47),
    ("credit_card", 0.13),
    ("home_improvement", 0.07),
    ("house", 0.01),
    ("car", 0.04),
    ("major_purchase", 0.05),
    ("small_business", 0.05),
    ("medical", 0.02),
    ("vacation", 0.01),
    ("wedding", 0.02),
    ("moving", 0.015),
    ("educational", 0.01),
    ("renewable_energy", 0.005),
    ("other", 0.1),
];

const STATES: [(&str, f64); 16] = [
    ("CA", 0.18),
    ("NY", 0.10),
    ("FL", 0.08),
    ("TX", 0.07),
    ("NJ", 0.05),
    ("IL", 0.05),
    ("PA", 0.04),
    ("VA", 0.04),
    ("GA", 0.04),
    ("MA", 0.04),
    ("OH", 0.04),
    ("WA", 0.04),
    ("MI", 0.05),
    ("NC", 0.06),
    ("CO", 0.06),
    ("MN", 0.06),
];

const HEADER: [&str; 29] = [
    "id",
    "loan_amnt",
    "term",
    "int_rate",
    "installment",
    "grade",
    "emp_length",
    "home_ownership",
    "annual_inc",
    "verification_status",
    "purpose",
    "addr_state",
    "dti",
    "delinq_2yrs",
    "credit_history_years",
    "fico_range_low",
    "inq_last_6mths",
    "mths_since_last_delinq",
    "open_acc",
    "pub_rec",
    "revol_bal",
    "revol_util",
    "total_acc",
    "pub_rec_bankruptcies",
    "tax_liens",
    "policy_code",
    "next_pymnt_d",
    "total_pymnt",
    "loan_status",
];

fn pick<'a, R: Rng>(rng: &mut R, table: &[(&'a str, f64)]) -> (usize, &'a str) {
    let total: f64 = table.iter().map(|(_, w)| w).sum();
    let mut u = rng.gen::<f64>() * total;
    for (i, (name, w)) in table.iter().enumerate() {
        if u < *w {
            return (i, name);
        }
        u -= w;
    }
    let last = table.len() - 1;
    (last, table[last].0)
}

fn small_count<R: Rng>(rng: &mut R, probs: &[f64]) -> u32 {
    let mut u = rng.gen::<f64>();
    for (k, p) in probs.iter().enumerate() {
        if u < *p {
            return k as u32;
        }
        u -= p;
    }
    probs.len() as u32
}

fn round_to(x: f64, step: f64) -> f64 {
    (x / step).round() * step
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Write `n_rows` synthetic loans as CSV.
pub fn write_corpus<W: Write>(out: W, n_rows: usize, seed: u64) -> Result<(), DataError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let std_normal = Normal::new(0.0, 1.0).expect("valid");
    let amount = LogNormal::new(9.1, 0.6).expect("valid");
    let income = LogNormal::new(11.0, 0.5).expect("valid");
    let balance = LogNormal::new(9.0, 1.0).expect("valid");

    let mut w = csv::Writer::from_writer(out);
    w.write_record(HEADER)?;
    for id in 0..n_rows {
        let mut z = || std_normal.sample(&mut rng);
        let e = [z(), z(), z(), z(), z(), z(), z()];

        let (g, grade) = pick(&mut rng, &GRADES);
        let g = g as f64;
        let int_rate = (5.5 + 2.6 * g + 0.8 * e[0]).max(5.0);
        let long_term = rng.gen::<f64>() < 0.15 + 0.06 * g;
        let months = if long_term { 60.0 } else { 36.0 };
        let loan_amnt = round_to(amount.sample(&mut rng), 25.0).clamp(1000.0, 35000.0);
        let r = int_rate / 1200.0;
        let installment = loan_amnt * r / (1.0 - (1.0 + r).powf(-months));
        let emp = rng.gen_range(0..EMP_LENGTH.len());
        let (_, home) = pick(&mut rng, &HOME);
        let annual_inc = round_to(income.sample(&mut rng), 100.0).max(4000.0);
        let (_, verification) = pick(&mut rng, &VERIFICATION);
        let (_, purpose) = pick(&mut rng, &PURPOSE);
        let (_, state) = pick(&mut rng, &STATES);
        let dti = (13.5 + 6.5 * e[1]).clamp(0.0, 30.0);
        let delinq = small_count(&mut rng, &[0.89, 0.08, 0.02]);
        let history = (3.0 + 10.0 * -(1.0 - rng.gen::<f64>()).ln()).min(45.0);
        let fico = round_to(760.0 - 12.0 * g + 20.0 * e[2], 5.0).clamp(660.0, 845.0);
        let inq = small_count(&mut rng, &[0.48, 0.28, 0.14, 0.06, 0.02]);
        let since_delinq = if delinq > 0 || rng.gen::<f64>() < 0.3 {
            Some(rng.gen_range(0..120u32))
        } else {
            None
        };
        let open_acc = (9.0 + 4.0 * e[3]).round().clamp(2.0, 40.0);
        let pub_rec = u32::from(rng.gen::<f64>() < 0.05);
        let revol_bal = round_to(balance.sample(&mut rng), 1.0).min(150_000.0);
        let revol_util = (48.0 + 3.0 * g + 25.0 * e[4]).clamp(0.0, 99.9);
        let total_acc = open_acc + (12.0 + 8.0 * e[5]).abs().round();
        let bankruptcies = if rng.gen::<f64>() < 0.02 {
            None
        } else {
            Some(u32::from(pub_rec > 0 && rng.gen::<f64>() < 0.8))
        };
        let tax_liens = u32::from(rng.gen::<f64>() < 0.01);

        let recent_delinq = delinq > 0 && since_delinq.is_some_and(|m| m < 24);
        let burden = loan_amnt / annual_inc;
        let logit = -2.6 + 0.3 * g + 0.4 * f64::from(long_term) + 0.02 * (dti - 13.0) + 0.2 * f64::from(inq.min(4))
            - 0.35 * (annual_inc / 60_000.0).ln()
            + 1.3 * f64::from(revol_util > 80.0)
            + 0.9 * f64::from(purpose == "small_business")
            + 0.25 * f64::from(home == "RENT")
            + 1.0 * f64::from(recent_delinq)
            + 1.2 * f64::from(burden > 0.3)
            - 0.01 * (fico - 700.0)
            + 1.5 * f64::from(g >= 4.0 && long_term)
            + 1.1 * f64::from(dti > 22.0 && annual_inc < 45_000.0)
            + 0.5 * f64::from(emp == 0)
            + 0.6 * f64::from(pub_rec > 0)
            + 0.2 * e[6];
        let default = rng.gen::<f64>() < sigmoid(logit);
        let total_pymnt = if default {
            loan_amnt * rng.gen_range(0.15..0.8)
        } else {
            installment * months
        };

        w.write_record([
            id.to_string(),
            loan_amnt.to_string(),
            format!("{} months", months as u32),
            format!("{:.2}%", int_rate),
            format!("{:.2}", installment),
            grade.to_string(),
            EMP_LENGTH[emp].to_string(),
            home.to_string(),
            annual_inc.to_string(),
            verification.to_string(),
            purpose.to_string(),
            state.to_string(),
            format!("{:.2}", dti),
            delinq.to_string(),
            format!("{:.1}", history),
            fico.to_string(),
            inq.to_string(),
            since_delinq.map(|m| m.to_string()).unwrap_or_default(),
            open_acc.to_string(),
            pub_rec.to_string(),
            revol_bal.to_string(),
            format!("{:.1}%", revol_util),
            total_acc.to_string(),
            bankruptcies.map(|b| b.to_string()).unwrap_or_default(),
            tax_liens.to_string(),
            "1".to_string(),
            String::new(),
            format!("{:.2}", total_pymnt),
            if default { "Charged Off" } else { "Fully Paid" }.to_string(),
        ])?;
    }
    w.flush().map_err(|e| DataError::Io {
        path: "<synthetic>".into(),
        source: e,
    })?;
    Ok(())
}

pub fn corpus_bytes(n_rows: usize, seed: u64) -> Vec<u8> {
    let mut buf = Vec::new();
    write_corpus(&mut buf, n_rows, seed).expect("writing to memory");
    buf
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{apply_schema, drop_degenerate, read_csv, DropReason, FeatureSchema};

    #[test]
    fn row_count_and_determinism() {
        let a = corpus_bytes(500, 3);
        let b = corpus_bytes(500, 3);
        assert_eq!(a, b);
        assert_ne!(a, corpus_bytes(500, 4));
        let t = read_csv(a.as_slice()).unwrap();
        assert_eq!(t.n_rows(), 500);
    }

    #[test]
    fn schema_yields_24_features() {
        let raw = read_csv(corpus_bytes(2000, DEFAULT_SEED).as_slice()).unwrap();
        let (raw, report) = drop_degenerate(raw).unwrap();
        assert!(report
            .dropped
            .contains(&("policy_code".to_string(), DropReason::ZeroVariance)));
        assert!(report
            .dropped
            .contains(&("next_pymnt_d".to_string(), DropReason::AllMissing)));
        let schema = FeatureSchema::from_toml_str(SCHEMA_TOML).unwrap();
        let ds = apply_schema(&raw, &schema).unwrap();
        assert_eq!(ds.groups().len(), 24);
        let prev = ds.prevalence();
        assert!((0.08..0.3).contains(&prev), "prevalence {prev}");
    }
}
