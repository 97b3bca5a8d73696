use std::io::Write;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::corpus::{Location, Sex};
use crate::error::{Error, Result};

/// Column layout of the meta-feature matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetaWidth {
    /// Screening Normal column dropped (it is 1 - scr_abnormal).
    Eleven,
    /// Both screening columns kept, for sensitivity analysis.
    Twelve,
}

impl MetaWidth {
    pub fn feature_names(self) -> Vec<&'static str> {
        let mut v = vec!["sp_normal", "sp_crackles", "sp_rhonchi"];
        if self == MetaWidth::Twelve {
            v.push("scr_normal");
        }
        v.extend([
            "scr_abnormal",
            "dg_pneumonia",
            "dg_bronchial",
            "dg_normal",
            "dg_others",
            "age",
            "sex",
            "location",
        ]);
        v
    }

    pub fn width(self) -> usize {
        match self {
            MetaWidth::Eleven => 11,
            MetaWidth::Twelve => 12,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EventMeta {
    pub age: f64,
    pub sex: Sex,
    pub location: Location,
}

fn check(name: &str, p: &ArrayView2<f64>, n: usize, k: usize) -> Result<()> {
    if p.ncols() != k {
        return Err(Error::Dimension {
            expected: k,
            actual: p.ncols(),
        });
    }
    if p.nrows() != n {
        return Err(Error::InvalidInput(format!(
            "{name} probabilities cover {} of {n} events",
            p.nrows()
        )));
    }
    if let Some(i) = (0..n).find(|&i| p.row(i).iter().any(|v| !(0.0..=1.0).contains(v))) {
        return Err(Error::InvalidInput(format!("{name} row {i} is not a probability vector")));
    }
    Ok(())
}

/// Fuses base-model probabilities with patient metadata, one row per event:
/// `[sp x3, scr_abnormal, dg x4, age, sex (male = 1), location (1-4)]`.
pub fn assemble_meta_features(
    sp: ArrayView2<f64>,
    scr: ArrayView2<f64>,
    dg: ArrayView2<f64>,
    meta: &[EventMeta],
    width: MetaWidth,
) -> Result<Array2<f64>> {
    let n = meta.len();
    check("sound_pattern", &sp, n, 3)?;
    check("screening", &scr, n, 2)?;
    check("disease_group", &dg, n, 4)?;
    let w = width.width();
    let mut out = Array2::zeros((n, w));
    for i in 0..n {
        let mut row = Vec::with_capacity(w);
        row.extend(sp.row(i).iter());
        if width == MetaWidth::Twelve {
            row.push(scr[[i, 0]]);
        }
        row.push(scr[[i, 1]]);
        row.extend(dg.row(i).iter());
        row.push(meta[i].age);
        row.push(if meta[i].sex == Sex::Male { 1.0 } else { 0.0 });
        row.push(meta[i].location.ordinal() as f64);
        out.row_mut(i).assign(&ndarray::Array1::from(row));
    }
    Ok(out)
}

/// Writes the OOF table: `event_id, fold`, then sp x3, scr x2, dg x4.
pub fn write_oof_table(
    out: impl Write,
    event_ids: &[String],
    folds: &[usize],
    sp: ArrayView2<f64>,
    scr: ArrayView2<f64>,
    dg: ArrayView2<f64>,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "event_id",
        "fold",
        "sp_normal",
        "sp_crackles",
        "sp_rhonchi",
        "scr_normal",
        "scr_abnormal",
        "dg_pneumonia",
        "dg_bronchial",
        "dg_normal",
        "dg_others",
    ])?;
    for i in 0..event_ids.len() {
        let mut rec = vec![event_ids[i].clone(), folds[i].to_string()];
        let fmt = |v: &f64| format!("{v:.17e}");
        rec.extend(sp.row(i).iter().map(fmt));
        rec.extend(scr.row(i).iter().map(fmt));
        rec.extend(dg.row(i).iter().map(fmt));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn column_order_example() {
        let m = assemble_meta_features(
            array![[0.2, 0.5, 0.3]].view(),
            array![[0.1, 0.9]].view(),
            array![[0.4, 0.3, 0.2, 0.1]].view(),
            &[EventMeta {
                age: 5.0,
                sex: Sex::Male,
                location: Location::P3,
            }],
            MetaWidth::Eleven,
        )
        .unwrap();
        assert_eq!(m.row(0).to_vec(), vec![0.2, 0.5, 0.3, 0.9, 0.4, 0.3, 0.2, 0.1, 5.0, 1.0, 3.0]);
        assert_eq!(MetaWidth::Eleven.feature_names().len(), 11);
    }

    #[test]
    fn twelve_keeps_screening_normal() {
        let m = assemble_meta_features(
            array![[0.2, 0.5, 0.3]].view(),
            array![[0.1, 0.9]].view(),
            array![[0.4, 0.3, 0.2, 0.1]].view(),
            &[EventMeta {
                age: 5.0,
                sex: Sex::Female,
                location: Location::P1,
            }],
            MetaWidth::Twelve,
        )
        .unwrap();
        assert_eq!(m.ncols(), 12);
        assert_eq!((m[[0, 3]], m[[0, 4]], m[[0, 10]]), (0.1, 0.9, 0.0));
    }

    #[test]
    fn missing_rows_error() {
        let meta = vec![
            EventMeta {
                age: 1.0,
                sex: Sex::Male,
                location: Location::P1
            };
            2
        ];
        let r = assemble_meta_features(
            array![[0.2, 0.5, 0.3]].view(),
            array![[0.1, 0.9], [0.5, 0.5]].view(),
            array![[0.4, 0.3, 0.2, 0.1], [0.4, 0.3, 0.2, 0.1]].view(),
            &meta,
            MetaWidth::Eleven,
        );
        assert!(r.is_err());
    }
}
