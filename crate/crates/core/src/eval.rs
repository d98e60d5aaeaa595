//! Paired rCT/sCT metrics and the batch report.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ray::ElementPlan;
use crate::skull::SkullMask;
use crate::volume::{Unit, Volume};

/// Mean |rct − sct| over the voxels of `mask`.
pub fn mae_skull(rct: &Volume, sct: &Volume, mask: &SkullMask) -> Result<f64> {
    rct.require_unit(Unit::Hu, "rCT")?;
    sct.require_unit(Unit::Hu, "sCT")?;
    rct.require_same_grid(sct, "sCT")?;
    rct.require_same_grid(&mask.mask, "skull mask")?;
    let mut sum = 0.0;
    let mut n = 0usize;
    for ((&a, &b), &m) in rct.data().iter().zip(sct.data()).zip(mask.mask.data()) {
        if m != 0.0 {
            sum += (a as f64 - b as f64).abs();
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::EmptyMask);
    }
    Ok(sum / n as f64)
}

/// Product-moment correlation.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(Error::DimensionMismatch(format!(
            "pearson inputs differ in length: {} vs {}",
            xs.len(),
            ys.len()
        )));
    }
    if xs.len() < 2 {
        return Err(Error::UndefinedCorrelation(format!("need at least 2 pairs, got {}", xs.len())));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (&x, &y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::UndefinedCorrelation("zero variance".into()));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Overlap {
    pub both_active: usize,
    pub both_inactive: usize,
    pub rct_only_active: usize,
    pub sct_only_active: usize,
}

impl Overlap {
    pub fn total(&self) -> usize {
        self.both_active + self.both_inactive + self.rct_only_active + self.sct_only_active
    }

    /// Fraction of elements with the same classification.
    pub fn fraction(&self) -> f64 {
        let t = self.total();
        if t == 0 {
            return 0.0;
        }
        (self.both_active + self.both_inactive) as f64 / t as f64
    }
}

/// `rct` and `sct` must list the same element indices in the same order.
pub fn element_overlap(rct: &[ElementPlan], sct: &[ElementPlan]) -> Result<Overlap> {
    if rct.len() != sct.len() {
        return Err(Error::IndexMismatch(format!(
            "{} rCT elements vs {} sCT elements",
            rct.len(),
            sct.len()
        )));
    }
    let mut o = Overlap {
        both_active: 0,
        both_inactive: 0,
        rct_only_active: 0,
        sct_only_active: 0,
    };
    for (a, b) in rct.iter().zip(sct) {
        if a.element_index != b.element_index {
            return Err(Error::IndexMismatch(format!(
                "element {} paired with element {}",
                a.element_index, b.element_index
            )));
        }
        match (a.active, b.active) {
            (true, true) => o.both_active += 1,
            (false, false) => o.both_inactive += 1,
            (true, false) => o.rct_only_active += 1,
            (false, true) => o.sct_only_active += 1,
        }
    }
    Ok(o)
}

/// `(rct, sct)` value pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pair<T> {
    pub rct: T,
    pub sct: T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseComparison {
    pub case_id: String,
    pub mae_skull: f64,
    pub nae: Pair<usize>,
    pub sdr: Pair<f64>,
    pub st: Pair<f64>,
    pub overlap: Overlap,
    pub overlap_fraction: f64,
    pub max_rms: Pair<f64>,
    pub pressure_deficit_pct: f64,
    pub focal_shift: Pair<f64>,
    pub argmax_distance: f64,
    /// Pose shared by both plans, degrees.
    pub tilt_x: f64,
    pub tilt_y: f64,
}

pub fn pressure_deficit_pct(rct: f64, sct: f64) -> f64 {
    if rct == 0.0 {
        0.0
    } else {
        100.0 * (rct - sct) / rct
    }
}

pub const REPORT_COLUMNS: [&str; 21] = [
    "case_id",
    "mae_skull",
    "nae_rct",
    "nae_sct",
    "sdr_rct",
    "sdr_sct",
    "st_rct",
    "st_sct",
    "both_active",
    "both_inactive",
    "rct_only_active",
    "sct_only_active",
    "overlap_fraction",
    "max_rms_rct",
    "max_rms_sct",
    "pressure_deficit_pct",
    "focal_shift_rct",
    "focal_shift_sct",
    "argmax_distance",
    "tilt_x",
    "tilt_y",
];

impl CaseComparison {
    fn csv_fields(&self) -> Vec<String> {
        let o = &self.overlap;
        vec![
            self.case_id.clone(),
            self.mae_skull.to_string(),
            self.nae.rct.to_string(),
            self.nae.sct.to_string(),
            self.sdr.rct.to_string(),
            self.sdr.sct.to_string(),
            self.st.rct.to_string(),
            self.st.sct.to_string(),
            o.both_active.to_string(),
            o.both_inactive.to_string(),
            o.rct_only_active.to_string(),
            o.sct_only_active.to_string(),
            self.overlap_fraction.to_string(),
            self.max_rms.rct.to_string(),
            self.max_rms.sct.to_string(),
            self.pressure_deficit_pct.to_string(),
            self.focal_shift.rct.to_string(),
            self.focal_shift.sct.to_string(),
            self.argmax_distance.to_string(),
            self.tilt_x.to_string(),
            self.tilt_y.to_string(),
        ]
    }

    fn from_csv_fields(f: &[&str]) -> std::result::Result<Self, String> {
        if f.len() != REPORT_COLUMNS.len() {
            return Err(format!("expected {} fields, got {}", REPORT_COLUMNS.len(), f.len()));
        }
        let num = |i: usize| -> std::result::Result<f64, String> {
            f[i].parse::<f64>().map_err(|e| format!("{}: {e}", REPORT_COLUMNS[i]))
        };
        let int = |i: usize| -> std::result::Result<usize, String> {
            f[i].parse::<usize>().map_err(|e| format!("{}: {e}", REPORT_COLUMNS[i]))
        };
        Ok(CaseComparison {
            case_id: f[0].to_string(),
            mae_skull: num(1)?,
            nae: Pair { rct: int(2)?, sct: int(3)? },
            sdr: Pair { rct: num(4)?, sct: num(5)? },
            st: Pair { rct: num(6)?, sct: num(7)? },
            overlap: Overlap {
                both_active: int(8)?,
                both_inactive: int(9)?,
                rct_only_active: int(10)?,
                sct_only_active: int(11)?,
            },
            overlap_fraction: num(12)?,
            max_rms: Pair { rct: num(13)?, sct: num(14)? },
            pressure_deficit_pct: num(15)?,
            focal_shift: Pair { rct: num(16)?, sct: num(17)? },
            argmax_distance: num(18)?,
            tilt_x: num(19)?,
            tilt_y: num(20)?,
        })
    }
}

/// One row per case under a fixed header. Case ids may not contain commas or newlines.
pub fn write_report_csv<W: Write>(rows: &[CaseComparison], mut w: W) -> std::io::Result<()> {
    writeln!(w, "{}", REPORT_COLUMNS.join(","))?;
    for r in rows {
        writeln!(w, "{}", r.csv_fields().join(","))?;
    }
    Ok(())
}

pub fn read_report_csv<R: BufRead>(r: R, what: &std::path::Path) -> Result<Vec<CaseComparison>> {
    let mut lines = r.lines();
    let header = match lines.next() {
        Some(h) => h.map_err(|e| Error::io(what, e))?,
        None => return Err(Error::format(what, "empty report")),
    };
    if header.trim_end() != REPORT_COLUMNS.join(",") {
        return Err(Error::format(what, "unexpected report header"));
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line.map_err(|e| Error::io(what, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.trim_end().split(',').collect();
        let row = CaseComparison::from_csv_fields(&fields)
            .map_err(|e| Error::format(what, format!("row {}: {e}", i + 1)))?;
        rows.push(row);
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    /// Sample standard deviation; null for a single case.
    pub std: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Correlations {
    pub nae: Option<f64>,
    pub sdr: Option<f64>,
    pub st: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportSummary {
    pub cases: usize,
    pub mae_skull: Stat,
    pub nae_delta: Stat,
    pub sdr_delta: Stat,
    pub st_delta: Stat,
    pub overlap_fraction: Stat,
    pub pressure_deficit_pct: Stat,
    pub focal_shift_rct: Stat,
    pub focal_shift_sct: Stat,
    pub argmax_distance: Stat,
    /// rCT vs sCT Pearson correlation per planning metric; null when undefined.
    pub pearson: Correlations,
}

fn stat(v: &[f64]) -> Stat {
    let n = v.len() as f64;
    let mean = if v.is_empty() { 0.0 } else { v.iter().sum::<f64>() / n };
    let std = (v.len() >= 2).then(|| (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt());
    Stat { mean, std }
}

pub fn summarize(rows: &[CaseComparison]) -> ReportSummary {
    let col = |f: &dyn Fn(&CaseComparison) -> f64| rows.iter().map(f).collect::<Vec<f64>>();
    let corr = |a: Vec<f64>, b: Vec<f64>| pearson(&a, &b).ok();
    ReportSummary {
        cases: rows.len(),
        mae_skull: stat(&col(&|r| r.mae_skull)),
        nae_delta: stat(&col(&|r| r.nae.rct as f64 - r.nae.sct as f64)),
        sdr_delta: stat(&col(&|r| r.sdr.rct - r.sdr.sct)),
        st_delta: stat(&col(&|r| r.st.rct - r.st.sct)),
        overlap_fraction: stat(&col(&|r| r.overlap_fraction)),
        pressure_deficit_pct: stat(&col(&|r| r.pressure_deficit_pct)),
        focal_shift_rct: stat(&col(&|r| r.focal_shift.rct)),
        focal_shift_sct: stat(&col(&|r| r.focal_shift.sct)),
        argmax_distance: stat(&col(&|r| r.argmax_distance)),
        pearson: Correlations {
            nae: corr(col(&|r| r.nae.rct as f64), col(&|r| r.nae.sct as f64)),
            sdr: corr(col(&|r| r.sdr.rct), col(&|r| r.sdr.sct)),
            st: corr(col(&|r| r.st.rct), col(&|r| r.st.sct)),
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn plan(i: usize, active: bool) -> ElementPlan {
        ElementPlan {
            element_index: i,
            incident_angle: Some(if active { 5.0 } else { 30.0 }),
            entry_point: None,
            exit_point: None,
            skull_thickness: 0.0,
            sdr_ray: 0.0,
            active,
        }
    }

    #[test]
    fn pearson_examples() {
        let x = [1.0, 2.0, 3.0];
        assert!((pearson(&x, &x).unwrap() - 1.0).abs() < 1e-12);
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        assert!((pearson(&x, &neg).unwrap() + 1.0).abs() < 1e-12);
        // cov 5, var 2 and 114/9
        let r = pearson(&x, &[2.0, 4.0, 7.0]).unwrap();
        assert!((r - 5.0 / (2.0f64 * 114.0 / 9.0).sqrt()).abs() < 1e-12, "{r}");
        assert!((r - 0.9934).abs() < 1e-3, "{r}");
        let r = pearson(&x, &[2.0, 4.0, 5.0]).unwrap();
        assert!((r - 0.9819).abs() < 1e-3, "{r}");
        assert!(matches!(pearson(&x, &[1.0, 1.0, 1.0]), Err(Error::UndefinedCorrelation(_))));
        assert!(matches!(pearson(&[1.0], &[2.0]), Err(Error::UndefinedCorrelation(_))));
        assert!(pearson(&x, &[1.0, 2.0]).is_err());
    }

    #[test]
    fn overlap_examples() {
        let a: Vec<_> = (0..990).map(|i| plan(i, i % 3 == 0)).collect();
        let o = element_overlap(&a, &a).unwrap();
        assert_eq!(o.fraction(), 1.0);
        assert_eq!(o.total(), 990);

        let mut b = a.clone();
        b[7].active = !b[7].active;
        assert_eq!(element_overlap(&a, &b).unwrap().fraction(), 989.0 / 990.0);

        let c: Vec<_> = a.iter().map(|p| plan(p.element_index, !p.active)).collect();
        assert_eq!(element_overlap(&a, &c).unwrap().fraction(), 0.0);

        let mut d = a.clone();
        d[3].element_index = 4;
        assert!(matches!(element_overlap(&a, &d), Err(Error::IndexMismatch(_))));
        assert!(matches!(element_overlap(&a, &a[1..]), Err(Error::IndexMismatch(_))));
    }

    fn row(id: &str, k: f64) -> CaseComparison {
        CaseComparison {
            case_id: id.into(),
            mae_skull: 10.0 * k,
            nae: Pair { rct: 900 + k as usize, sct: 890 + 2 * k as usize },
            sdr: Pair { rct: 0.5 + 0.01 * k, sct: 0.45 + 0.012 * k },
            st: Pair { rct: 6.0 + 0.1 * k, sct: 6.2 + 0.09 * k },
            overlap: Overlap { both_active: 880, both_inactive: 90, rct_only_active: 12, sct_only_active: 8 },
            overlap_fraction: 970.0 / 990.0,
            max_rms: Pair { rct: 100.0, sct: 80.0 - k },
            pressure_deficit_pct: pressure_deficit_pct(100.0, 80.0 - k),
            focal_shift: Pair { rct: 0.5, sct: 0.7071067811865476 },
            argmax_distance: 0.1 * k,
            tilt_x: -2.0,
            tilt_y: 3.0,
        }
    }

    #[test]
    fn report_round_trip_is_exact() {
        let rows: Vec<_> = (0..4).map(|i| row(&format!("case{i:02}"), i as f64 / 3.0)).collect();
        let mut buf = Vec::new();
        write_report_csv(&rows, &mut buf).unwrap();
        let back = read_report_csv(buf.as_slice(), std::path::Path::new("mem")).unwrap();
        assert_eq!(back, rows);
        let mut again = Vec::new();
        write_report_csv(&back, &mut again).unwrap();
        assert_eq!(buf, again);
    }

    #[test]
    fn summary_nulls_undefined_correlations() {
        let mut rows: Vec<_> = (0..3).map(|i| row(&format!("c{i}"), i as f64)).collect();
        for r in &mut rows {
            r.nae = Pair { rct: 990, sct: 990 };
        }
        let s = summarize(&rows);
        assert_eq!(s.cases, 3);
        assert_eq!(s.pearson.nae, None);
        assert!(s.pearson.sdr.is_some());
        let json = serde_json::to_string(&s).unwrap();
        assert!(json.contains("\"nae\":null"));
        assert_eq!(summarize(&rows[..1]).mae_skull.std, None);
    }

    #[test]
    fn deficit() {
        assert_eq!(pressure_deficit_pct(100.0, 75.0), 25.0);
        assert_eq!(pressure_deficit_pct(50.0, 50.0), 0.0);
    }

    proptest! {
        #[test]
        fn pearson_affine_invariance(
            xs in proptest::collection::vec(-100.0f64..100.0, 3..20),
            noise in proptest::collection::vec(-10.0f64..10.0, 20),
            a in 0.1f64..10.0, b in -50.0f64..50.0,
        ) {
            let ys: Vec<f64> = xs.iter().zip(&noise).map(|(x, n)| 0.5 * x + n).collect();
            if let Ok(r) = pearson(&xs, &ys) {
                let scaled: Vec<f64> = xs.iter().map(|x| a * x + b).collect();
                prop_assert!((pearson(&scaled, &ys).unwrap() - r).abs() < 1e-9);
                let neg: Vec<f64> = ys.iter().map(|y| -y).collect();
                prop_assert!((pearson(&xs, &neg).unwrap() + r).abs() < 1e-9);
            }
        }

        #[test]
        fn overlap_is_symmetric(bits in proptest::collection::vec((any::<bool>(), any::<bool>()), 1..200)) {
            let a: Vec<_> = bits.iter().enumerate().map(|(i, (x, _))| plan(i, *x)).collect();
            let b: Vec<_> = bits.iter().enumerate().map(|(i, (_, y))| plan(i, *y)).collect();
            let ab = element_overlap(&a, &b).unwrap();
            let ba = element_overlap(&b, &a).unwrap();
            prop_assert_eq!(ab.fraction(), ba.fraction());
            prop_assert_eq!(ab.rct_only_active, ba.sct_only_active);
            prop_assert_eq!(ab.total(), bits.len());
        }
    }
}
