use serde::{Deserialize, Serialize};

use super::{
    covariate_design, mann_whitney_u, mean, sd, shapiro_wilk, CovariateRow, GroupTestResult, OlsDesign, StatsError,
    StatsResult,
};

/// eTIV-normalized `(directional, undirectional)` volume asymmetry.
pub fn volumetric_asymmetry(left_vol: f64, right_vol: f64, etiv: f64) -> (f64, f64) {
    let d = left_vol - right_vol;
    (d / etiv, d.abs() / etiv)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VolumeRow {
    pub subject_id: String,
    pub left: f64,
    pub right: f64,
    pub covariates: CovariateRow,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub n: usize,
    pub mean: f64,
    pub sd: f64,
}

impl GroupSummary {
    fn of(x: &[f64]) -> Self {
        GroupSummary {
            n: x.len(),
            mean: if x.is_empty() { f64::NAN } else { mean(x) },
            sd: sd(x),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AsymmetryMeasureTests {
    pub healthy: GroupSummary,
    pub disease: GroupSummary,
    /// U counts healthy observations exceeding disease observations.
    pub mann_whitney: Option<GroupTestResult>,
    pub shapiro_healthy: Option<GroupTestResult>,
    pub shapiro_disease: Option<GroupTestResult>,
    /// Diagnosis coefficient and p-value of the covariate-adjusted model.
    pub linear_model_beta: Option<f64>,
    pub linear_model_p: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub skipped: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VolumeAnalysis {
    pub directional: AsymmetryMeasureTests,
    pub undirectional: AsymmetryMeasureTests,
}

fn measure_tests(values: &[f64], rows: &[VolumeRow], design: Option<&OlsDesign>) -> StatsResult<AsymmetryMeasureTests> {
    let mut healthy = Vec::new();
    let mut disease = Vec::new();
    for (v, r) in values.iter().zip(rows) {
        if r.covariates.diagnosis == 1 {
            disease.push(*v);
        } else {
            healthy.push(*v);
        }
    }
    let mut skipped = Vec::new();
    let mann_whitney = if healthy.is_empty() || disease.is_empty() {
        skipped.push("mann-whitney: one diagnosis group is empty".to_string());
        None
    } else {
        Some(mann_whitney_u(&healthy, &disease)?)
    };
    let mut shapiro = |x: &[f64], group: &str| match shapiro_wilk(x) {
        Ok(r) => Some(r),
        Err(e) => {
            skipped.push(format!("shapiro-wilk ({group}): {e}"));
            None
        }
    };
    let shapiro_healthy = shapiro(&healthy, "healthy");
    let shapiro_disease = shapiro(&disease, "disease");
    let (linear_model_beta, linear_model_p) = match design {
        Some(d) => {
            let fit = d.fit(values)?;
            (Some(fit.coefficients[4]), Some(fit.p_values[4]))
        }
        None => (None, None),
    };
    Ok(AsymmetryMeasureTests {
        healthy: GroupSummary::of(&healthy),
        disease: GroupSummary::of(&disease),
        mann_whitney,
        shapiro_healthy,
        shapiro_disease,
        linear_model_beta,
        linear_model_p,
        skipped,
    })
}

/// Group tests on normalized directional and undirectional volume asymmetry.
pub fn volume_analysis(rows: &[VolumeRow], with_handedness: bool) -> StatsResult<VolumeAnalysis> {
    if rows.is_empty() {
        return Err(StatsError::TooFewObservations { needed: 0, got: 0 });
    }
    let covars: Vec<CovariateRow> = rows.iter().map(|r| r.covariates).collect();
    for r in rows {
        if !(r.left > 0.0 && r.right > 0.0) {
            return Err(StatsError::InvalidInput(format!("subject {} has a non-positive volume", r.subject_id)));
        }
    }
    let (x, names, _) = covariate_design(&covars, with_handedness)?;
    let refs: Vec<&str> = names.iter().map(|s| s.as_str()).collect();
    let (design, lm_skip) = match OlsDesign::new(&x, &refs) {
        Ok(d) => (Some(d), None),
        Err(e) => (None, Some(format!("linear model: {e}"))),
    };
    let (dir, undir): (Vec<f64>, Vec<f64>) = rows
        .iter()
        .map(|r| volumetric_asymmetry(r.left, r.right, r.covariates.etiv))
        .unzip();
    let mut directional = measure_tests(&dir, rows, design.as_ref())?;
    let mut undirectional = measure_tests(&undir, rows, design.as_ref())?;
    if let Some(s) = lm_skip {
        directional.skipped.push(s.clone());
        undirectional.skipped.push(s);
    }
    Ok(VolumeAnalysis {
        directional,
        undirectional,
    })
}
