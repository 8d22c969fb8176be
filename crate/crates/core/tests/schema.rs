use gcgm_core::dataset::{parse_schema, Dataset, VarType};
use gcgm_core::latent::initialize_latent;
use nalgebra::DMatrix;

const ADNI_SHAPED_SCHEMA: &str = r#"[
  {"name": "V Hippocampus", "abbrev": "V Hipp", "type": "continuous"},
  {"name": "V Caudate", "abbrev": "V Caud", "type": "continuous"},
  {"name": "V Putamen", "abbrev": "V Put", "type": "continuous"},
  {"name": "V Thalamus", "abbrev": "V Thal", "type": "continuous"},
  {"name": "V Posterior Cingulate Cortex", "abbrev": "V PCC", "type": "continuous"},
  {"name": "V Precuneus", "abbrev": "V Prec", "type": "continuous"},
  {"name": "G Hippocampus", "abbrev": "G Hipp", "type": "continuous"},
  {"name": "G Caudate", "abbrev": "G Caud", "type": "continuous"},
  {"name": "G Putamen", "abbrev": "G Put", "type": "continuous"},
  {"name": "G Thalamus", "abbrev": "G Thal", "type": "continuous"},
  {"name": "G Posterior Cingulate Cortex", "abbrev": "G PCC", "type": "continuous"},
  {"name": "G Precuneus", "abbrev": "G Prec", "type": "continuous"},
  {"name": "Age", "abbrev": "Age", "type": "discrete", "treat_as": "continuous"},
  {"name": "Education", "abbrev": "Educ", "type": "discrete"},
  {"name": "Sex", "abbrev": "Sex", "type": "binary"},
  {"name": "Memory", "abbrev": "ADNI-MEM", "type": "continuous"},
  {"name": "Executive function", "abbrev": "ADNI-EF", "type": "continuous"},
  {"name": "Number of APOE4 allels", "abbrev": "APOE4", "type": "binary"},
  {"name": "Amyloid score", "abbrev": "Amy-stage", "type": "ordinal"}
]"#;

#[test]
fn nineteen_variable_schema_has_expected_latent_columns() {
    let schema = parse_schema(ADNI_SHAPED_SCHEMA).unwrap();
    assert_eq!(schema[12].modeled_type(), VarType::Continuous);
    assert_eq!(schema[13].modeled_type(), VarType::DiscreteOrdinal);
    let n = 40;
    let values = DMatrix::from_fn(n, 19, |r, c| match c {
        12 => 60.0 + (r % 25) as f64,
        13 => 12.0 + (r % 8) as f64,
        14 | 17 => (r % 2) as f64,
        18 => (r % 5) as f64,
        _ => ((r * 31 + c * 7) % 97) as f64 + 0.5 * c as f64,
    });
    let ds = Dataset::from_matrix(schema, values).unwrap();
    assert_eq!(ds.candidate_edges(), 171);
    let latent = initialize_latent(&ds).unwrap();
    let names: Vec<&str> = ds
        .schema
        .iter()
        .zip(&latent.is_latent_column)
        .filter(|(_, &l)| l)
        .map(|(s, _)| s.abbreviation.as_str())
        .collect();
    assert_eq!(names, ["Educ", "Sex", "APOE4", "Amy-stage"]);
    assert!(latent.is_rank_consistent());
}
