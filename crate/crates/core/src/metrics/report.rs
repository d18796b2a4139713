use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{
    coverage, diversity, mean_length, perplexity, srl_overlap, GenerationRecord, LanguageScorer, MetricsError, TfidfTable, OVERLAP_ROLES,
};
use crate::corpus::{Lexicon, Sentence};
use crate::srl::{RoleLabel, RoleParser};

/// All metrics for the records sharing one model tag.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct MetricReport {
    pub model_tag: String,
    pub records: usize,
    pub perplexity: Option<f64>,
    pub coverage_all: f64,
    pub coverage_any: f64,
    pub mean_length: f64,
    pub diversity: f64,
    /// Percentage per requested role; roles never requested are absent.
    pub srl_overlap: BTreeMap<RoleLabel, f64>,
}

/// One report per model tag, in order of first appearance.
pub fn report(
    records: &[GenerationRecord],
    scorer: Option<&dyn LanguageScorer>,
    table: &TfidfTable,
    parser: &dyn RoleParser,
    lexicon: &Lexicon,
) -> Result<Vec<MetricReport>, MetricsError> {
    if records.is_empty() {
        return Err(MetricsError::EmptyBatch);
    }
    let mut tags: Vec<&str> = Vec::new();
    for r in records {
        if !tags.contains(&r.model_tag.as_str()) {
            tags.push(&r.model_tag);
        }
    }
    tags.into_iter()
        .map(|tag| {
            let group: Vec<GenerationRecord> = records.iter().filter(|r| r.model_tag == tag).cloned().collect();
            let outputs: Vec<Sentence> = group.iter().map(|r| r.output.clone()).collect();
            let cov = coverage(&group)?;
            let perplexity = match scorer {
                Some(s) => match perplexity(&outputs, s) {
                    Ok(p) => Some(p),
                    Err(MetricsError::EmptyBatch) => None,
                    Err(e) => return Err(e),
                },
                None => None,
            };
            Ok(MetricReport {
                model_tag: tag.to_string(),
                records: group.len(),
                perplexity,
                coverage_all: cov.all,
                coverage_any: cov.any,
                mean_length: mean_length(&outputs)?,
                diversity: diversity(&outputs, table, lexicon)?,
                srl_overlap: srl_overlap(&group, parser).into_iter().map(|(k, v)| (k, v.percent())).collect(),
            })
        })
        .collect()
}

/// Fixed-width table, one row per report.
pub fn render_table(reports: &[MetricReport]) -> String {
    let mut header =
        vec!["Model".to_string(), "N".into(), "PPL".into(), "Cov(All)".into(), "Cov(Any)".into(), "Len".into(), "TF-IDF".into()];
    header.extend(OVERLAP_ROLES.iter().map(|r| r.to_string()));
    let rows: Vec<Vec<String>> = reports
        .iter()
        .map(|r| {
            let mut row = vec![
                r.model_tag.clone(),
                r.records.to_string(),
                r.perplexity.map_or("-".into(), |p| format!("{p:.2}")),
                format!("{:.1}", r.coverage_all),
                format!("{:.1}", r.coverage_any),
                format!("{:.2}", r.mean_length),
                format!("{:.4}", r.diversity),
            ];
            row.extend(OVERLAP_ROLES.iter().map(|role| r.srl_overlap.get(role).map_or("-".into(), |v| format!("{v:.1}"))));
            row
        })
        .collect();
    let widths: Vec<usize> =
        (0..header.len()).map(|c| rows.iter().map(|r| r[c].len()).chain([header[c].len()]).max().unwrap_or(0)).collect();
    let mut out = String::new();
    for row in std::iter::once(&header).chain(&rows) {
        let cells: Vec<String> = row
            .iter()
            .enumerate()
            .map(|(c, cell)| if c == 0 { format!("{cell:<w$}", w = widths[c]) } else { format!("{cell:>w$}", w = widths[c]) })
            .collect();
        writeln!(out, "{}", cells.join("  ").trim_end()).expect("write to string");
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::controls::parse_control_string;
    use crate::metrics::UniformScorer;
    use crate::srl::TemplateParser;

    #[test]
    fn groups_by_tag_and_renders() {
        let lex = Lexicon::bundled();
        let rec = |input: &str, out: &str, tag: &str| GenerationRecord {
            input: parse_control_string(input).unwrap(),
            output: Sentence::parse(out, lex),
            model_tag: tag.into(),
        };
        let records = vec![
            rec("cat|ARG1 chase|V dog|ARG0", "the dog chased the cat.", "roles"),
            rec("cat chase dog", "the cat chased the dog.", "base"),
            rec("bird|ARG0 sing|V", "a bird sang.", "roles"),
        ];
        let table = TfidfTable::from_idf([], 10);
        let reports = report(&records, Some(&UniformScorer { vocab_size: 10 }), &table, &TemplateParser, lex).unwrap();
        assert_eq!(reports.iter().map(|r| r.model_tag.as_str()).collect::<Vec<_>>(), ["roles", "base"]);
        assert_eq!(reports[0].records, 2);
        assert_eq!(reports[0].srl_overlap[&RoleLabel::Arg0], 100.0);
        assert!(reports[1].srl_overlap.is_empty());
        assert!((reports[0].perplexity.unwrap() - 10.0).abs() < 1e-9);
        let text = render_table(&reports);
        assert_eq!(text.lines().count(), 3);
        assert!(text.lines().next().unwrap().starts_with("Model"));
        let json = serde_json::to_string(&reports[0]).unwrap();
        assert!(json.contains(r#""srlOverlap":{"V":100.0,"ARG0":100.0,"ARG1":100.0}"#), "{json}");
    }
}
