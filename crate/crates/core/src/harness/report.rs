use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use super::run::{RunReport, PROMPT_DIR};
use super::suite::{load_reports, suite_table, Suite, SuiteIndex, INDEX_FILE};
use super::table::Table;
use crate::datasets::DatasetName;
use crate::error::{Error, Result};

pub const REPORT_MD: &str = "report.md";

fn load_index(root: &Path, suite: Suite) -> Result<SuiteIndex> {
    let path = root.join(suite.key()).join(INDEX_FILE);
    if path.exists() {
        SuiteIndex::load(&path)
    } else {
        Ok(SuiteIndex { suite: suite.key().into(), subset: None, epochs: None, seed: 42, cells: Vec::new() })
    }
}

fn overhead_table(reports: &BTreeMap<String, (String, RunReport)>) -> Table {
    let mut t = Table::new(
        "Parameter overhead",
        &["Model", "Dataset", "Variant", "Baseline Params", "MS-VP Params", "Added", "Overhead (%)"],
    );
    for (_, (variant, r)) in reports.iter().filter(|(_, (v, _))| v != "baseline") {
        let s = &r.summary;
        let ds: DatasetName = s.dataset.parse().expect("valid dataset key");
        let fam: crate::backbones::Family = s.backbone.parse().expect("valid backbone key");
        t.push(vec![
            fam.display_name().into(),
            ds.display_name().into(),
            variant.clone(),
            s.params_base.to_string(),
            s.params_total.to_string(),
            s.params_msvp.to_string(),
            format!("{:.6}", s.delta_pct),
        ]);
    }
    t
}

/// Consolidated markdown report and one CSV per table, built only from
/// the suite indices and per-run reports under `root`. Output is
/// byte-identical for identical inputs.
pub fn emit_report(root: &Path) -> Result<(String, Vec<PathBuf>)> {
    let mut md = String::from("# MS-VP results\n\n");
    let mut tables = Vec::new();
    let mut all: BTreeMap<String, (String, RunReport)> = BTreeMap::new();
    let mut runs = 0;
    for suite in Suite::ALL {
        let index = load_index(root, suite)?;
        runs += index.cells.len();
        for (id, r) in load_reports(&index, root) {
            let variant = index.cells.iter().find(|e| e.id == id).map(|e| e.variant.clone()).unwrap_or_default();
            all.insert(id, (variant, r));
        }
        tables.push((suite.key().to_string(), suite_table(suite, &index, root)?));
    }
    tables.push(("overhead".into(), overhead_table(&all)));
    if runs == 0 {
        md.push_str("No runs found: no suite index under this directory.\n\n");
    }
    std::fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    let mut files = Vec::new();
    for (key, t) in &tables {
        md.push_str(&t.to_markdown());
        md.push('\n');
        let p = root.join(format!("report_{key}.csv"));
        std::fs::write(&p, t.to_csv()?).map_err(|e| Error::io(&p, e))?;
        files.push(p);
    }
    md.push_str("## Prompt visualizations\n\n");
    let mut links = Vec::new();
    for (id, (variant, _)) in &all {
        if variant == "baseline" {
            continue;
        }
        let dir = root.join(super::suite::RUNS_DIR).join(id).join(PROMPT_DIR);
        let Ok(rd) = std::fs::read_dir(&dir) else { continue };
        let mut pgms: Vec<String> = rd
            .filter_map(|e| e.ok())
            .map(|e| e.file_name().to_string_lossy().into_owned())
            .filter(|n| n.ends_with(".pgm"))
            .collect();
        pgms.sort();
        for n in pgms {
            links.push(format!("- [{id}/{n}]({}/{id}/{PROMPT_DIR}/{n})", super::suite::RUNS_DIR));
        }
    }
    if links.is_empty() {
        md.push_str("_no runs_\n");
    } else {
        md.push_str(&links.join("\n"));
        md.push('\n');
    }
    let p = root.join(REPORT_MD);
    std::fs::write(&p, &md).map_err(|e| Error::io(&p, e))?;
    files.push(p);
    Ok((md, files))
}
