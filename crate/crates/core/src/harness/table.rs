use crate::error::{Error, Result};

/// A titled grid of strings with optional footnotes, rendered as CSV,
/// aligned text or markdown.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Table {
    pub title: String,
    pub headers: Vec<String>,
    pub rows: Vec<Vec<String>>,
    pub footer: Vec<String>,
}

impl Table {
    pub fn new(title: &str, headers: &[&str]) -> Self {
        Table { title: title.into(), headers: headers.iter().map(|h| h.to_string()).collect(), rows: Vec::new(), footer: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.headers.len());
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let fail = |e: csv::Error| Error::Config(format!("csv: {e}"));
        w.write_record(&self.headers).map_err(fail)?;
        for r in &self.rows {
            w.write_record(r).map_err(fail)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Config(format!("csv: {e}")))?;
        Ok(String::from_utf8(bytes).expect("utf-8 input"))
    }

    fn widths(&self) -> Vec<usize> {
        let mut w: Vec<usize> = self.headers.iter().map(|h| h.chars().count()).collect();
        for r in &self.rows {
            for (wi, cell) in w.iter_mut().zip(r) {
                *wi = (*wi).max(cell.chars().count());
            }
        }
        w
    }

    /// First column left-aligned, the rest right-aligned.
    pub fn to_text(&self) -> String {
        let w = self.widths();
        let line = |cells: &[String]| -> String {
            let parts: Vec<String> = cells
                .iter()
                .zip(&w)
                .enumerate()
                .map(|(i, (c, &wi))| if i == 0 { format!("{c:<wi$}") } else { format!("{c:>wi$}") })
                .collect();
            parts.join("  ").trim_end().to_string()
        };
        let total = w.iter().sum::<usize>() + 2 * w.len().saturating_sub(1);
        let mut s = format!("{}\n{}\n", self.title, "=".repeat(self.title.chars().count()));
        s.push_str(&line(&self.headers));
        s.push('\n');
        s.push_str(&"-".repeat(total));
        s.push('\n');
        if self.rows.is_empty() {
            s.push_str("(no runs)\n");
        }
        for r in &self.rows {
            s.push_str(&line(r));
            s.push('\n');
        }
        for f in &self.footer {
            s.push_str(&format!("note: {f}\n"));
        }
        s
    }

    pub fn to_markdown(&self) -> String {
        let mut s = format!("## {}\n\n", self.title);
        if self.rows.is_empty() {
            s.push_str("_no runs_\n");
        } else {
            s.push_str(&format!("| {} |\n", self.headers.join(" | ")));
            let seps: Vec<&str> = (0..self.headers.len()).map(|i| if i == 0 { ":---" } else { "---:" }).collect();
            s.push_str(&format!("| {} |\n", seps.join(" | ")));
            for r in &self.rows {
                s.push_str(&format!("| {} |\n", r.join(" | ")));
            }
        }
        if !self.footer.is_empty() {
            s.push('\n');
            for f in &self.footer {
                s.push_str(&format!("- {f}\n"));
            }
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn renders_all_formats() {
        let mut t = Table::new("Demo", &["Name", "Value"]);
        t.push(vec!["a".into(), "1".into()]);
        t.push(vec!["long, name".into(), "22".into()]);
        assert_eq!(t.to_csv().unwrap(), "Name,Value\na,1\n\"long, name\",22\n");
        assert!(t.to_text().contains(&format!("{:<10}  {:>5}\n", "a", "1")));
        assert!(t.to_markdown().contains("| long, name | 22 |"));
    }

    #[test]
    fn empty_table_says_no_runs() {
        let t = Table::new("Empty", &["A"]);
        assert!(t.to_text().contains("(no runs)"));
        assert!(t.to_markdown().contains("_no runs_"));
    }
}
