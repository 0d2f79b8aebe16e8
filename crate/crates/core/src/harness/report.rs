use std::collections::HashSet;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub const CSV_COLUMNS: [&str; 7] = ["task", "method", "iters", "mean_reward", "std", "episodes", "seeds"];
pub const DIVERGENCE_COLUMN: &str = "divergence";
pub const NO_ATTACK: &str = "No attack";

#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub task: String,
    pub method: String,
    /// `None` for rows without an iteration count (FGSM, no attack).
    pub iters: Option<usize>,
    pub mean_reward: f64,
    /// Sample standard deviation across seeds.
    pub std: f64,
    pub episodes: usize,
    pub seeds: usize,
    /// Divergence used by an ablation row.
    pub divergence: Option<String>,
    /// Set when the row failed; the reward fields are then NaN.
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ResultTable {
    pub rows: Vec<ResultRow>,
}

fn iters_cell(iters: Option<usize>) -> String {
    iters.map_or_else(|| "-".to_string(), |n| n.to_string())
}

impl ResultTable {
    fn has_divergence(&self) -> bool {
        self.rows.iter().any(|r| r.divergence.is_some())
    }

    /// Every `(task, method, iters, divergence)` key appears once.
    pub fn check_unique(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for r in &self.rows {
            if !seen.insert((&r.task, &r.method, r.iters, &r.divergence)) {
                return Err(Error::Schema(format!(
                    "duplicate row {} / {} / {}",
                    r.task,
                    r.method,
                    iters_cell(r.iters)
                )));
            }
        }
        Ok(())
    }

    pub fn row(&self, task: &str, method: &str, iters: Option<usize>) -> Option<&ResultRow> {
        self.rows
            .iter()
            .find(|r| r.task == task && r.method == method && r.iters == iters)
    }

    /// CSV with the fixed column set, plus `divergence` for ablation tables.
    /// Floats use the shortest representation that parses back exactly.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let with_div = self.has_divergence();
        let mut header: Vec<&str> = CSV_COLUMNS.to_vec();
        if with_div {
            header.push(DIVERGENCE_COLUMN);
        }
        w.write_record(&header)?;
        for r in &self.rows {
            let mut rec = vec![
                r.task.clone(),
                r.method.clone(),
                iters_cell(r.iters),
                r.mean_reward.to_string(),
                r.std.to_string(),
                r.episodes.to_string(),
                r.seeds.to_string(),
            ];
            if with_div {
                rec.push(r.divergence.clone().unwrap_or_default());
            }
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        String::from_utf8(buf).map_err(|e| Error::Schema(e.to_string()))
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(input);
        let headers = rd.headers()?.clone();
        let names: Vec<&str> = headers.iter().collect();
        let with_div = match names.len() {
            7 => false,
            8 if names[7] == DIVERGENCE_COLUMN => true,
            _ => return Err(Error::Schema(format!("unexpected CSV header {names:?}"))),
        };
        if names[..7] != CSV_COLUMNS {
            return Err(Error::Schema(format!("unexpected CSV header {names:?}")));
        }
        let field = |name: &str, v: &str| Error::Field {
            field: name.to_string(),
            reason: format!("cannot parse {v:?}"),
        };
        let mut rows = Vec::new();
        for rec in rd.records() {
            let rec = rec?;
            let iters = match &rec[2] {
                "-" => None,
                v => Some(v.parse().map_err(|_| field("iters", v))?),
            };
            rows.push(ResultRow {
                task: rec[0].to_string(),
                method: rec[1].to_string(),
                iters,
                mean_reward: rec[3].parse().map_err(|_| field("mean_reward", &rec[3]))?,
                std: rec[4].parse().map_err(|_| field("std", &rec[4]))?,
                episodes: rec[5].parse().map_err(|_| field("episodes", &rec[5]))?,
                seeds: rec[6].parse().map_err(|_| field("seeds", &rec[6]))?,
                divergence: if with_div && !rec[7].is_empty() {
                    Some(rec[7].to_string())
                } else {
                    None
                },
                error: None,
            });
        }
        Ok(Self { rows })
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }

    pub fn load_csv(path: &Path) -> Result<Self> {
        Self::read_csv(std::fs::File::open(path)?)
    }

    /// Methods as rows, tasks as columns, `mean±std` cells with three
    /// decimals; the iteration column shows `-` where it does not apply.
    pub fn to_markdown(&self) -> String {
        if self.has_divergence() {
            return self.ablation_markdown();
        }
        let tasks = unique(self.rows.iter().map(|r| r.task.clone()));
        let methods = unique(self.rows.iter().map(|r| (r.method.clone(), r.iters)));
        let mut out = String::new();
        out.push_str("| Method | Iters |");
        for t in &tasks {
            out.push_str(&format!(" {t} |"));
        }
        out.push_str("\n|---|---|");
        out.push_str(&"---|".repeat(tasks.len()));
        out.push('\n');
        for (method, iters) in &methods {
            out.push_str(&format!("| {method} | {} |", iters_cell(*iters)));
            for t in &tasks {
                let cell = self
                    .rows
                    .iter()
                    .find(|r| &r.task == t && &r.method == method && r.iters == *iters)
                    .map_or_else(String::new, cell);
                out.push_str(&format!(" {cell} |"));
            }
            out.push('\n');
        }
        out
    }

    /// Divergences as rows, iteration counts as columns, followed by the
    /// divergence ranking at each iteration count (lowest reward first).
    fn ablation_markdown(&self) -> String {
        let divs = unique(self.rows.iter().filter_map(|r| r.divergence.clone()));
        let iters = unique(self.rows.iter().map(|r| r.iters));
        let mut out = String::new();
        let task = self.rows.first().map(|r| r.task.clone()).unwrap_or_default();
        out.push_str(&format!("| Divergence ({task}) |"));
        for n in &iters {
            out.push_str(&format!(" N={} |", iters_cell(*n)));
        }
        out.push_str("\n|---|");
        out.push_str(&"---|".repeat(iters.len()));
        out.push('\n');
        for d in &divs {
            out.push_str(&format!("| {d} |"));
            for n in &iters {
                let c = self
                    .rows
                    .iter()
                    .find(|r| r.divergence.as_ref() == Some(d) && r.iters == *n)
                    .map_or_else(String::new, cell);
                out.push_str(&format!(" {c} |"));
            }
            out.push('\n');
        }
        out.push('\n');
        for (n, ranking) in self.ablation_ranking() {
            let names: Vec<String> = ranking.iter().map(|(d, m)| format!("{d} ({m:.3})")).collect();
            out.push_str(&format!("Ranking at N={}: {}\n", iters_cell(n), names.join(" < ")));
        }
        out
    }

    /// For each iteration count, divergences sorted by ascending mean reward
    /// (strongest attack first). Failed rows are left out.
    pub fn ablation_ranking(&self) -> Vec<(Option<usize>, Vec<(String, f64)>)> {
        let iters = unique(self.rows.iter().map(|r| r.iters));
        iters
            .into_iter()
            .map(|n| {
                let mut v: Vec<(String, f64)> = self
                    .rows
                    .iter()
                    .filter(|r| r.iters == n && !r.mean_reward.is_nan())
                    .filter_map(|r| r.divergence.clone().map(|d| (d, r.mean_reward)))
                    .collect();
                v.sort_by(|a, b| a.1.total_cmp(&b.1));
                (n, v)
            })
            .collect()
    }
}

fn cell(r: &ResultRow) -> String {
    if r.error.is_some() || r.mean_reward.is_nan() {
        "error".to_string()
    } else {
        format!("{:.3}±{:.3}", r.mean_reward, r.std)
    }
}

fn unique<T: PartialEq>(items: impl Iterator<Item = T>) -> Vec<T> {
    let mut out = Vec::new();
    for it in items {
        if !out.contains(&it) {
            out.push(it);
        }
    }
    out
}
