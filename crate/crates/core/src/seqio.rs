//! Sequence datasets: FASTA and label-table parsing, deduplication and summary statistics.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;

use crate::error::{Error, Result};

/// The 20 standard amino acids in alphabetical order of their one-letter codes.
pub const AMINO_ACIDS: [u8; 20] = *b"ACDEFGHIKLMNPQRSTVWY";

/// Activity labels in canonical column order.
pub const ACTIVITY_LABELS: [&str; 11] = [
    "Gram-positive",
    "Gram-negative",
    "Mammalian Cell",
    "Virus",
    "Fungus",
    "Insect",
    "Cancer",
    "Parasite",
    "Mollicute",
    "Nematode",
    "Protista",
];

/// Alphabetical rank of an amino-acid code, or `None` for anything outside the alphabet.
#[inline]
pub fn residue_rank(symbol: u8) -> Option<usize> {
    AMINO_ACIDS.binary_search(&symbol).ok()
}

/// Rejects empty strings and symbols outside the 20-letter alphabet. Expects uppercase input.
pub fn validate_residues(id: &str, residues: &str) -> Result<()> {
    if residues.is_empty() {
        return Err(Error::EmptySequence(id.to_string()));
    }
    match residues.chars().find(|c| !c.is_ascii() || residue_rank(*c as u8).is_none()) {
        Some(symbol) => Err(Error::IllegalResidue {
            id: id.to_string(),
            symbol,
            line: None,
        }),
        None => Ok(()),
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabeledSequence {
    pub id: String,
    pub residues: String,
    pub amp_label: Option<bool>,
    pub activity_labels: Option<Vec<bool>>,
}

impl LabeledSequence {
    pub fn new(id: impl Into<String>, residues: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            residues: residues.into(),
            amp_label: None,
            activity_labels: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Dataset {
    pub records: Vec<LabeledSequence>,
    pub label_names: Vec<String>,
    pub provenance: String,
}

impl Dataset {
    pub fn new(records: Vec<LabeledSequence>) -> Self {
        Self {
            records,
            label_names: ACTIVITY_LABELS.iter().map(|s| s.to_string()).collect(),
            provenance: String::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn ids(&self) -> Vec<&str> {
        self.records.iter().map(|r| r.id.as_str()).collect()
    }

    /// Keeps the records at `idx`, in that order.
    pub fn subset(&self, idx: &[usize]) -> Self {
        Self {
            records: idx.iter().map(|&i| self.records[i].clone()).collect(),
            label_names: self.label_names.clone(),
            provenance: self.provenance.clone(),
        }
    }

    /// Records carrying an activity vector (the positive set).
    pub fn positives(&self) -> Self {
        Self {
            records: self
                .records
                .iter()
                .filter(|r| r.activity_labels.is_some())
                .cloned()
                .collect(),
            label_names: self.label_names.clone(),
            provenance: self.provenance.clone(),
        }
    }

    /// Builds the two-level dataset: every FASTA record, marked AMP exactly when the label
    /// table lists it. Label-table ids absent from the FASTA are an error.
    pub fn from_parts(
        sequences: Vec<(String, String)>,
        labels: &HashMap<String, Vec<bool>>,
        label_names: &[String],
    ) -> Result<Self> {
        let known: HashSet<&str> = sequences.iter().map(|(id, _)| id.as_str()).collect();
        let mut orphans: Vec<String> = labels
            .keys()
            .filter(|id| !known.contains(id.as_str()))
            .cloned()
            .collect();
        if !orphans.is_empty() {
            orphans.sort();
            return Err(Error::Inconsistent(format!(
                "label table ids not present in FASTA: {}",
                orphans.join(", ")
            )));
        }
        let mut seen = HashSet::new();
        let mut records = Vec::with_capacity(sequences.len());
        for (id, residues) in sequences {
            if !seen.insert(id.clone()) {
                return Err(Error::DuplicateId(id));
            }
            let activity = labels.get(&id).cloned();
            records.push(LabeledSequence {
                amp_label: Some(activity.is_some()),
                activity_labels: activity,
                id,
                residues,
            });
        }
        Ok(Self {
            records,
            label_names: label_names.to_vec(),
            provenance: String::new(),
        })
    }
}

/// Parses FASTA text. The record id is the first whitespace-delimited token of the header.
pub fn parse_fasta(text: &str) -> Result<Vec<(String, String)>> {
    let mut out: Vec<(String, String)> = Vec::new();
    let mut header_line = 0;
    for (lineno, raw) in text.lines().enumerate() {
        let lineno = lineno + 1;
        let line = raw.trim_end_matches('\r').trim();
        if let Some(header) = line.strip_prefix('>') {
            if let Some((id, seq)) = out.last() {
                if seq.is_empty() {
                    return Err(Error::Parse {
                        line: header_line,
                        msg: format!("empty record '{id}'"),
                    });
                }
            }
            let id = header.split_whitespace().next().unwrap_or("");
            if id.is_empty() {
                return Err(Error::Parse {
                    line: lineno,
                    msg: "header without id".into(),
                });
            }
            out.push((id.to_string(), String::new()));
            header_line = lineno;
        } else if !line.is_empty() {
            let Some((id, seq)) = out.last_mut() else {
                return Err(Error::Parse {
                    line: lineno,
                    msg: "sequence line before any header".into(),
                });
            };
            for c in line.chars() {
                let up = c.to_ascii_uppercase();
                if !up.is_ascii() || residue_rank(up as u8).is_none() {
                    return Err(Error::IllegalResidue {
                        id: id.clone(),
                        symbol: c,
                        line: Some(lineno),
                    });
                }
                seq.push(up);
            }
        }
    }
    if let Some((id, seq)) = out.last() {
        if seq.is_empty() {
            return Err(Error::Parse {
                line: header_line,
                msg: format!("empty record '{id}'"),
            });
        }
    }
    Ok(out)
}

/// Writes records as FASTA, wrapping residues at `width` columns (0 = no wrapping).
pub fn write_fasta<'a, I>(records: I, width: usize) -> String
where
    I: IntoIterator<Item = (&'a str, &'a str)>,
{
    let mut out = String::new();
    for (id, residues) in records {
        out.push('>');
        out.push_str(id);
        out.push('\n');
        if width == 0 {
            out.push_str(residues);
            out.push('\n');
        } else {
            for chunk in residues.as_bytes().chunks(width) {
                out.push_str(std::str::from_utf8(chunk).expect("ascii residues"));
                out.push('\n');
            }
        }
    }
    out
}

/// Parses a tab-separated activity table. The header is `id` followed by exactly the
/// names in `label_names`, in order; each row is an id and one 0/1 cell per label.
pub fn parse_labels(text: &str, label_names: &[String]) -> Result<HashMap<String, Vec<bool>>> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim_end_matches('\r')))
        .filter(|(_, l)| !l.trim().is_empty());
    let (hline, header) = lines.next().ok_or(Error::Parse {
        line: 1,
        msg: "missing header row".into(),
    })?;
    let cols: Vec<&str> = header.split('\t').map(str::trim).collect();
    if cols.len() != label_names.len() + 1 {
        return Err(Error::Parse {
            line: hline,
            msg: format!(
                "wrong column count in header: expected {}, got {}",
                label_names.len() + 1,
                cols.len()
            ),
        });
    }
    for (got, want) in cols[1..].iter().zip(label_names) {
        if got != want {
            return Err(Error::Parse {
                line: hline,
                msg: format!("unknown column '{got}' (expected '{want}')"),
            });
        }
    }
    let mut out = HashMap::new();
    for (lineno, line) in lines {
        let cells: Vec<&str> = line.split('\t').map(str::trim).collect();
        if cells.len() != label_names.len() + 1 {
            return Err(Error::Parse {
                line: lineno,
                msg: format!(
                    "wrong column count: expected {}, got {}",
                    label_names.len() + 1,
                    cells.len()
                ),
            });
        }
        let bits = cells[1..]
            .iter()
            .map(|c| match *c {
                "0" => Ok(false),
                "1" => Ok(true),
                other => Err(Error::Parse {
                    line: lineno,
                    msg: format!("cell '{other}' is not 0 or 1"),
                }),
            })
            .collect::<Result<Vec<_>>>()?;
        let id = cells[0].to_string();
        if out.insert(id.clone(), bits).is_some() {
            return Err(Error::DuplicateId(id));
        }
    }
    Ok(out)
}

/// Label table of every record carrying an activity vector, in the `parse_labels` layout.
pub fn labels_to_tsv(dataset: &Dataset) -> String {
    let mut out = String::from("id");
    for name in &dataset.label_names {
        out.push('\t');
        out.push_str(name);
    }
    out.push('\n');
    for rec in &dataset.records {
        if let Some(bits) = &rec.activity_labels {
            out.push_str(&rec.id);
            for &b in bits {
                out.push_str(if b { "\t1" } else { "\t0" });
            }
            out.push('\n');
        }
    }
    out
}

/// Collapses records with identical residue strings. Activity vectors of merged records are
/// OR-ed; the first id is kept. Returns the deduplicated dataset and the number removed.
pub fn deduplicate(dataset: &Dataset) -> Result<(Dataset, usize)> {
    let mut index: HashMap<&str, usize> = HashMap::new();
    let mut records: Vec<LabeledSequence> = Vec::new();
    for rec in &dataset.records {
        match index.get(rec.residues.as_str()) {
            None => {
                index.insert(&rec.residues, records.len());
                records.push(rec.clone());
            }
            Some(&k) => {
                let kept = &mut records[k];
                match (kept.amp_label, rec.amp_label) {
                    (Some(a), Some(b)) if a != b => {
                        return Err(Error::ConflictingAmpLabel(kept.id.clone(), rec.id.clone()))
                    }
                    (None, b) => kept.amp_label = b,
                    _ => {}
                }
                kept.activity_labels = match (kept.activity_labels.take(), &rec.activity_labels) {
                    (Some(a), Some(b)) => Some(a.iter().zip(b).map(|(x, y)| *x || *y).collect()),
                    (a, b) => a.or_else(|| b.clone()),
                };
            }
        }
    }
    let removed = dataset.records.len() - records.len();
    Ok((
        Dataset {
            records,
            label_names: dataset.label_names.clone(),
            provenance: dataset.provenance.clone(),
        },
        removed,
    ))
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetStats {
    pub label_names: Vec<String>,
    /// Positive count per activity label.
    pub positives: Vec<usize>,
    /// `cardinality[c]` = number of labeled records carrying exactly `c` labels.
    pub cardinality: Vec<usize>,
    pub n_records: usize,
    pub n_amp: usize,
    pub n_labeled: usize,
}

pub fn dataset_stats(dataset: &Dataset) -> DatasetStats {
    let l = dataset.label_names.len();
    let mut positives = vec![0; l];
    let mut cardinality = vec![0; l + 1];
    let mut n_labeled = 0;
    for rec in &dataset.records {
        if let Some(bits) = &rec.activity_labels {
            n_labeled += 1;
            let mut c = 0;
            for (j, &b) in bits.iter().enumerate().take(l) {
                if b {
                    positives[j] += 1;
                    c += 1;
                }
            }
            cardinality[c] += 1;
        }
    }
    DatasetStats {
        label_names: dataset.label_names.clone(),
        positives,
        cardinality,
        n_records: dataset.records.len(),
        n_amp: dataset.records.iter().filter(|r| r.amp_label == Some(true)).count(),
        n_labeled,
    }
}

impl DatasetStats {
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("section\tkey\tcount\n");
        let _ = writeln!(out, "summary\trecords\t{}", self.n_records);
        let _ = writeln!(out, "summary\tamp\t{}", self.n_amp);
        let _ = writeln!(out, "summary\tlabeled\t{}", self.n_labeled);
        for (name, n) in self.label_names.iter().zip(&self.positives) {
            let _ = writeln!(out, "label\t{name}\t{n}");
        }
        for (c, n) in self.cardinality.iter().enumerate() {
            let _ = writeln!(out, "cardinality\t{c}\t{n}");
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names() -> Vec<String> {
        ACTIVITY_LABELS.iter().map(|s| s.to_string()).collect()
    }

    fn header() -> String {
        format!("id\t{}\n", ACTIVITY_LABELS.join("\t"))
    }

    fn labeled(id: &str, res: &str, amp: Option<bool>, on: &[usize]) -> LabeledSequence {
        let mut bits = vec![false; 11];
        for &j in on {
            bits[j] = true;
        }
        LabeledSequence {
            id: id.into(),
            residues: res.into(),
            amp_label: amp,
            activity_labels: Some(bits),
        }
    }

    #[test]
    fn fasta_joins_wrapped_lines() {
        let recs = parse_fasta(">p1\nMK\nLV\n").unwrap();
        assert_eq!(recs, vec![("p1".to_string(), "MKLV".to_string())]);
    }

    #[test]
    fn fasta_keeps_order_and_uppercases() {
        let recs = parse_fasta(">a desc\nacde\n>b\nWYY\n").unwrap();
        assert_eq!(recs[0], ("a".into(), "ACDE".into()));
        assert_eq!(recs[1], ("b".into(), "WYY".into()));
    }

    #[test]
    fn fasta_errors() {
        assert!(matches!(parse_fasta(">x\n\n"), Err(Error::Parse { line: 1, .. })));
        assert!(matches!(parse_fasta(">x\n>y\nAC\n"), Err(Error::Parse { .. })));
        assert!(matches!(parse_fasta("AC\n>x\nAC\n"), Err(Error::Parse { line: 1, .. })));
        match parse_fasta(">x\nAC\nAXC\n") {
            Err(Error::IllegalResidue { symbol: 'X', line: Some(3), .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn labels_table() {
        let text = format!("{}p1\t1\t1\t0\t0\t0\t0\t0\t0\t0\t0\t0\n", header());
        let m = parse_labels(&text, &names()).unwrap();
        let bits = &m["p1"];
        assert!(bits[0] && bits[1]);
        assert_eq!(bits.iter().filter(|b| **b).count(), 2);
    }

    #[test]
    fn labels_table_errors() {
        let short = format!("{}p1\t1\t1\t0\t0\t0\t0\t0\t0\t0\t0\n", header());
        assert!(matches!(parse_labels(&short, &names()), Err(Error::Parse { line: 2, .. })));
        let row = "p1\t1\t0\t0\t0\t0\t0\t0\t0\t0\t0\t0\n";
        let dup = format!("{}{row}{row}", header());
        assert!(matches!(parse_labels(&dup, &names()), Err(Error::DuplicateId(id)) if id == "p1"));
        let bad = format!("{}p1\t2\t0\t0\t0\t0\t0\t0\t0\t0\t0\t0\n", header());
        assert!(parse_labels(&bad, &names()).is_err());
        let wrong_header = header().replace("Fungus", "Yeast");
        assert!(parse_labels(&wrong_header, &names()).is_err());
    }

    #[test]
    fn dedup_or_merges_labels() {
        let ds = Dataset::new(vec![
            labeled("a", "ACD", Some(true), &[0]),
            labeled("b", "ACD", Some(true), &[3]),
        ]);
        let (out, removed) = deduplicate(&ds).unwrap();
        assert_eq!(removed, 1);
        assert_eq!(out.records.len(), 1);
        let bits = out.records[0].activity_labels.as_ref().unwrap();
        assert!(bits[0] && bits[3]);
        assert_eq!(out.records[0].id, "a");
    }

    #[test]
    fn dedup_identity_and_conflict() {
        let ds = Dataset::new(vec![
            labeled("a", "ACD", Some(true), &[0]),
            labeled("b", "ACE", Some(true), &[3]),
        ]);
        let (out, removed) = deduplicate(&ds).unwrap();
        assert_eq!((out, removed), (ds, 0));

        let conflict = Dataset::new(vec![
            LabeledSequence { amp_label: Some(true), ..LabeledSequence::new("a", "KK") },
            LabeledSequence { amp_label: Some(false), ..LabeledSequence::new("b", "KK") },
        ]);
        match deduplicate(&conflict) {
            Err(Error::ConflictingAmpLabel(x, y)) => assert_eq!((x.as_str(), y.as_str()), ("a", "b")),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn stats_counts() {
        let ds = Dataset::new(vec![
            labeled("a", "ACD", Some(true), &[0, 1]),
            labeled("b", "ACE", Some(true), &[0]),
            LabeledSequence::new("c", "KK"),
        ]);
        let s = dataset_stats(&ds);
        assert_eq!(s.positives[0], 2);
        assert_eq!(s.positives[1], 1);
        assert_eq!(s.cardinality[1], 1);
        assert_eq!(s.cardinality[2], 1);
        assert_eq!(s.cardinality.iter().sum::<usize>(), s.n_labeled);

        let empty = dataset_stats(&Dataset::new(vec![]));
        assert!(empty.positives.iter().all(|&c| c == 0));
        assert!(empty.cardinality.iter().all(|&c| c == 0));
    }

    #[test]
    fn from_parts_marks_amps() {
        let seqs = vec![("a".to_string(), "ACD".to_string()), ("b".to_string(), "KK".to_string())];
        let mut labels = HashMap::new();
        labels.insert("a".to_string(), vec![true; 11]);
        let ds = Dataset::from_parts(seqs.clone(), &labels, &names()).unwrap();
        assert_eq!(ds.records[0].amp_label, Some(true));
        assert_eq!(ds.records[1].amp_label, Some(false));
        assert!(ds.records[1].activity_labels.is_none());
        labels.insert("zzz".to_string(), vec![true; 11]);
        assert!(Dataset::from_parts(seqs, &labels, &names()).is_err());
    }

    #[test]
    fn label_table_round_trip() {
        let mut labels = HashMap::new();
        let mut bits = vec![false; 11];
        bits[3] = true;
        labels.insert("b".to_string(), bits);
        let d = Dataset::from_parts(vec![("a".into(), "KK".into()), ("b".into(), "LL".into())], &labels, &names()).unwrap();
        let text = labels_to_tsv(&d);
        assert_eq!(parse_labels(&text, &names()).unwrap(), labels);
        assert_eq!(text.lines().count(), 2);
    }
}
