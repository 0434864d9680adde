//! CSV label and score files: UTF-8, comma separated, with header rows
//! `video_id,label` and `video_id,score`.

use std::collections::HashSet;
use std::path::Path;

use super::atomic_write;
use crate::error::{Error, Result};

/// Binary relevance labels for one event.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct LabelFile {
    pub entries: Vec<(String, bool)>,
}

/// Prediction scores for one event.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ScoreFile {
    pub entries: Vec<(String, f32)>,
}

impl LabelFile {
    pub fn new(entries: Vec<(String, bool)>) -> Result<Self> {
        check_unique(entries.iter().map(|(id, _)| id.as_str()))?;
        Ok(LabelFile { entries })
    }

    pub fn n_positive(&self) -> usize {
        self.entries.iter().filter(|(_, l)| *l).count()
    }
}

impl ScoreFile {
    pub fn new(entries: Vec<(String, f32)>) -> Result<Self> {
        check_unique(entries.iter().map(|(id, _)| id.as_str()))?;
        if let Some(i) = entries.iter().position(|(_, s)| !s.is_finite()) {
            return Err(Error::NonFinite {
                index: i,
                value: entries[i].1,
            });
        }
        Ok(ScoreFile { entries })
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(id, _)| id.as_str())
    }
}

fn check_unique<'a>(ids: impl Iterator<Item = &'a str>) -> Result<()> {
    let mut seen = HashSet::new();
    for id in ids {
        if !seen.insert(id) {
            return Err(Error::Format(format!("duplicate video_id {id:?}")));
        }
    }
    Ok(())
}

fn read_table(path: &Path, second: &str) -> Result<Vec<(String, String)>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    let headers = rdr
        .headers()
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    if headers.len() != 2 || &headers[0] != "video_id" || &headers[1] != second {
        return Err(Error::Format(format!(
            "{}: header must be \"video_id,{second}\"",
            path.display()
        )));
    }
    let mut out = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        if rec.len() != 2 {
            return Err(Error::Format(format!("{}: row {} needs 2 fields", path.display(), line + 1)));
        }
        out.push((rec[0].to_string(), rec[1].trim().to_string()));
    }
    Ok(out)
}

pub fn read_labels(path: impl AsRef<Path>) -> Result<LabelFile> {
    let path = path.as_ref();
    let rows = read_table(path, "label")?;
    let entries = rows
        .into_iter()
        .map(|(id, v)| match v.as_str() {
            "0" => Ok((id, false)),
            "1" => Ok((id, true)),
            _ => Err(Error::Format(format!("{}: label {v:?} for {id:?} is not 0/1", path.display()))),
        })
        .collect::<Result<Vec<_>>>()?;
    LabelFile::new(entries)
}

pub fn read_scores(path: impl AsRef<Path>) -> Result<ScoreFile> {
    let path = path.as_ref();
    let rows = read_table(path, "score")?;
    let entries = rows
        .into_iter()
        .map(|(id, v)| {
            v.parse::<f32>()
                .map(|s| (id.clone(), s))
                .map_err(|_| Error::Format(format!("{}: score {v:?} for {id:?} is not a number", path.display())))
        })
        .collect::<Result<Vec<_>>>()?;
    ScoreFile::new(entries)
}

fn write_table<I>(path: &Path, second: &str, mut rows: I) -> Result<()>
where
    I: Iterator<Item = (String, String)>,
{
    let mut buf = Vec::new();
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        w.write_record(["video_id", second])
            .and_then(|_| rows.try_for_each(|(a, b)| w.write_record([a, b])))
            .and_then(|_| w.flush().map_err(csv::Error::from))
            .map_err(|e| Error::Format(e.to_string()))?;
    }
    atomic_write(path, |w| std::io::Write::write_all(w, &buf))
}

pub fn write_labels(path: impl AsRef<Path>, labels: &LabelFile) -> Result<()> {
    write_table(
        path.as_ref(),
        "label",
        labels
            .entries
            .iter()
            .map(|(id, l)| (id.clone(), if *l { "1" } else { "0" }.to_string())),
    )
}

pub fn write_scores(path: impl AsRef<Path>, scores: &ScoreFile) -> Result<()> {
    write_table(
        path.as_ref(),
        "score",
        scores.entries.iter().map(|(id, s)| (id.clone(), s.to_string())),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scores_roundtrip_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.csv");
        let s = ScoreFile::new(vec![("a".into(), 0.1), ("b,c".into(), -3.25e-7), ("d".into(), 1.0 / 3.0)]).unwrap();
        write_scores(&p, &s).unwrap();
        assert_eq!(read_scores(&p).unwrap(), s);
        assert!(std::fs::read_to_string(&p).unwrap().starts_with("video_id,score\n"));
    }

    #[test]
    fn labels_roundtrip_and_validate() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("l.csv");
        let l = LabelFile::new(vec![("v1".into(), true), ("v2".into(), false)]).unwrap();
        write_labels(&p, &l).unwrap();
        assert_eq!(read_labels(&p).unwrap(), l);

        std::fs::write(&p, "video_id,label\nv1,2\n").unwrap();
        assert!(matches!(read_labels(&p), Err(Error::Format(_))));
        std::fs::write(&p, "video_id,label\nv1,1\nv1,0\n").unwrap();
        assert!(matches!(read_labels(&p), Err(Error::Format(_))));
        std::fs::write(&p, "id,label\nv1,1\n").unwrap();
        assert!(matches!(read_labels(&p), Err(Error::Format(_))));
    }

    #[test]
    fn non_finite_scores_rejected() {
        assert!(ScoreFile::new(vec![("a".into(), f32::INFINITY)]).is_err());
    }
}
