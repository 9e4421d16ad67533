use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Half-open frame interval `[start, end)`.
pub type FrameInterval = (usize, usize);

/// One training/evaluation video with its query and labels.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoSample {
    pub video_id: String,
    /// Patch features, `[n_frames, L_patch, d_v]`.
    pub frames: Tensor,
    /// Relation features, `[n_frames, k_sg, d_s]`, zero rows past `relation_counts`.
    pub relations: Tensor,
    /// Valid relation rows per frame.
    pub relation_counts: Vec<usize>,
    /// Query tokens, `[n_q, d_t]`.
    pub query: Tensor,
    pub foreground: Vec<f64>,
    pub saliency: Vec<f64>,
    pub intervals: Vec<FrameInterval>,
    pub question: Option<String>,
    pub answer: Option<String>,
}

impl VideoSample {
    pub fn n_frames(&self) -> usize {
        self.frames.shape()[0]
    }

    pub fn patches(&self) -> usize {
        self.frames.shape()[1]
    }

    pub fn d_v(&self) -> usize {
        self.frames.shape()[2]
    }

    pub fn k_sg(&self) -> usize {
        self.relations.shape()[1]
    }

    pub fn d_s(&self) -> usize {
        self.relations.shape()[2]
    }

    pub fn n_query(&self) -> usize {
        self.query.shape()[0]
    }

    pub fn d_t(&self) -> usize {
        self.query.shape()[1]
    }

    /// Foreground labels implied by a set of intervals.
    pub fn labels_from_intervals(n_frames: usize, intervals: &[FrameInterval]) -> Vec<f64> {
        let mut f = vec![0.0; n_frames];
        for &(s, e) in intervals {
            for v in &mut f[s.min(n_frames)..e.min(n_frames)] {
                *v = 1.0;
            }
        }
        f
    }

    /// Mean patch feature per frame, `[n_frames, d_v]`.
    pub fn pooled_frames(&self) -> Tensor {
        let (n, l, d) = (self.n_frames(), self.patches(), self.d_v());
        let x = self.frames.data();
        let mut out = vec![0.0; n * d];
        for i in 0..n {
            for j in 0..l {
                let base = (i * l + j) * d;
                for c in 0..d {
                    out[i * d + c] += x[base + c];
                }
            }
        }
        out.iter_mut().for_each(|v| *v /= l as f64);
        Tensor::from_parts(vec![n, d], out)
    }

    /// Mean over the valid relation rows per frame, `[n_frames, d_s]`.
    /// Frames without valid rows pool to zero.
    pub fn pooled_relations(&self) -> Tensor {
        let (n, k, d) = (self.n_frames(), self.k_sg(), self.d_s());
        let s = self.relations.data();
        let mut out = vec![0.0; n * d];
        for i in 0..n {
            let valid = self.relation_counts[i];
            if valid == 0 {
                continue;
            }
            for j in 0..valid {
                let base = (i * k + j) * d;
                for c in 0..d {
                    out[i * d + c] += s[base + c];
                }
            }
            for c in 0..d {
                out[i * d + c] /= valid as f64;
            }
        }
        Tensor::from_parts(vec![n, d], out)
    }

    pub fn validate(&self) -> Result<()> {
        let id = self.video_id.as_str();
        let fail = |field: &str, reason: String| Err(Error::validation(field, id, reason));
        if self.frames.shape().len() != 3 {
            return fail("X", format!("expected rank 3, got {:?}", self.frames.shape()));
        }
        if self.relations.shape().len() != 3 {
            return fail("S", format!("expected rank 3, got {:?}", self.relations.shape()));
        }
        if self.query.shape().len() != 2 {
            return fail("Q", format!("expected rank 2, got {:?}", self.query.shape()));
        }
        let n = self.n_frames();
        if self.relations.shape()[0] != n {
            return fail("S", format!("{} frames, X has {n}", self.relations.shape()[0]));
        }
        if self.relation_counts.len() != n || self.relation_counts.iter().any(|&c| c > self.k_sg()) {
            return fail("S_valid", format!("needs {n} counts each <= {}", self.k_sg()));
        }
        if self.foreground.len() != n {
            return fail("f", format!("length {} != {n} frames", self.foreground.len()));
        }
        if self.saliency.len() != n {
            return fail("saliency", format!("length {} != {n} frames", self.saliency.len()));
        }
        if let Some(v) = self.saliency.iter().find(|v| !(-1.0..=1.0).contains(*v)) {
            return fail("saliency", format!("value {v} outside [-1, 1]"));
        }
        if let Some(v) = self.foreground.iter().find(|&&v| v != 0.0 && v != 1.0) {
            return fail("f", format!("label {v} is not 0 or 1"));
        }
        for &(s, e) in &self.intervals {
            if s >= e || e > n {
                return fail("intervals", format!("[{s}, {e}) invalid for {n} frames"));
            }
        }
        if Self::labels_from_intervals(n, &self.intervals) != self.foreground {
            return fail("f", "labels disagree with intervals".into());
        }
        Ok(())
    }
}

/// On-disk JSONL record.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct SampleRecord {
    video_id: String,
    frames: usize,
    #[serde(rename = "X")]
    x: Vec<Vec<Vec<f64>>>,
    #[serde(rename = "S")]
    s: Vec<Vec<Vec<f64>>>,
    #[serde(rename = "S_valid", default, skip_serializing_if = "Option::is_none")]
    s_valid: Option<Vec<usize>>,
    #[serde(rename = "Q")]
    q: Vec<Vec<f64>>,
    f: Vec<f64>,
    #[serde(rename = "s")]
    saliency: Vec<f64>,
    intervals: Vec<[usize; 2]>,
    #[serde(default)]
    question: Option<String>,
    #[serde(default)]
    answer: Option<String>,
}

fn nested3(t: &Tensor) -> Vec<Vec<Vec<f64>>> {
    let s = t.shape();
    let (a, b, c) = (s[0], s[1], s[2]);
    (0..a)
        .map(|i| {
            (0..b)
                .map(|j| t.data()[(i * b + j) * c..(i * b + j + 1) * c].to_vec())
                .collect()
        })
        .collect()
}

fn flat3(id: &str, field: &str, v: &[Vec<Vec<f64>>]) -> Result<Tensor> {
    let a = v.len();
    let b = v.first().map_or(0, Vec::len);
    let c = v.first().and_then(|r| r.first()).map_or(0, Vec::len);
    if v.iter().any(|r| r.len() != b || r.iter().any(|x| x.len() != c)) {
        return Err(Error::validation(field, id, "ragged nested array"));
    }
    let data = v.iter().flatten().flatten().copied().collect();
    Tensor::new(vec![a, b, c], data).map_err(|e| Error::validation(field, id, e.to_string()))
}

impl From<&VideoSample> for SampleRecord {
    fn from(s: &VideoSample) -> Self {
        let q = (0..s.n_query()).map(|i| s.query.row_slice(i).to_vec()).collect();
        let all_valid = s.relation_counts.iter().all(|&c| c == s.k_sg());
        SampleRecord {
            video_id: s.video_id.clone(),
            frames: s.n_frames(),
            x: nested3(&s.frames),
            s: nested3(&s.relations),
            s_valid: (!all_valid).then(|| s.relation_counts.clone()),
            q,
            f: s.foreground.clone(),
            saliency: s.saliency.clone(),
            intervals: s.intervals.iter().map(|&(a, b)| [a, b]).collect(),
            question: s.question.clone(),
            answer: s.answer.clone(),
        }
    }
}

impl TryFrom<SampleRecord> for VideoSample {
    type Error = Error;

    fn try_from(r: SampleRecord) -> Result<Self> {
        let id = r.video_id.clone();
        let frames = flat3(&id, "X", &r.x)?;
        let relations = flat3(&id, "S", &r.s)?;
        let query = Tensor::from_rows(&r.q).map_err(|e| Error::validation("Q", &id, e.to_string()))?;
        if frames.shape()[0] != r.frames {
            return Err(Error::validation(
                "frames",
                &id,
                format!("declares {} frames, X has {}", r.frames, frames.shape()[0]),
            ));
        }
        let k = relations.shape()[1];
        let sample = VideoSample {
            video_id: r.video_id,
            relation_counts: r.s_valid.unwrap_or_else(|| vec![k; r.frames]),
            frames,
            relations,
            query,
            foreground: r.f,
            saliency: r.saliency,
            intervals: r.intervals.into_iter().map(|[a, b]| (a, b)).collect(),
            question: r.question,
            answer: r.answer,
        };
        sample.validate()?;
        Ok(sample)
    }
}

/// Reads a JSONL dataset, validating every sample. Blank lines are skipped.
pub fn load_dataset(path: impl AsRef<Path>) -> Result<Vec<VideoSample>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: SampleRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            reason: e.to_string(),
        })?;
        out.push(VideoSample::try_from(record)?);
    }
    Ok(out)
}

pub fn save_dataset(path: impl AsRef<Path>, samples: &[VideoSample]) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for s in samples {
        serde_json::to_writer(&mut w, &SampleRecord::from(s))?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    pub(crate) fn tiny_sample(id: &str) -> VideoSample {
        let n = 4;
        let frames = Tensor::new(vec![n, 2, 3], (0..n * 6).map(|v| v as f64 * 0.1 - 1.0).collect()).unwrap();
        let relations = Tensor::new(vec![n, 2, 3], (0..n * 6).map(|v| (v as f64).sin()).collect()).unwrap();
        VideoSample {
            video_id: id.into(),
            frames,
            relations,
            relation_counts: vec![2, 2, 1, 0],
            query: Tensor::from_rows(&[vec![0.5, -0.25, 1.0]]).unwrap(),
            foreground: vec![0.0, 1.0, 1.0, 0.0],
            saliency: vec![-0.5, 1.0, 1.0, 0.0],
            intervals: vec![(1, 3)],
            question: Some("q?".into()),
            answer: None,
        }
    }

    #[test]
    fn empty_file_is_empty_dataset() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("empty.jsonl");
        std::fs::write(&p, "").unwrap();
        assert!(load_dataset(&p).unwrap().is_empty());
    }

    #[test]
    fn round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.jsonl");
        let samples = vec![tiny_sample("a"), tiny_sample("b")];
        save_dataset(&p, &samples).unwrap();
        assert_eq!(load_dataset(&p).unwrap(), samples);
    }

    #[test]
    fn out_of_range_saliency_names_field_and_video() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.jsonl");
        let mut s = tiny_sample("vid_7");
        save_dataset(&p, std::slice::from_ref(&s)).unwrap();
        let text = std::fs::read_to_string(&p)
            .unwrap()
            .replace("\"s\":[-0.5", "\"s\":[1.5");
        std::fs::write(&p, text).unwrap();
        let msg = load_dataset(&p).unwrap_err().to_string();
        assert!(msg.contains("saliency") && msg.contains("vid_7"), "{msg}");

        s.foreground[0] = 1.0;
        assert!(s.validate().is_err());
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.jsonl");
        save_dataset(&p, &[tiny_sample("a")]).unwrap();
        let mut text = std::fs::read_to_string(&p).unwrap();
        text.push_str("{not json\n");
        std::fs::write(&p, text).unwrap();
        assert!(matches!(load_dataset(&p), Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn pooled_relations_skip_padding() {
        let s = tiny_sample("a");
        let pooled = s.pooled_relations();
        assert_eq!(pooled.row_slice(3), &[0.0, 0.0, 0.0]);
        let expected: Vec<f64> = (12..15).map(|v| (v as f64).sin()).collect();
        assert_eq!(pooled.row_slice(2), expected.as_slice());
    }
}
