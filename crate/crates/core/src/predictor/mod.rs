//! Map prediction: obstruction probabilities, confidence thresholding and
//! synthesis with the observed map.
//!
//! The full predictor is `threshold ∘ predict`, mapping an observation grid
//! back onto an observation grid. [`synthesize`] then overlays the real
//! observations, which always win over predicted cells.

mod builtin;
mod remote;

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{CellClass, GridError, GroundTruthMap, ObservationGrid};

pub use builtin::{HeuristicWallExtend, NoisyOracle, NullPredictor};
pub use remote::{
    decode_cells, decode_probabilities, encode_cells, encode_probabilities, serve_predictor_stream, PredictorReply,
    PredictorRequest, RemotePredictor,
};

#[derive(Debug, Error)]
pub enum PredictorError {
    #[error("probability {value} at ({x}, {y}) is outside [0, 1]")]
    OutOfRange { x: usize, y: usize, value: f64 },
    #[error("confidence level {0} is outside [0, 1]")]
    BadConfidence(f64),
    #[error("flip rate {0} is outside [0, 0.5)")]
    BadFlipRate(f64),
    #[error("unknown predictor {0:?} (expected none, oracle[:RATE], heuristic or remote:ENDPOINT)")]
    UnknownKind(String),
    #[error("the oracle predictor needs the episode's ground truth")]
    MissingGroundTruth,
    #[error("remote predictor {endpoint}: {message}")]
    Remote { endpoint: String, message: String },
    #[error("protocol: {0}")]
    Protocol(String),
    #[error(transparent)]
    Grid(#[from] GridError),
}

/// Per-cell probability of being an obstacle.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityGrid {
    width: usize,
    height: usize,
    p: Vec<f64>,
}

impl ProbabilityGrid {
    pub fn new(width: usize, height: usize, p: Vec<f64>) -> Result<Self, PredictorError> {
        if p.len() != width * height {
            return Err(GridError::BadLength {
                expected: width * height,
                got: p.len(),
            }
            .into());
        }
        if let Some(i) = p.iter().position(|v| !(0.0..=1.0).contains(v)) {
            return Err(PredictorError::OutOfRange {
                x: i % width,
                y: i / width,
                value: p[i],
            });
        }
        Ok(Self { width, height, p })
    }

    pub fn uniform(width: usize, height: usize, value: f64) -> Self {
        Self {
            width,
            height,
            p: vec![value.clamp(0.0, 1.0); width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[f64] {
        &self.p
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.p[y * self.width + x]
    }
}

/// Confidence levels for accepting predicted free and obstacle cells.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdConfig {
    delta_free: f64,
    delta_obstacle: f64,
}

impl ThresholdConfig {
    pub fn new(delta_free: f64, delta_obstacle: f64) -> Result<Self, PredictorError> {
        for d in [delta_free, delta_obstacle] {
            if !(0.0..=1.0).contains(&d) {
                return Err(PredictorError::BadConfidence(d));
            }
        }
        Ok(Self {
            delta_free,
            delta_obstacle,
        })
    }

    /// Levels tuned for the rectangular generated corpus.
    pub fn rectangular() -> Self {
        Self {
            delta_free: 0.93,
            delta_obstacle: 0.95,
        }
    }

    /// Levels tuned for diverse, concave corpora.
    pub fn diverse() -> Self {
        Self {
            delta_free: 0.90,
            delta_obstacle: 0.99,
        }
    }

    pub fn delta_free(&self) -> f64 {
        self.delta_free
    }

    pub fn delta_obstacle(&self) -> f64 {
        self.delta_obstacle
    }

    /// Probabilities at or below this are accepted as free.
    pub fn free_cutoff(&self) -> f64 {
        (1.0 - self.delta_free) / 2.0
    }

    /// Probabilities at or above this are accepted as obstacles.
    pub fn obstacle_cutoff(&self) -> f64 {
        (1.0 + self.delta_obstacle) / 2.0
    }
}

impl Default for ThresholdConfig {
    fn default() -> Self {
        Self::rectangular()
    }
}

pub fn threshold(p: &ProbabilityGrid, cfg: &ThresholdConfig) -> ObservationGrid {
    let (lo, hi) = (cfg.free_cutoff(), cfg.obstacle_cutoff());
    let cells = p
        .values()
        .iter()
        .map(|&v| {
            if v <= lo {
                CellClass::Free
            } else if v >= hi {
                CellClass::Obstacle
            } else {
                CellClass::Unknown
            }
        })
        .collect();
    ObservationGrid::from_cells(p.width(), p.height(), cells).expect("threshold only emits free/obstacle/unknown")
}

/// Overlays observations onto a predicted map; known observed cells win.
pub fn synthesize(obs: &ObservationGrid, predicted: &ObservationGrid) -> Result<ObservationGrid, GridError> {
    obs.same_shape(predicted)?;
    let cells = obs
        .cells()
        .iter()
        .zip(predicted.cells())
        .map(|(o, p)| if o.is_known() { *o } else { *p })
        .collect();
    ObservationGrid::from_cells(obs.width(), obs.height(), cells)
}

/// Obstacle-as-positive F1 over interior cells the prediction decides.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct F1Score {
    pub score: f64,
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
    pub decided: usize,
}

impl F1Score {
    /// The prediction left every interior cell unknown; `score` is 1 by convention.
    pub fn no_decisions(&self) -> bool {
        self.decided == 0
    }
}

pub fn f1_score(predicted: &ObservationGrid, gt: &GroundTruthMap) -> Result<F1Score, GridError> {
    if predicted.width() != gt.width() || predicted.height() != gt.height() {
        return Err(GridError::DimensionMismatch {
            left_w: predicted.width(),
            left_h: predicted.height(),
            right_w: gt.width(),
            right_h: gt.height(),
        });
    }
    let (mut tp, mut fp, mut fn_, mut decided) = (0, 0, 0, 0);
    for (p, g) in predicted.cells().iter().zip(gt.cells()) {
        let truth_wall = match g {
            CellClass::Free => false,
            CellClass::Obstacle => true,
            _ => continue,
        };
        match p {
            CellClass::Obstacle => {
                decided += 1;
                if truth_wall {
                    tp += 1
                } else {
                    fp += 1
                }
            }
            CellClass::Free => {
                decided += 1;
                if truth_wall {
                    fn_ += 1
                }
            }
            _ => {}
        }
    }
    let score = if tp + fp + fn_ == 0 {
        1.0
    } else {
        2.0 * tp as f64 / (2 * tp + fp + fn_) as f64
    };
    Ok(F1Score {
        score,
        true_positives: tp,
        false_positives: fp,
        false_negatives: fn_,
        decided,
    })
}

/// A source of obstruction probabilities.
pub trait Predictor: Send {
    fn predict(&mut self, obs: &ObservationGrid) -> Result<ProbabilityGrid, PredictorError>;
}

/// Which predictor an episode runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(try_from = "String", into = "String")]
pub enum PredictorKind {
    /// Uniform 0.5: thresholds away to nothing for any positive confidence.
    #[default]
    Null,
    /// Ground-truth oracle reporting `1 - flip_rate` on obstacles and `flip_rate` on free cells.
    NoisyOracle {
        flip_rate: f64,
    },
    HeuristicWallExtend,
    /// `host:port` over TCP, or `exec:COMMAND ARGS...` over a child's stdio.
    Remote {
        endpoint: String,
    },
}

impl PredictorKind {
    pub fn is_null(&self) -> bool {
        matches!(self, PredictorKind::Null)
    }

    pub fn build(&self, gt: Option<Arc<GroundTruthMap>>) -> Result<Box<dyn Predictor>, PredictorError> {
        Ok(match self {
            PredictorKind::Null => Box::new(NullPredictor),
            PredictorKind::NoisyOracle { flip_rate } => {
                let gt = gt.ok_or(PredictorError::MissingGroundTruth)?;
                Box::new(NoisyOracle::new(gt, *flip_rate)?)
            }
            PredictorKind::HeuristicWallExtend => Box::new(HeuristicWallExtend),
            PredictorKind::Remote { endpoint } => Box::new(RemotePredictor::new(endpoint.clone())),
        })
    }
}

impl fmt::Display for PredictorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PredictorKind::Null => f.write_str("none"),
            PredictorKind::NoisyOracle { flip_rate } if *flip_rate == 0.0 => f.write_str("oracle"),
            PredictorKind::NoisyOracle { flip_rate } => write!(f, "oracle:{flip_rate}"),
            PredictorKind::HeuristicWallExtend => f.write_str("heuristic"),
            PredictorKind::Remote { endpoint } => write!(f, "remote:{endpoint}"),
        }
    }
}

impl FromStr for PredictorKind {
    type Err = PredictorError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (head, arg) = match s.split_once(':') {
            Some((h, a)) => (h, Some(a)),
            None => (s, None),
        };
        match (head, arg) {
            ("none" | "null", None) => Ok(PredictorKind::Null),
            ("oracle", None) => Ok(PredictorKind::NoisyOracle { flip_rate: 0.0 }),
            ("oracle", Some(rate)) => {
                let flip_rate: f64 = rate.parse().map_err(|_| PredictorError::UnknownKind(s.to_string()))?;
                if !(0.0..0.5).contains(&flip_rate) {
                    return Err(PredictorError::BadFlipRate(flip_rate));
                }
                Ok(PredictorKind::NoisyOracle { flip_rate })
            }
            ("heuristic", None) => Ok(PredictorKind::HeuristicWallExtend),
            ("remote", Some(endpoint)) if !endpoint.is_empty() => Ok(PredictorKind::Remote {
                endpoint: endpoint.to_string(),
            }),
            _ => Err(PredictorError::UnknownKind(s.to_string())),
        }
    }
}

impl TryFrom<String> for PredictorKind {
    type Error = PredictorError;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<PredictorKind> for String {
    fn from(k: PredictorKind) -> String {
        k.to_string()
    }
}

/// One-shot prediction. The oracle needs `gt`; other kinds ignore it.
pub fn predict(
    kind: &PredictorKind,
    obs: &ObservationGrid,
    gt: Option<Arc<GroundTruthMap>>,
) -> Result<ProbabilityGrid, PredictorError> {
    kind.build(gt)?.predict(obs)
}

/// `threshold ∘ predict` with fallback to the null predictor when the
/// underlying source fails.
pub struct MapPredictor {
    inner: Box<dyn Predictor>,
    thresholds: ThresholdConfig,
    failures: usize,
}

impl MapPredictor {
    pub fn new(inner: Box<dyn Predictor>, thresholds: ThresholdConfig) -> Self {
        Self {
            inner,
            thresholds,
            failures: 0,
        }
    }

    /// Thresholded prediction for `obs`.
    pub fn predict_map(&mut self, obs: &ObservationGrid) -> ObservationGrid {
        let p = match self.inner.predict(obs) {
            Ok(p) if p.width() == obs.width() && p.height() == obs.height() => p,
            Ok(p) => {
                self.failures += 1;
                log::warn!(
                    "predictor returned {}x{} for a {}x{} map; using the null prediction",
                    p.width(),
                    p.height(),
                    obs.width(),
                    obs.height()
                );
                ProbabilityGrid::uniform(obs.width(), obs.height(), 0.5)
            }
            Err(e) => {
                self.failures += 1;
                log::warn!("predictor failed ({e}); using the null prediction");
                ProbabilityGrid::uniform(obs.width(), obs.height(), 0.5)
            }
        };
        threshold(&p, &self.thresholds)
    }

    /// Number of predictions that fell back to the null predictor.
    pub fn failures(&self) -> usize {
        self.failures
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn grid(w: usize, h: usize, s: &str) -> ObservationGrid {
        let cells = s
            .chars()
            .filter(|c| !c.is_whitespace())
            .map(|c| match c {
                '.' => CellClass::Free,
                '#' => CellClass::Obstacle,
                _ => CellClass::Unknown,
            })
            .collect();
        ObservationGrid::from_cells(w, h, cells).unwrap()
    }

    #[test]
    fn cutoffs_for_tuned_levels() {
        let d1 = ThresholdConfig::rectangular();
        assert!((d1.free_cutoff() - 0.035).abs() < 1e-12);
        assert!((d1.obstacle_cutoff() - 0.975).abs() < 1e-12);
        let d2 = ThresholdConfig::diverse();
        assert!((d2.free_cutoff() - 0.05).abs() < 1e-12);
        assert!((d2.obstacle_cutoff() - 0.995).abs() < 1e-12);
    }

    #[test]
    fn threshold_examples() {
        let p = ProbabilityGrid::new(3, 1, vec![0.02, 0.04, 0.98]).unwrap();
        let out = threshold(&p, &ThresholdConfig::rectangular());
        assert_eq!(out.cells(), &[CellClass::Free, CellClass::Unknown, CellClass::Obstacle]);
    }

    #[test]
    fn full_confidence_only_accepts_certainties() {
        let p = ProbabilityGrid::new(4, 1, vec![0.0, 1e-9, 1.0 - 1e-9, 1.0]).unwrap();
        let out = threshold(&p, &ThresholdConfig::new(1.0, 1.0).unwrap());
        assert_eq!(
            out.cells(),
            &[
                CellClass::Free,
                CellClass::Unknown,
                CellClass::Unknown,
                CellClass::Obstacle
            ]
        );
    }

    #[test]
    fn probability_grid_validation() {
        assert!(ProbabilityGrid::new(2, 1, vec![0.0, 1.0]).is_ok());
        assert!(ProbabilityGrid::new(2, 1, vec![0.0, 1.5]).is_err());
        assert!(ProbabilityGrid::new(2, 1, vec![f64::NAN, 0.0]).is_err());
        assert!(ProbabilityGrid::new(2, 1, vec![0.0]).is_err());
        assert!(ThresholdConfig::new(1.2, 0.5).is_err());
    }

    #[test]
    fn synthesize_overlay_rules() {
        let obs = grid(3, 1, ". ? ?");
        let unknown = ObservationGrid::unknown(3, 1);
        assert_eq!(synthesize(&obs, &unknown).unwrap(), obs);
        let pred = grid(3, 1, "# # .");
        assert_eq!(synthesize(&unknown, &pred).unwrap(), pred);
        let merged = synthesize(&obs, &pred).unwrap();
        assert_eq!(merged.cells(), &[CellClass::Free, CellClass::Obstacle, CellClass::Free]);
        assert!(synthesize(&obs, &ObservationGrid::unknown(2, 1)).is_err());
    }

    fn ground(s: &str, w: usize, h: usize) -> GroundTruthMap {
        let cells = s
            .chars()
            .filter(|c| !c.is_whitespace())
            .map(|c| if c == '#' { CellClass::Obstacle } else { CellClass::Free })
            .collect();
        GroundTruthMap::new(w, h, cells).unwrap()
    }

    #[test]
    fn f1_hand_arithmetic() {
        // 10 decided cells: 4 TP, 1 FN (cell 4), 1 FP (cell 6), 4 TN
        let gt = ground("#####.....", 10, 1);
        let pred = grid(10, 1, "####..#...");
        let s = f1_score(&pred, &gt).unwrap();
        assert_eq!(
            (s.true_positives, s.false_positives, s.false_negatives, s.decided),
            (4, 1, 1, 10)
        );
        assert!((s.score - 0.8).abs() < 1e-12);
    }

    #[test]
    fn f1_vacuous_case_is_flagged() {
        let gt = ground("#.#.", 4, 1);
        let s = f1_score(&ObservationGrid::unknown(4, 1), &gt).unwrap();
        assert_eq!(s.score, 1.0);
        assert!(s.no_decisions());
        // decided but no positives anywhere: 1.0 without the flag
        let s = f1_score(&grid(4, 1, "? . ? ."), &gt).unwrap();
        assert_eq!(s.score, 1.0);
        assert!(!s.no_decisions());
    }

    #[test]
    fn kind_parsing_round_trips() {
        for s in ["none", "oracle", "oracle:0.1", "heuristic", "remote:127.0.0.1:9000"] {
            let k: PredictorKind = s.parse().unwrap();
            assert_eq!(k.to_string(), s);
        }
        assert!("oracle:0.5".parse::<PredictorKind>().is_err());
        assert!("oracle:x".parse::<PredictorKind>().is_err());
        assert!("magic".parse::<PredictorKind>().is_err());
        assert!("remote:".parse::<PredictorKind>().is_err());
        let json = serde_json::to_string(&PredictorKind::HeuristicWallExtend).unwrap();
        assert_eq!(json, "\"heuristic\"");
    }

    #[test]
    fn null_pipeline_decides_nothing() {
        let obs = grid(3, 2, ". # ? ? ? ?");
        let mut mp = MapPredictor::new(Box::new(NullPredictor), ThresholdConfig::new(0.01, 0.01).unwrap());
        let pred = mp.predict_map(&obs);
        assert_eq!(pred.count(CellClass::Unknown), 6);
        assert_eq!(synthesize(&obs, &pred).unwrap(), obs);
    }

    struct Failing;
    impl Predictor for Failing {
        fn predict(&mut self, _: &ObservationGrid) -> Result<ProbabilityGrid, PredictorError> {
            Err(PredictorError::Protocol("boom".into()))
        }
    }

    #[test]
    fn pipeline_falls_back_on_failure() {
        let obs = grid(2, 1, ". ?");
        let mut mp = MapPredictor::new(Box::new(Failing), ThresholdConfig::default());
        assert_eq!(mp.predict_map(&obs), ObservationGrid::unknown(2, 1));
        assert_eq!(mp.failures(), 1);
    }

    proptest! {
        #[test]
        fn threshold_is_monotone_in_confidence(
            ps in proptest::collection::vec(0.0f64..=1.0, 64),
            a in 0.0f64..=1.0, b in 0.0f64..=1.0, c in 0.0f64..=1.0,
        ) {
            let p = ProbabilityGrid::new(8, 8, ps).unwrap();
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let loose = threshold(&p, &ThresholdConfig::new(lo, c).unwrap());
            let strict = threshold(&p, &ThresholdConfig::new(hi, c).unwrap());
            prop_assert!(strict.count(CellClass::Free) <= loose.count(CellClass::Free));
            for (s, l) in strict.cells().iter().zip(loose.cells()) {
                if *s == CellClass::Free { prop_assert_eq!(*l, CellClass::Free); }
            }
            let loose = threshold(&p, &ThresholdConfig::new(c, lo).unwrap());
            let strict = threshold(&p, &ThresholdConfig::new(c, hi).unwrap());
            for (s, l) in strict.cells().iter().zip(loose.cells()) {
                if *s == CellClass::Obstacle { prop_assert_eq!(*l, CellClass::Obstacle); }
            }
        }

        #[test]
        fn synthesis_never_contradicts_observations(
            o in proptest::collection::vec(0u8..3, 30),
            q in proptest::collection::vec(0u8..3, 30),
        ) {
            let to = |v: Vec<u8>| ObservationGrid::from_cells(6, 5, v.into_iter().map(|b| CellClass::from_wire_byte(b).unwrap()).collect()).unwrap();
            let (obs, pred) = (to(o), to(q));
            let out = synthesize(&obs, &pred).unwrap();
            for (i, c) in obs.cells().iter().enumerate() {
                if c.is_known() { prop_assert_eq!(out.cells()[i], *c); }
            }
        }
    }
}
