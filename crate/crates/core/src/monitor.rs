//! Repeated detection with a cool-down, for streams with several changes.

use serde::{Deserialize, Serialize};

use crate::detector::{DetectorConfig, DetectorState};
use crate::error::{Error, Result};
use crate::inference::{run_with_state, InferenceConfig, InferenceResult, RunOutcome};

#[derive(Debug, Clone, PartialEq)]
pub struct MonitorSession {
    pub detector: DetectorConfig,
    pub inference: InferenceConfig,
    /// Rows skipped after the inference extras before restarting.
    pub cooldown: usize,
    /// First row (0-based, among data rows) fed to the detector.
    pub start_row: usize,
}

/// One declaration, with positions translated to 0-based data rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonitorRecord {
    pub segment_start_row: usize,
    /// Row of the observation that triggered the declaration.
    pub declaration_row: usize,
    /// The interval for the change time, as the row of the last pre-change
    /// observation; `segment_start_row - 1` means a change before the segment.
    pub ci_left_row: i64,
    pub ci_right_row: i64,
    #[serde(skip)]
    pub result: Option<InferenceResult>,
}

/// Runs detection and inference, restarts with a fresh state after each
/// declaration plus `ℓ` extras and `cooldown` skipped rows.
pub fn monitor<X: AsRef<[f64]>>(rows: &[X], session: &MonitorSession) -> Result<Vec<MonitorRecord>> {
    session.inference.check_variant(session.detector.variant)?;
    if session.start_row > rows.len() {
        return Err(Error::Data(format!(
            "monitoring starts at row {} but the stream has {} rows",
            session.start_row,
            rows.len()
        )));
    }
    let ell = session.inference.ell;
    let mut records = Vec::new();
    let mut start = session.start_row;
    let mut state = DetectorState::new(&session.detector);
    while start < rows.len() {
        state.reset();
        let mut it = rows[start..].iter();
        let outcome = match run_with_state(&mut state, &mut it, &session.detector, &session.inference) {
            Ok(o) => o,
            Err(Error::ExtrasExhausted { expected, got }) => {
                log::warn!(
                    "declaration at row {} left only {got} of {expected} rows for inference; stopping",
                    start as u64 + state.n() - 1
                );
                break;
            }
            Err(e) => return Err(e),
        };
        let RunOutcome::Declared { result, .. } = outcome else {
            break;
        };
        let n = result.anchor.n as usize;
        let declaration_row = start + n - 1;
        records.push(MonitorRecord {
            segment_start_row: start,
            declaration_row,
            ci_left_row: start as i64 + result.ci_left as i64 - 1,
            ci_right_row: start as i64 + result.ci_right as i64 - 1,
            result: Some(result),
        });
        start = declaration_row + ell + session.cooldown + 1;
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detector::Variant;
    use crate::grid::ScaleGrid;
    use crate::rng::stream_rng;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn session(cooldown: usize, ell: usize, variant: Variant) -> MonitorSession {
        let grid = ScaleGrid::new(4, 2.0).unwrap();
        MonitorSession {
            detector: DetectorConfig::new(grid, 1.5, 12.0, 60.0, variant).unwrap(),
            inference: InferenceConfig::with_default_d2(1.5, ell, 0.05).unwrap(),
            cooldown,
            start_row: 0,
        }
    }

    fn two_change_stream() -> Vec<Vec<f64>> {
        let mut rng = stream_rng(17, 0);
        (0..700)
            .map(|t| {
                let shift = if (200..300).contains(&t) || (450..530).contains(&t) { 3.0 } else { 0.0 };
                (0..4)
                    .map(|j| rng.sample::<f64, _>(StandardNormal) + if j < 2 { shift } else { 0.0 })
                    .collect()
            })
            .collect()
    }

    #[test]
    fn two_separated_changes() {
        let rows = two_change_stream();
        let recs = monitor(&rows, &session(100, 0, Variant::Ocd)).unwrap();
        assert_eq!(recs.len(), 2, "{recs:?}");
        assert!((200..240).contains(&recs[0].declaration_row));
        assert!((450..490).contains(&recs[1].declaration_row));
        assert!(recs[1].declaration_row > recs[0].declaration_row + 100);
        assert!(recs[0].ci_left_row <= 199 && recs[0].ci_right_row >= 199);
    }

    #[test]
    fn restart_positions() {
        let rows = two_change_stream();
        for (cooldown, ell) in [(0, 0), (5, 0), (3, 4)] {
            let variant = if ell > 0 { Variant::OcdPrime } else { Variant::Ocd };
            let recs = monitor(&rows, &session(cooldown, ell, variant)).unwrap();
            for w in recs.windows(2) {
                assert_eq!(w[1].segment_start_row, w[0].declaration_row + ell + cooldown + 1);
            }
        }
    }

    #[test]
    fn start_row_past_end() {
        let rows = two_change_stream();
        let mut s = session(0, 0, Variant::Ocd);
        s.start_row = 701;
        assert!(monitor(&rows, &s).is_err());
        s.start_row = 700;
        assert!(monitor(&rows, &s).unwrap().is_empty());
    }
}
