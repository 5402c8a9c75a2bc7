use crate::error::{Error, Result};

/// Causal moving average: position `i` averages the last `min(i + 1, window)`
/// values.
pub fn moving_average(series: &[f64], window: usize) -> Result<Vec<f64>> {
    if series.is_empty() {
        return Err(Error::Empty("series"));
    }
    if window == 0 {
        return Err(Error::InvalidArgument("moving-average window must be >= 1".into()));
    }
    Ok((0..series.len())
        .map(|i| {
            let lo = (i + 1).saturating_sub(window);
            let slice = &series[lo..=i];
            slice.iter().sum::<f64>() / slice.len() as f64
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopMode {
    Minimize,
    Maximize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EarlyStopConfig {
    pub window: usize,
    pub patience: usize,
    pub mode: StopMode,
}

impl Default for EarlyStopConfig {
    fn default() -> Self {
        Self {
            window: 10,
            patience: 10,
            mode: StopMode::Minimize,
        }
    }
}

/// Positions (0-based) into the series.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StopPoint {
    pub best_epoch: usize,
    pub stop_epoch: usize,
}

/// Patience-based early stopping on the smoothed series. Only strict
/// improvements move the best position; stopping happens at the first
/// position where `patience` consecutive values failed to improve.
pub fn find_stop_epoch(series: &[f64], cfg: &EarlyStopConfig) -> Result<StopPoint> {
    if cfg.patience == 0 {
        return Err(Error::InvalidArgument("patience must be >= 1".into()));
    }
    let smoothed = moving_average(series, cfg.window)?;
    let better = |a: f64, b: f64| match cfg.mode {
        StopMode::Minimize => a < b,
        StopMode::Maximize => a > b,
    };
    let mut best_epoch = 0;
    let mut best = smoothed[0];
    let mut stale = 0;
    for (i, &v) in smoothed.iter().enumerate().skip(1) {
        if better(v, best) {
            best = v;
            best_epoch = i;
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                return Ok(StopPoint { best_epoch, stop_epoch: i });
            }
        }
    }
    Ok(StopPoint {
        best_epoch,
        stop_epoch: smoothed.len() - 1,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(window: usize, patience: usize, mode: StopMode) -> EarlyStopConfig {
        EarlyStopConfig { window, patience, mode }
    }

    #[test]
    fn moving_average_cases() {
        assert_eq!(moving_average(&[2.0; 5], 3).unwrap(), vec![2.0; 5]);
        assert_eq!(moving_average(&[0.0, 0.0, 3.0], 3).unwrap(), vec![0.0, 0.0, 1.0]);
        let s = [3.0, -1.0, 7.5];
        assert_eq!(moving_average(&s, 1).unwrap(), s.to_vec());
        assert_eq!(moving_average(&[1.0, 3.0, 5.0], 2).unwrap(), vec![1.0, 2.0, 4.0]);
        assert!(moving_average(&[], 3).is_err());
        assert!(moving_average(&[1.0], 0).is_err());
    }

    #[test]
    fn hand_traced_stop() {
        let s = [5.0, 4.0, 3.0, 4.0, 5.0, 6.0];
        let p = find_stop_epoch(&s, &cfg(1, 2, StopMode::Minimize)).unwrap();
        assert_eq!(
            p,
            StopPoint {
                best_epoch: 2,
                stop_epoch: 4
            }
        );
    }

    #[test]
    fn monotone_series_never_stops() {
        let s: Vec<f64> = (0..30).map(|i| 100.0 - i as f64).collect();
        let p = find_stop_epoch(&s, &cfg(10, 10, StopMode::Minimize)).unwrap();
        assert_eq!(
            p,
            StopPoint {
                best_epoch: 29,
                stop_epoch: 29
            }
        );
    }

    #[test]
    fn ties_keep_earlier_epoch() {
        let s = [3.0, 1.0, 1.0, 1.0, 2.0];
        let p = find_stop_epoch(&s, &cfg(1, 3, StopMode::Minimize)).unwrap();
        assert_eq!(
            p,
            StopPoint {
                best_epoch: 1,
                stop_epoch: 4
            }
        );
    }

    #[test]
    fn maximize_mirrors_minimize() {
        let s = [5.0, 4.0, 3.0, 4.0, 5.0, 6.0, 2.0, 8.0];
        let neg: Vec<f64> = s.iter().map(|v| -v).collect();
        for w in 1..4 {
            for p in 1..4 {
                assert_eq!(
                    find_stop_epoch(&s, &cfg(w, p, StopMode::Minimize)).unwrap(),
                    find_stop_epoch(&neg, &cfg(w, p, StopMode::Maximize)).unwrap()
                );
            }
        }
    }
}
