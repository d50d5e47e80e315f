//! Cross-run aggregation: interquartile mean, mean and population standard
//! deviation, and the aggregate CSV.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::str::FromStr;

use crate::envs::EnvId;
use crate::trainer::RunDir;
use crate::{Error, Result};

pub const AGGREGATE_HEADER: &str = "method,transitions,stat,value,spread";

/// Mean of the values left after dropping `floor(n / 4)` from each end of
/// the sorted list. Kept values are summed in ascending order.
pub fn iqm(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Degenerate("iqm of an empty list".into()));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let trim = v.len() / 4;
    let kept = &v[trim..v.len() - trim];
    Ok(kept.iter().sum::<f64>() / kept.len() as f64)
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> Result<(f64, f64)> {
    if values.is_empty() {
        return Err(Error::Degenerate("mean of an empty list".into()));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    Ok((mean, var.sqrt()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stat {
    Iqm,
    MeanStd,
}

impl Stat {
    pub fn tag(self) -> &'static str {
        match self {
            Stat::Iqm => "iqm",
            Stat::MeanStd => "mean-std",
        }
    }
}

impl fmt::Display for Stat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Stat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "iqm" => Ok(Stat::Iqm),
            "mean-std" => Ok(Stat::MeanStd),
            _ => Err(Error::Parse(format!("unknown statistic `{s}` (iqm | mean-std)"))),
        }
    }
}

/// One task's success-rate curve from one run.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub method: String,
    pub env: EnvId,
    pub seed: u64,
    pub horizon: usize,
    /// `(episode, success rate)` per evaluation.
    pub points: Vec<(usize, f64)>,
}

impl Series {
    fn grid(&self) -> Vec<usize> {
        self.points.iter().map(|p| p.0).collect()
    }

    fn label(&self) -> String {
        format!("{}/{}/seed {}", self.method, self.env, self.seed)
    }
}

/// Series that all share one evaluation grid.
#[derive(Debug, Clone, Default)]
pub struct RunCollection {
    series: Vec<Series>,
}

impl RunCollection {
    /// Rejects the collection when any member's evaluation episodes or
    /// horizon differ from the first member's, naming every offender.
    pub fn new(series: Vec<Series>) -> Result<Self> {
        if let Some(first) = series.first() {
            let grid = first.grid();
            let offenders: Vec<String> = series
                .iter()
                .filter(|s| s.grid() != grid || s.horizon != first.horizon)
                .map(Series::label)
                .collect();
            if !offenders.is_empty() {
                return Err(Error::MisalignedGrid(format!(
                    "expected episodes {grid:?} at horizon {} (from {}); offenders: {}",
                    first.horizon,
                    first.label(),
                    offenders.join(", ")
                )));
            }
        }
        Ok(Self { series })
    }

    /// Both task series of every run directory, tagged with the run's
    /// method.
    pub fn from_run_dirs(runs: &[RunDir]) -> Result<Self> {
        let mut series = Vec::new();
        for run in runs {
            for env in run.config.env.tasks() {
                series.push(Series {
                    method: run.config.method_tag(),
                    env,
                    seed: run.config.seed,
                    horizon: run.config.horizon,
                    points: run
                        .points
                        .iter()
                        .filter(|p| p.env == env)
                        .map(|p| (p.episode, p.success_rate))
                        .collect(),
                });
            }
        }
        Self::new(series)
    }

    pub fn series(&self) -> &[Series] {
        &self.series
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AggregateRow {
    pub method: String,
    pub episode: usize,
    /// Environment transitions per task behind the evaluation.
    pub transitions: u64,
    pub stat: Stat,
    pub value: f64,
    /// Population standard deviation for `mean-std`; none for `iqm`.
    pub spread: Option<f64>,
}

/// Per-method, per-evaluation statistic across all (env, seed) series.
/// Methods are listed in order of first appearance.
pub fn aggregate(collection: &RunCollection, stat: Stat) -> Result<Vec<AggregateRow>> {
    let mut order: Vec<&str> = Vec::new();
    let mut by_method: BTreeMap<&str, Vec<&Series>> = BTreeMap::new();
    for s in &collection.series {
        if !by_method.contains_key(s.method.as_str()) {
            order.push(&s.method);
        }
        by_method.entry(&s.method).or_default().push(s);
    }
    let mut rows = Vec::new();
    for method in order {
        let members = &by_method[method];
        let first = members[0];
        for (i, &(episode, _)) in first.points.iter().enumerate() {
            let values: Vec<f64> = members.iter().map(|s| s.points[i].1).collect();
            let (value, spread) = match stat {
                Stat::Iqm => (iqm(&values)?, None),
                Stat::MeanStd => {
                    let (m, sd) = mean_std(&values)?;
                    (m, Some(sd))
                }
            };
            rows.push(AggregateRow {
                method: method.to_owned(),
                episode,
                transitions: (episode * first.horizon) as u64,
                stat,
                value,
                spread,
            });
        }
    }
    Ok(rows)
}

pub fn aggregate_csv(rows: &[AggregateRow]) -> String {
    let mut o = String::from(AGGREGATE_HEADER);
    o.push('\n');
    for r in rows {
        let spread = r.spread.map(|s| s.to_string()).unwrap_or_default();
        writeln!(o, "{},{},{},{},{}", r.method, r.transitions, r.stat, r.value, spread).unwrap();
    }
    o
}

pub fn parse_aggregate_csv(text: &str) -> Result<Vec<(String, u64, Stat, f64, Option<f64>)>> {
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some(AGGREGATE_HEADER) {
        return Err(Error::Parse("aggregate header mismatch".into()));
    }
    lines
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let c: Vec<&str> = l.trim().split(',').collect();
            if c.len() != 5 {
                return Err(Error::Parse(format!("aggregate line `{l}`: expected 5 columns")));
            }
            let bad = |what: &str| Error::Parse(format!("aggregate line `{l}`: bad {what}"));
            let spread = if c[4].is_empty() {
                None
            } else {
                Some(c[4].parse().map_err(|_| bad("spread"))?)
            };
            Ok((
                c[0].to_owned(),
                c[1].parse().map_err(|_| bad("transitions"))?,
                c[2].parse()?,
                c[3].parse().map_err(|_| bad("value"))?,
                spread,
            ))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    /// Trim by repeatedly removing the current minimum and maximum, then
    /// sum what is left smallest first.
    fn iqm_oracle(values: &[f64]) -> f64 {
        let mut rest = values.to_vec();
        let argmin = |v: &Vec<f64>| (0..v.len()).fold(0, |b, i| if v[i] < v[b] { i } else { b });
        let argmax = |v: &Vec<f64>| (0..v.len()).fold(0, |b, i| if v[i] > v[b] { i } else { b });
        for _ in 0..values.len() / 4 {
            let i = argmin(&rest);
            rest.remove(i);
            let j = argmax(&rest);
            rest.remove(j);
        }
        let n = rest.len();
        let mut sum = 0.0;
        while !rest.is_empty() {
            let i = argmin(&rest);
            sum += rest.remove(i);
        }
        sum / n as f64
    }

    #[test]
    fn iqm_examples() {
        assert_eq!(iqm(&[1.0, 2.0, 3.0, 4.0]).unwrap(), 2.5);
        assert_eq!(iqm(&[0.7; 9]).unwrap(), 0.7);
        assert_eq!(iqm(&[-3.25]).unwrap(), -3.25);
        assert!(iqm(&[]).is_err());
    }

    #[test]
    fn iqm_matches_trim_oracle_bit_exactly() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(6);
        for _ in 0..1000 {
            let n = rng.random_range(1..=50);
            let v: Vec<f64> = (0..n).map(|_| rng.random_range(-10.0..10.0)).collect();
            assert_eq!(iqm(&v).unwrap().to_bits(), iqm_oracle(&v).to_bits(), "{v:?}");
        }
    }

    proptest! {
        #[test]
        fn iqm_properties(v in prop::collection::vec(-1e3f64..1e3, 1..40), seed in 0u64..1000) {
            let m = iqm(&v).unwrap();
            let lo = v.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(m >= lo - 1e-9 && m <= hi + 1e-9);
            let mut shuffled = v.clone();
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            for i in (1..shuffled.len()).rev() {
                shuffled.swap(i, rng.random_range(0..=i));
            }
            prop_assert_eq!(iqm(&shuffled).unwrap().to_bits(), m.to_bits());
            if v.len() <= 3 {
                let mean = v.iter().sum::<f64>() / v.len() as f64;
                prop_assert!((m - mean).abs() < 1e-9);
            }
        }
    }

    fn series(method: &str, env: EnvId, seed: u64, rates: &[f64]) -> Series {
        Series {
            method: method.into(),
            env,
            seed,
            horizon: 100,
            points: rates.iter().enumerate().map(|(i, &r)| (20 * (i + 1), r)).collect(),
        }
    }

    #[test]
    fn single_run_table_is_its_series() {
        let c = RunCollection::new(vec![series("sac", EnvId::PegInsert, 0, &[0.1, 0.4, 1.0])]).unwrap();
        let rows = aggregate(&c, Stat::Iqm).unwrap();
        let got: Vec<(u64, f64)> = rows.iter().map(|r| (r.transitions, r.value)).collect();
        assert_eq!(got, vec![(2000, 0.1), (4000, 0.4), (6000, 1.0)]);
    }

    #[test]
    fn two_point_mean_std() {
        let c = RunCollection::new(vec![
            series("sac", EnvId::PegInsert, 0, &[0.2]),
            series("sac", EnvId::PegInsert, 1, &[0.8]),
        ])
        .unwrap();
        let row = &aggregate(&c, Stat::MeanStd).unwrap()[0];
        assert!((row.value - 0.5).abs() < 1e-12);
        assert!((row.spread.unwrap() - 0.3).abs() < 1e-12);
    }

    #[test]
    fn eight_runs_match_recomputation() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(8);
        let mut all = Vec::new();
        for seed in 0..8 {
            let rates: Vec<f64> = (0..5).map(|_| rng.random_range(0..=20) as f64 / 20.0).collect();
            let method = if seed % 2 == 0 { "a" } else { "b" };
            all.push(series(method, EnvId::ALL[seed as usize % 6], seed, &rates));
        }
        let c = RunCollection::new(all.clone()).unwrap();
        for stat in [Stat::Iqm, Stat::MeanStd] {
            let rows = aggregate(&c, stat).unwrap();
            assert_eq!(rows.len(), 10);
            for row in rows {
                let i = row.episode / 20 - 1;
                let vals: Vec<f64> = all.iter().filter(|s| s.method == row.method).map(|s| s.points[i].1).collect();
                assert_eq!(vals.len(), 4);
                match stat {
                    Stat::Iqm => {
                        let mut v = vals.clone();
                        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
                        assert!((row.value - (v[1] + v[2]) / 2.0).abs() < 1e-12);
                    }
                    Stat::MeanStd => {
                        let m = vals.iter().sum::<f64>() / 4.0;
                        let sd = (vals.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / 4.0).sqrt();
                        assert!((row.value - m).abs() < 1e-12);
                        assert!((row.spread.unwrap() - sd).abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn misaligned_grids_name_offenders() {
        let mut odd = series("tr-sac", EnvId::PegRemove, 3, &[0.0, 1.0]);
        odd.points[1].0 = 30;
        let err = RunCollection::new(vec![series("sac", EnvId::PegInsert, 0, &[0.0, 1.0]), odd]).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("tr-sac/peg-remove/seed 3"), "{msg}");
        assert!(!msg.contains("offenders: sac"), "{msg}");
    }

    #[test]
    fn aggregate_csv_round_trips() {
        let c = RunCollection::new(vec![
            series("sac", EnvId::PegInsert, 0, &[0.25, 0.5]),
            series("tr-sac", EnvId::PegInsert, 0, &[0.5, 1.0]),
        ])
        .unwrap();
        let rows = aggregate(&c, Stat::MeanStd).unwrap();
        let text = aggregate_csv(&rows);
        assert!(text.starts_with("method,transitions,stat,value,spread\n"));
        let back = parse_aggregate_csv(&text).unwrap();
        assert_eq!(back.len(), 4);
        assert_eq!(back[3], ("tr-sac".to_string(), 4000, Stat::MeanStd, 1.0, Some(0.0)));
    }
}
