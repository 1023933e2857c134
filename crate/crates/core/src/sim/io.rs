//! Delimiter-separated dataset files.
//!
//! Header `x_1,…,x_d,mean,reps,noise_var[,g_1,…,g_d]`; one record per
//! observation. Floats are written with 17 significant digits so that
//! reading back reproduces every bit. Unknown noise variances are empty
//! fields.

use std::io::{Read, Write};

use super::{AggregatedObservation, Dataset, DesignPoint};
use crate::error::{Error, Result};

/// A float with 17 significant digits, enough to round-trip.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn write_dataset<W: Write>(data: &Dataset, out: W) -> Result<()> {
    let d = data.dimension;
    let with_grad = !data.is_empty() && data.observations.iter().all(|o| o.grad_mean.is_some());
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<String> = (1..=d).map(|j| format!("x_{j}")).collect();
    header.extend(["mean", "reps", "noise_var"].map(String::from));
    if with_grad {
        header.extend((1..=d).map(|j| format!("g_{j}")));
    }
    w.write_record(&header)?;
    for o in &data.observations {
        let mut rec: Vec<String> = o.point.iter().map(|&v| fmt_f64(v)).collect();
        rec.push(fmt_f64(o.mean));
        rec.push(o.reps.to_string());
        rec.push(o.noise_var.map(fmt_f64).unwrap_or_default());
        if with_grad {
            rec.extend(o.grad_mean.as_ref().unwrap().iter().map(|&v| fmt_f64(v)));
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_dataset<R: Read>(input: R) -> Result<Dataset> {
    let mut r = csv::Reader::from_reader(input);
    let header = r.headers()?.clone();
    let d = header.iter().take_while(|h| h.starts_with("x_")).count();
    let tail: Vec<&str> = header.iter().skip(d).collect();
    if tail.len() < 3 || tail[..3] != ["mean", "reps", "noise_var"] {
        return Err(Error::Parse(format!("unexpected dataset header {header:?}")));
    }
    let with_grad = match tail.len() - 3 {
        0 => false,
        k if k == d => true,
        k => return Err(Error::Parse(format!("expected {d} gradient columns, found {k}"))),
    };
    let num = |s: &str| s.trim().parse::<f64>().map_err(|e| Error::Parse(format!("'{s}': {e}")));
    let mut ds = Dataset::new(d);
    for rec in r.records() {
        let rec = rec?;
        let x = (0..d).map(|j| num(&rec[j])).collect::<Result<Vec<_>>>()?;
        let mean = num(&rec[d])?;
        let reps = rec[d + 1].trim().parse::<usize>().map_err(|e| Error::Parse(e.to_string()))?;
        let noise_var = match rec[d + 2].trim() {
            "" => None,
            s => Some(num(s)?),
        };
        let grad_mean = if with_grad {
            Some((0..d).map(|j| num(&rec[d + 3 + j])).collect::<Result<Vec<_>>>()?)
        } else {
            None
        };
        ds.push(AggregatedObservation { point: DesignPoint::new(x)?, mean, reps, noise_var, grad_mean })?;
    }
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn arb_obs(d: usize) -> impl Strategy<Value = AggregatedObservation> {
        (
            prop::collection::vec(-1e6f64..1e6, d),
            any::<f64>().prop_filter("finite", |v| v.is_finite()),
            1usize..50,
            prop::option::of(0f64..1e3),
            prop::option::of(prop::collection::vec(-1e3f64..1e3, d)),
        )
            .prop_map(|(x, mean, reps, noise_var, grad_mean)| AggregatedObservation {
                point: DesignPoint::new(x).unwrap(),
                mean,
                reps,
                noise_var,
                grad_mean,
            })
    }

    proptest! {
        #[test]
        fn dataset_round_trips_bit_exactly(obs in prop::collection::vec(arb_obs(3), 1..8)) {
            let with_grad = obs.iter().all(|o| o.grad_mean.is_some());
            let obs: Vec<_> = obs.into_iter().map(|mut o| { if !with_grad { o.grad_mean = None; } o }).collect();
            let ds = Dataset::from_observations(3, obs).unwrap();
            let mut buf = Vec::new();
            write_dataset(&ds, &mut buf).unwrap();
            let back = read_dataset(buf.as_slice()).unwrap();
            prop_assert_eq!(back, ds);
        }
    }

    #[test]
    fn header_layout() {
        let mut o = AggregatedObservation::new(vec![1.0, 2.0], 3.0, 2, 0.5);
        o.grad_mean = Some(vec![0.1, 0.2]);
        let ds = Dataset::from_observations(2, vec![o]).unwrap();
        let mut buf = Vec::new();
        write_dataset(&ds, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("x_1,x_2,mean,reps,noise_var,g_1,g_2\n"));
    }
}
