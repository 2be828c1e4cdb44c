use std::fmt::Write as _;

use jacobi_krein::background::EDGE_EXCLUSION;
use jacobi_krein::io::fmt_real;
use jacobi_krein::krein::{
    alpha_expansion, perturbation_determinant, spectral_shift, tau_from_recursion, trace_report,
    trace_via_shift, TraceMethod, TraceReport,
};
use jacobi_krein::toda::{conserved_report, ConservedReport, TodaCheckpoint, TodaState};
use jacobi_krein::{Complex64, Error, Perturbation, SpectralData};
use rayon::prelude::*;
use serde::Serialize;

use crate::scenario::Scenario;

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

/// Command output plus the number of grid points that produced an error row.
pub struct Report {
    pub body: String,
    pub warnings: usize,
}

impl Report {
    fn clean(body: String) -> Self {
        Report { body, warnings: 0 }
    }
}

fn json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable");
    s.push('\n');
    s
}

fn opt_real(x: Option<f64>) -> String {
    x.map(fmt_real).unwrap_or_default()
}

#[derive(Serialize)]
struct SpectrumDoc {
    edges: Vec<f64>,
    genus: usize,
    dirichlet: Vec<f64>,
    bands: Vec<(f64, f64)>,
    eigenvalues: Vec<f64>,
    a_total: f64,
    b_total: f64,
}

pub fn spectrum(s: &Scenario, format: Format) -> Result<Report, Error> {
    let p = s.perturbation()?;
    let sd = p.background().band_edges()?;
    let asym = p.alpha_asymptotics();
    let doc = SpectrumDoc {
        eigenvalues: p.eigenvalues_with(&sd)?,
        bands: sd.bands(),
        edges: sd.edges,
        genus: sd.genus,
        dirichlet: sd.dirichlet,
        a_total: asym.a_total(),
        b_total: asym.b_total(),
    };
    Ok(Report::clean(match format {
        Format::Json => json(&doc),
        Format::Csv => {
            let mut out = String::from("kind,value\n");
            for (kind, values) in [
                ("edge", &doc.edges),
                ("dirichlet", &doc.dirichlet),
                ("eigenvalue", &doc.eigenvalues),
            ] {
                for v in values {
                    writeln!(out, "{kind},{}", fmt_real(*v)).unwrap();
                }
            }
            writeln!(out, "a_total,{}", fmt_real(doc.a_total)).unwrap();
            writeln!(out, "b_total,{}", fmt_real(doc.b_total)).unwrap();
            out
        }
    }))
}

#[derive(Serialize)]
struct AlphaRow {
    z: [f64; 2],
    alpha: Option<[f64; 2]>,
    det: Option<[f64; 2]>,
    rel_gap: Option<f64>,
    error: Option<&'static str>,
}

fn pair(z: Complex64) -> [f64; 2] {
    [z.re, z.im]
}

/// Error kind for points inside the band-edge exclusion zone, if any.
fn excluded(sd: &SpectralData, z: Complex64) -> Option<&'static str> {
    (sd.edge_distance(z) < EDGE_EXCLUSION).then_some("BandEdgeExclusion")
}

fn alpha_row(p: &Perturbation, sd: &SpectralData, z: Complex64) -> AlphaRow {
    let failed = |kind| AlphaRow {
        z: pair(z),
        alpha: None,
        det: None,
        rel_gap: None,
        error: Some(kind),
    };
    if let Some(kind) = excluded(sd, z) {
        return failed(kind);
    }
    let a_total = p.alpha_asymptotics().a_total();
    match (p.alpha(z), perturbation_determinant(p, z)) {
        (Ok(alpha), Ok(det)) => AlphaRow {
            z: pair(z),
            alpha: Some(pair(alpha)),
            det: Some(pair(det)),
            rel_gap: Some((a_total * alpha - det).norm() / det.norm()),
            error: None,
        },
        (Err(e), _) | (_, Err(e)) => failed(e.kind()),
    }
}

pub fn alpha(s: &Scenario, format: Format) -> Result<Report, Error> {
    let p = s.perturbation()?;
    let sd = p.background().band_edges()?;
    let rows: Vec<AlphaRow> = s.z().par_iter().map(|&z| alpha_row(&p, &sd, z)).collect();
    let warnings = rows.iter().filter(|r| r.error.is_some()).count();
    let body = match format {
        Format::Json => json(&rows),
        Format::Csv => {
            let mut out = String::from("re_z,im_z,re_alpha,im_alpha,re_det,im_det,rel_gap,error\n");
            for r in &rows {
                writeln!(
                    out,
                    "{},{},{},{},{},{},{},{}",
                    fmt_real(r.z[0]),
                    fmt_real(r.z[1]),
                    opt_real(r.alpha.map(|a| a[0])),
                    opt_real(r.alpha.map(|a| a[1])),
                    opt_real(r.det.map(|a| a[0])),
                    opt_real(r.det.map(|a| a[1])),
                    opt_real(r.rel_gap),
                    r.error.unwrap_or_default()
                )
                .unwrap();
            }
            out
        }
    };
    Ok(Report { body, warnings })
}

#[derive(Serialize)]
struct DetRow {
    z: [f64; 2],
    det: Option<[f64; 2]>,
    error: Option<&'static str>,
}

pub fn det(s: &Scenario, format: Format) -> Result<Report, Error> {
    let p = s.perturbation()?;
    let sd = p.background().band_edges()?;
    let rows: Vec<DetRow> = s
        .z()
        .par_iter()
        .map(|&z| {
            let result = match excluded(&sd, z) {
                Some(kind) => Err(kind),
                None => perturbation_determinant(&p, z).map_err(|e| e.kind()),
            };
            DetRow {
                z: pair(z),
                det: result.ok().map(pair),
                error: result.err(),
            }
        })
        .collect();
    let warnings = rows.iter().filter(|r| r.error.is_some()).count();
    let body = match format {
        Format::Json => json(&rows),
        Format::Csv => {
            let mut out = String::from("re_z,im_z,re_det,im_det,error\n");
            for r in &rows {
                writeln!(
                    out,
                    "{},{},{},{},{}",
                    fmt_real(r.z[0]),
                    fmt_real(r.z[1]),
                    opt_real(r.det.map(|a| a[0])),
                    opt_real(r.det.map(|a| a[1])),
                    r.error.unwrap_or_default()
                )
                .unwrap();
            }
            out
        }
    };
    Ok(Report { body, warnings })
}

pub fn shift(s: &Scenario, format: Format) -> Result<Report, Error> {
    let profile = spectral_shift(&s.perturbation()?, &s.shift)?;
    Ok(Report::clean(match format {
        Format::Json => json(&profile),
        Format::Csv => {
            let mut buf = Vec::new();
            profile.write_csv(&mut buf).expect("writing to memory");
            String::from_utf8(buf).expect("ascii csv")
        }
    }))
}

#[derive(Serialize)]
struct TraceTriple {
    direct: TraceReport,
    moment: TraceReport,
    recursion: TraceReport,
}

pub fn traces(s: &Scenario, format: Format) -> Result<Report, Error> {
    let p = s.perturbation()?;
    let order = s.traces.order;
    let direct = trace_report(&p, TraceMethod::Direct, order)?;
    let recursion = TraceReport {
        method: TraceMethod::Recursion,
        taus: tau_from_recursion(&alpha_expansion(&p, order, s.traces.radius)?),
    };
    let profile = spectral_shift(&p, &s.shift)?;
    let moment = TraceReport {
        method: TraceMethod::Moment,
        taus: (1..=order)
            .map(|j| trace_via_shift(&profile, j))
            .collect::<Result<_, _>>()?,
    };
    let triple = TraceTriple {
        direct,
        moment,
        recursion,
    };
    Ok(Report::clean(match format {
        Format::Json => json(&triple),
        Format::Csv => {
            let mut out = String::from("j,direct,moment,recursion\n");
            for j in 0..order {
                writeln!(
                    out,
                    "{},{},{},{}",
                    j + 1,
                    fmt_real(triple.direct.taus[j]),
                    fmt_real(triple.moment.taus[j]),
                    fmt_real(triple.recursion.taus[j])
                )
                .unwrap();
            }
            out
        }
    }))
}

#[derive(Serialize)]
struct EvolveDoc<'a> {
    report: &'a ConservedReport,
    relative_drift: Vec<f64>,
    checkpoint: Option<TodaCheckpoint>,
}

pub fn evolve(s: &Scenario, format: Format) -> Result<Report, Error> {
    let task = &s.toda;
    let state = TodaState::new(s.perturbation()?);
    let report = conserved_report(&state, &task.times, task.order, task.dt, &task.config)?;
    Ok(Report::clean(match format {
        Format::Json => json(&EvolveDoc {
            relative_drift: report.relative_drift(),
            checkpoint: report.final_state.as_ref().map(TodaState::to_checkpoint),
            report: &report,
        }),
        Format::Csv => {
            let mut buf = Vec::new();
            report.write_csv(&mut buf).expect("writing to memory");
            String::from_utf8(buf).expect("ascii csv")
        }
    }))
}
