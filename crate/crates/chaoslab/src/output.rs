//! File formats. Floats use Rust's shortest round-trip `Display`, so equal
//! runs give equal bytes.

use chaoslab_core::chaos::{ChaosReport, ChaosRow};
use chaoslab_core::lde::{BoundConstants, CancellationReport, EnumerationReport, MomentEstimate, PhiKind, SoundnessReport};
use chaoslab_core::meanfield::{EnergyReport, Trajectory};
use chaoslab_core::particles::ParticleEnsemble;
use chaoslab_core::DensityGrid;
use serde::Serialize;

use crate::error::{AppError, AppResult};

fn csv_bytes<F>(header: &[&str], prefix: &[String], fill: F) -> AppResult<Vec<u8>>
where
    F: FnOnce(&mut csv::Writer<&mut Vec<u8>>) -> csv::Result<()>,
{
    let mut buf = Vec::new();
    for line in prefix {
        buf.extend_from_slice(line.as_bytes());
        buf.push(b'\n');
    }
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        w.write_record(header).map_err(csv_err)?;
        fill(&mut w).map_err(csv_err)?;
        w.flush().map_err(|e| AppError::Other(e.to_string()))?;
    }
    Ok(buf)
}

fn csv_err(e: csv::Error) -> AppError {
    AppError::Other(format!("csv: {e}"))
}

fn f(x: f64) -> String {
    x.to_string()
}

pub fn phi_label(kind: PhiKind) -> &'static str {
    match kind {
        PhiKind::Phi1 => "phi1",
        PhiKind::Phi2 => "phi2",
    }
}

// ---------------------------------------------------------------------------
// Particles

/// `#`-prefixed metadata, then `replica,particle,x0[,x1]`.
pub fn snapshot_csv(snap: &ParticleEnsemble) -> AppResult<Vec<u8>> {
    let d = snap.dim();
    let prefix = vec![
        format!("# n_particles={}", snap.n_particles()),
        format!("# replicas={}", snap.replicas()),
        format!("# dim={d}"),
        format!("# t={}", snap.time()),
        format!("# step={}", snap.step_index()),
        format!("# seed={}", snap.seed()),
    ];
    let mut header = vec!["replica".to_string(), "particle".to_string()];
    header.extend((0..d).map(|a| format!("x{a}")));
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    csv_bytes(&header, &prefix, |w| {
        for r in 0..snap.replicas() {
            for (p, x) in snap.replica(r).chunks_exact(d).enumerate() {
                let mut rec = vec![r.to_string(), p.to_string()];
                rec.extend(x.iter().map(|&v| f(v)));
                w.write_record(&rec)?;
            }
        }
        Ok(())
    })
}

pub const SNAPSHOT_MAGIC: &[u8; 8] = b"CHSNAP01";

/// Binary snapshot: magic, `u32` dim, `u64` N, `u64` M, `f64` t, `u64` step,
/// `u64` seed, then `N·M·d` little-endian `f64` positions.
pub fn snapshot_binary(snap: &ParticleEnsemble) -> Vec<u8> {
    let mut buf = Vec::with_capacity(48 + 8 * snap.positions().len());
    buf.extend_from_slice(SNAPSHOT_MAGIC);
    buf.extend_from_slice(&(snap.dim() as u32).to_le_bytes());
    buf.extend_from_slice(&(snap.n_particles() as u64).to_le_bytes());
    buf.extend_from_slice(&(snap.replicas() as u64).to_le_bytes());
    buf.extend_from_slice(&snap.time().to_le_bytes());
    buf.extend_from_slice(&snap.step_index().to_le_bytes());
    buf.extend_from_slice(&snap.seed().to_le_bytes());
    for &x in snap.positions() {
        buf.extend_from_slice(&x.to_le_bytes());
    }
    buf
}

#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotData {
    pub dim: usize,
    pub n_particles: usize,
    pub replicas: usize,
    pub time: f64,
    pub step: u64,
    pub seed: u64,
    pub positions: Vec<f64>,
}

pub fn read_snapshot_binary(bytes: &[u8]) -> AppResult<SnapshotData> {
    let bad = |m: &str| AppError::Other(format!("malformed snapshot: {m}"));
    if bytes.len() < 52 || &bytes[..8] != SNAPSHOT_MAGIC {
        return Err(bad("missing CHSNAP01 header"));
    }
    let u64_at = |o: usize| u64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
    let dim = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let n_particles = u64_at(12) as usize;
    let replicas = u64_at(20) as usize;
    let time = f64::from_bits(u64_at(28));
    let step = u64_at(36);
    let seed = u64_at(44);
    let count = dim
        .checked_mul(n_particles)
        .and_then(|v| v.checked_mul(replicas))
        .ok_or_else(|| bad("size overflow"))?;
    let body = &bytes[52..];
    if body.len() != 8 * count {
        return Err(bad("body length does not match header"));
    }
    let positions = body.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    Ok(SnapshotData {
        dim,
        n_particles,
        replicas,
        time,
        step,
        seed,
        positions,
    })
}

// ---------------------------------------------------------------------------
// PDE

/// `node,x0[,x1],value`
pub fn density_csv(grid: &DensityGrid) -> AppResult<Vec<u8>> {
    let d = grid.dim();
    let mut header = vec!["node".to_string()];
    header.extend((0..d).map(|a| format!("x{a}")));
    header.push("value".into());
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    let prefix = vec![format!("# t={}", grid.time()), format!("# n={}", grid.n())];
    csv_bytes(&header, &prefix, |w| {
        for (i, &v) in grid.values().iter().enumerate() {
            let mut rec = vec![i.to_string()];
            rec.extend(grid.node_coords(i).into_iter().map(f));
            rec.push(f(v));
            w.write_record(&rec)?;
        }
        Ok(())
    })
}

#[derive(Debug, Serialize)]
pub struct PdeSummary {
    pub kernel: String,
    pub stepper: String,
    pub dt: f64,
    pub steps: u64,
    pub n: usize,
    pub dim: usize,
    pub times: Vec<f64>,
    pub mass_drift: f64,
    pub min_value: f64,
    pub max_rhs_integral: f64,
    pub picard_iterations: usize,
    pub gradient_nonincreasing: bool,
    pub envelopes_hold: [bool; 3],
}

pub fn pde_summary_json(traj: &Trajectory, energy: &EnergyReport, kernel: &str, stepper: &str) -> AppResult<Vec<u8>> {
    let g = traj.last();
    let s = PdeSummary {
        kernel: kernel.to_string(),
        stepper: stepper.to_string(),
        dt: traj.dt,
        steps: traj.steps,
        n: g.n(),
        dim: g.dim(),
        times: traj.grids.iter().map(|g| g.time()).collect(),
        mass_drift: traj.mass_drift,
        min_value: traj.min_value,
        max_rhs_integral: traj.max_rhs_integral,
        picard_iterations: traj.residuals.len(),
        gradient_nonincreasing: energy.gradient_nonincreasing,
        envelopes_hold: [energy.fits[0].holds, energy.fits[1].holds, energy.fits[2].holds],
    };
    serde_json::to_vec_pretty(&s).map_err(|e| AppError::Other(e.to_string()))
}

/// `t,l2,grad2,hess2`
pub fn energy_csv(energy: &EnergyReport) -> AppResult<Vec<u8>> {
    let prefix: Vec<String> = energy
        .fits
        .iter()
        .zip(["l2", "grad2", "hess2"])
        .map(|(fit, name)| format!("# envelope {name}: A={} B={} holds={}", fit.a, fit.b, fit.holds))
        .collect();
    csv_bytes(&["t", "l2", "grad2", "hess2"], &prefix, |w| {
        for r in &energy.rows {
            w.write_record([f(r.t), f(r.energies[0]), f(r.energies[1]), f(r.energies[2])])?;
        }
        Ok(())
    })
}

/// `iteration,residual`
pub fn picard_csv(residuals: &[f64]) -> AppResult<Vec<u8>> {
    csv_bytes(&["iteration", "residual"], &[], |w| {
        for (i, r) in residuals.iter().enumerate() {
            w.write_record([(i + 1).to_string(), f(*r)])?;
        }
        Ok(())
    })
}

// ---------------------------------------------------------------------------
// Chaos

pub const CHAOS_HEADER: [&str; 11] = ["N", "t", "H1", "H2", "L1_1", "L1_2", "ckp_1", "ckp_2", "envelope", "M", "slope"];

pub fn chaos_csv(report: &ChaosReport) -> AppResult<Vec<u8>> {
    let prefix = vec![format!("# bins={}", report.bins), format!("# min_c={}", report.min_c)];
    csv_bytes(&CHAOS_HEADER, &prefix, |w| {
        for r in &report.rows {
            w.write_record([
                r.n.to_string(),
                f(r.t),
                f(r.h1),
                f(r.h2),
                f(r.l1_1),
                f(r.l1_2),
                f(r.ckp_1),
                f(r.ckp_2),
                f(r.envelope),
                f(r.m),
                f(r.slope),
            ])?;
        }
        Ok(())
    })
}

/// Bootstrap spreads, bias estimate, minimal constant and status per row.
pub fn chaos_bootstrap_csv(report: &ChaosReport) -> AppResult<Vec<u8>> {
    let header = [
        "N", "t", "sigma_H1", "sigma_H2", "sigma_L1_1", "sigma_L1_2", "bias_1", "min_c", "ckp_holds", "status",
    ];
    csv_bytes(&header, &[], |w| {
        for r in &report.rows {
            w.write_record([
                r.n.to_string(),
                f(r.t),
                f(r.sigma_h1),
                f(r.sigma_h2),
                f(r.sigma_l1_1),
                f(r.sigma_l1_2),
                f(r.bias_1),
                f(r.min_c),
                r.ckp_holds().to_string(),
                r.status.clone(),
            ])?;
        }
        Ok(())
    })
}

/// Log-log plot of `H1` against `N` at the final time, with ±3σ bars and
/// the envelope.
pub fn chaos_svg(report: &ChaosReport) -> String {
    let rows: Vec<&ChaosRow> = report.final_rows().into_iter().filter(|r| r.ok() && r.h1 > 0.0).collect();
    let (w, h, pad) = (640.0, 420.0, 60.0);
    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
    );
    if rows.is_empty() {
        svg.push_str("<text x=\"20\" y=\"40\">no valid rows</text>\n</svg>\n");
        return svg;
    }
    let lo_y = |r: &ChaosRow| (r.h1 - 3.0 * r.sigma_h1).max(r.h1 * 0.1);
    let xs: Vec<f64> = rows.iter().map(|r| (r.n as f64).log10()).collect();
    let mut ys: Vec<f64> = rows.iter().map(|r| lo_y(r).log10()).collect();
    ys.extend(rows.iter().map(|r| (r.h1 + 3.0 * r.sigma_h1).log10()));
    ys.extend(rows.iter().filter(|r| r.envelope.is_finite() && r.envelope > 0.0).map(|r| r.envelope.log10()));
    let (x0, x1) = (xs.iter().cloned().fold(f64::INFINITY, f64::min), xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max));
    let (y0, y1) = (ys.iter().cloned().fold(f64::INFINITY, f64::min), ys.iter().cloned().fold(f64::NEG_INFINITY, f64::max));
    let sx = |x: f64| pad + (x - x0) / (x1 - x0).max(1e-9) * (w - 2.0 * pad);
    let sy = |y: f64| h - pad - (y - y0) / (y1 - y0).max(1e-9) * (h - 2.0 * pad);
    svg.push_str(&format!(
        "<line x1=\"{pad}\" y1=\"{0}\" x2=\"{1}\" y2=\"{0}\" stroke=\"black\"/>\n\
         <line x1=\"{pad}\" y1=\"{pad}\" x2=\"{pad}\" y2=\"{0}\" stroke=\"black\"/>\n\
         <text x=\"{2}\" y=\"{3}\" text-anchor=\"middle\">log10 N</text>\n\
         <text x=\"15\" y=\"{4}\" transform=\"rotate(-90 15 {4})\" text-anchor=\"middle\">log10 H1</text>\n\
         <text x=\"{2}\" y=\"30\" text-anchor=\"middle\">t = {5}, slope = {6:.3}</text>\n",
        h - pad,
        w - pad,
        w / 2.0,
        h - 15.0,
        h / 2.0,
        rows[0].t,
        report.slope
    ));
    let mut path = String::new();
    for (i, r) in rows.iter().enumerate() {
        let x = sx(xs[i]);
        let y = sy(r.h1.log10());
        let top = sy((r.h1 + 3.0 * r.sigma_h1).log10());
        let bot = sy(lo_y(r).log10());
        svg.push_str(&format!(
            "<line x1=\"{x:.2}\" y1=\"{top:.2}\" x2=\"{x:.2}\" y2=\"{bot:.2}\" stroke=\"gray\"/>\n\
             <circle cx=\"{x:.2}\" cy=\"{y:.2}\" r=\"4\" fill=\"steelblue\"/>\n"
        ));
        path.push_str(&format!("{}{x:.2},{y:.2} ", if i == 0 { "M" } else { "L" }));
    }
    svg.push_str(&format!("<path d=\"{}\" fill=\"none\" stroke=\"steelblue\"/>\n", path.trim_end()));
    let env: Vec<(f64, f64)> = rows
        .iter()
        .zip(&xs)
        .filter(|(r, _)| r.envelope.is_finite() && r.envelope > 0.0)
        .map(|(r, &x)| (sx(x), sy(r.envelope.log10())))
        .collect();
    if !env.is_empty() {
        let d: Vec<String> = env
            .iter()
            .enumerate()
            .map(|(i, (x, y))| format!("{}{x:.2},{y:.2}", if i == 0 { "M" } else { "L" }))
            .collect();
        svg.push_str(&format!(
            "<path d=\"{}\" fill=\"none\" stroke=\"firebrick\" stroke-dasharray=\"6 4\"/>\n",
            d.join(" ")
        ));
    }
    svg.push_str("</svg>\n");
    svg
}

// ---------------------------------------------------------------------------
// Exponential-moment audit

/// `field,n,probes,first_max,second_max`
pub fn cancellation_csv(reports: &[CancellationReport]) -> AppResult<Vec<u8>> {
    csv_bytes(&["field", "n", "probes", "first_max", "second_max"], &[], |w| {
        for r in reports {
            w.write_record([
                phi_label(r.kind).to_string(),
                r.n.to_string(),
                r.probes.to_string(),
                f(r.first_max),
                f(r.second_max),
            ])?;
        }
        Ok(())
    })
}

/// `B,eta,M_p_sup,M_p_sampled,alpha,beta,C`
pub fn constants_csv(c: &BoundConstants) -> AppResult<Vec<u8>> {
    let prefix = vec![
        format!("# G={}", c.g),
        format!("# H={}", c.h),
        format!("# sup_phi2_sampled={}", c.sup_sampled),
    ];
    csv_bytes(&["B", "eta", "M_p_sup", "M_p_sampled", "alpha", "beta", "C"], &prefix, |w| {
        w.write_record([f(c.b), f(c.eta), f(c.m_p_sup), f(c.m_p_sampled), f(c.alpha), f(c.beta), f(c.c_bound)])
    })
}

/// `N,samples,mean,std_err,ci_low,ci_high,max_exponent,C,within`
pub fn moments_csv(rows: &[MomentEstimate], c_bound: f64) -> AppResult<Vec<u8>> {
    let header = ["N", "samples", "mean", "std_err", "ci_low", "ci_high", "max_exponent", "C", "within"];
    csv_bytes(&header, &[], |w| {
        for r in rows {
            w.write_record([
                r.n_particles.to_string(),
                r.samples.to_string(),
                f(r.mean),
                f(r.std_err),
                f(r.ci_low),
                f(r.ci_high),
                f(r.max_exponent),
                f(c_bound),
                r.within(c_bound).to_string(),
            ])?;
        }
        Ok(())
    })
}

/// Agreement means the quadrature value lies in the bootstrap 95% interval of the Monte Carlo mean.
pub fn quadrature_agrees(quad: f64, mc: &MomentEstimate) -> bool {
    mc.ci_low <= quad && quad <= mc.ci_high
}

/// `nodes,quadrature,mc_mean,mc_std_err,ci_low,ci_high,abs_diff,agrees`
pub fn quadrature_csv(nodes: usize, quad: f64, mc: &MomentEstimate) -> AppResult<Vec<u8>> {
    let diff = (quad - mc.mean).abs();
    let header = ["nodes", "quadrature", "mc_mean", "mc_std_err", "ci_low", "ci_high", "abs_diff", "agrees"];
    csv_bytes(&header, &[], |w| {
        w.write_record([
            nodes.to_string(),
            f(quad),
            f(mc.mean),
            f(mc.std_err),
            f(mc.ci_low),
            f(mc.ci_high),
            f(diff),
            quadrature_agrees(quad, mc).to_string(),
        ])
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TermRow {
    pub n: usize,
    pub m: u32,
    pub regime: &'static str,
    pub value: f64,
    pub std_err: f64,
    pub bound: f64,
}

impl TermRow {
    pub fn holds(&self) -> bool {
        self.value <= self.bound
    }
}

/// `N,m,regime,r_m,std_err,bound,holds`
pub fn terms_csv(rows: &[TermRow]) -> AppResult<Vec<u8>> {
    csv_bytes(&["N", "m", "regime", "r_m", "std_err", "bound", "holds"], &[], |w| {
        for r in rows {
            w.write_record([
                r.n.to_string(),
                r.m.to_string(),
                r.regime.to_string(),
                f(r.value),
                f(r.std_err),
                f(r.bound),
                r.holds().to_string(),
            ])?;
        }
        Ok(())
    })
}

// ---------------------------------------------------------------------------
// Enumeration

/// `N,m,survivors,paper_bound,identity_checks_passed`
pub fn enumeration_csv(rows: &[EnumerationReport]) -> AppResult<Vec<u8>> {
    csv_bytes(&["N", "m", "survivors", "paper_bound", "identity_checks_passed"], &[], |w| {
        for r in rows {
            w.write_record([
                r.n.to_string(),
                r.m.to_string(),
                r.survivors.to_string(),
                f(r.stated_bound),
                r.identity_checks_passed.to_string(),
            ])?;
        }
        Ok(())
    })
}

/// Per-case stars-and-bars detail: `N,m,triples,s,direct,printed_formula,corrected,stars_bars_direct,stars_bars_formula`
pub fn enumeration_detail_csv(rows: &[EnumerationReport]) -> AppResult<Vec<u8>> {
    let header = [
        "N",
        "m",
        "triples",
        "s",
        "direct",
        "printed_formula",
        "corrected",
        "stars_bars_direct",
        "stars_bars_formula",
    ];
    csv_bytes(&header, &[], |w| {
        for r in rows {
            for c in &r.restricted {
                w.write_record([
                    r.n.to_string(),
                    r.m.to_string(),
                    r.triples.to_string(),
                    c.s.to_string(),
                    c.direct.to_string(),
                    c.printed_formula.to_string(),
                    c.corrected.to_string(),
                    r.stars_bars_direct.to_string(),
                    r.stars_bars_formula.to_string(),
                ])?;
            }
        }
        Ok(())
    })
}

/// `N,m,triples,rejected,rejected_nonvanishing,survivors_vanishing,max_rejected_ratio,patterns`
pub fn soundness_csv(rows: &[SoundnessReport]) -> AppResult<Vec<u8>> {
    let header = [
        "N",
        "m",
        "triples",
        "rejected",
        "rejected_nonvanishing",
        "survivors_vanishing",
        "max_rejected_ratio",
        "patterns",
    ];
    csv_bytes(&header, &[], |w| {
        for r in rows {
            w.write_record([
                r.n.to_string(),
                r.m.to_string(),
                r.triples.to_string(),
                r.rejected.to_string(),
                r.rejected_nonvanishing.to_string(),
                r.survivors_vanishing.to_string(),
                f(r.max_rejected_ratio),
                r.patterns.to_string(),
            ])?;
        }
        Ok(())
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use chaoslab_core::particles::ParticleEnsemble;

    #[test]
    fn binary_snapshot_round_trip() {
        let ens = ParticleEnsemble::from_positions(3, 2, 2, (0..12).map(|i| i as f64 / 13.0).collect(), 7).unwrap();
        let bytes = snapshot_binary(&ens);
        let back = read_snapshot_binary(&bytes).unwrap();
        assert_eq!(back.positions, ens.positions());
        assert_eq!((back.dim, back.n_particles, back.replicas, back.seed), (2, 3, 2, 7));
        assert!(read_snapshot_binary(&bytes[..bytes.len() - 1]).is_err());
    }

    #[test]
    fn snapshot_csv_has_metadata_and_header() {
        let ens = ParticleEnsemble::from_positions(2, 1, 1, vec![0.25, 0.5], 0).unwrap();
        let text = String::from_utf8(snapshot_csv(&ens).unwrap()).unwrap();
        assert!(text.starts_with("# n_particles=2\n"));
        assert!(text.contains("replica,particle,x0\n0,0,0.25\n0,1,0.5\n"));
    }
}
