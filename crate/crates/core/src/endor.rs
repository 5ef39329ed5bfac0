//! Population-level electrically detected ENDOR: selective ionization on
//! one hyperfine line, rf transfer between the ionized donor's nuclear
//! levels, recombination, and readout. Spectra are synthesized by sweeping
//! the rf and averaging over a distribution of quadrupole couplings.

use serde::{Deserialize, Serialize};

use crate::constants::{G_E_ARSENIC, HYPERFINE_ARSENIC, MU_B_OVER_H};
use crate::dynamics::excitation_profile;
use crate::error::{Error, Result};
use crate::spin::{axial_hamiltonian, Projection, Spin, TransitionTable};

/// Minimum number of nodes used to integrate over the coupling distribution.
pub const MIN_BROADENING_NODES: usize = 32;
pub const MAX_BROADENING_NODES: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EndorConfig {
    pub ionize: Projection,
    /// Defaults to the ionization target.
    pub read: Projection,
    /// s
    pub t_antiparallel: f64,
    /// s
    pub t_parallel: f64,
    pub ionization_efficiency: f64,
    /// Hz
    pub rf_start: f64,
    /// Hz
    pub rf_stop: f64,
    /// s
    pub rf_duration: f64,
}

impl EndorConfig {
    pub fn new(ionize: Projection, rf_start: f64, rf_stop: f64, rf_duration: f64) -> Self {
        EndorConfig {
            ionize,
            read: ionize,
            t_antiparallel: 5e-6,
            t_parallel: 6e-4,
            ionization_efficiency: 1.0,
            rf_start,
            rf_stop,
            rf_duration,
        }
    }

    pub fn validate(&self, spin: Spin) -> Result<()> {
        for (what, m) in [("ionization", self.ionize), ("read", self.read)] {
            if spin.index_of(m).is_none() {
                return Err(Error::InvalidInput(format!("{what} target m = {m} not in spin {spin}")));
            }
        }
        if !(0.0..=1.0).contains(&self.ionization_efficiency) {
            return Err(Error::InvalidInput("ionization efficiency outside [0, 1]".into()));
        }
        if !(self.rf_duration > 0.0) {
            return Err(Error::InvalidInput("rf pulse duration must be positive".into()));
        }
        if !(self.rf_start < self.rf_stop) {
            return Err(Error::InvalidInput("rf sweep must satisfy start < stop".into()));
        }
        if !(self.t_antiparallel > 0.0 && self.t_parallel > 0.0) {
            return Err(Error::InvalidInput("recombination times must be positive".into()));
        }
        Ok(())
    }
}

/// Nuclear populations in the neutral and ionized pools, indexed `m = I … −I`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopulationVector {
    pub neutral: Vec<f64>,
    pub ionized: Vec<f64>,
}

impl PopulationVector {
    /// Unpolarized neutral donors.
    pub fn thermal(spin: Spin) -> Self {
        let d = spin.dim();
        PopulationVector {
            neutral: vec![1.0 / d as f64; d],
            ionized: vec![0.0; d],
        }
    }

    pub fn new(neutral: Vec<f64>, ionized: Vec<f64>) -> Result<Self> {
        let pop = PopulationVector { neutral, ionized };
        if pop.neutral.len() != pop.ionized.len() {
            return Err(Error::InvalidInput("pools differ in dimension".into()));
        }
        if pop.neutral.iter().chain(&pop.ionized).any(|&p| !(p >= 0.0)) {
            return Err(Error::InvalidInput("populations must be non-negative".into()));
        }
        if (pop.total() - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidInput(format!("populations sum to {}", pop.total())));
        }
        Ok(pop)
    }

    pub fn total(&self) -> f64 {
        self.neutral.iter().chain(&self.ionized).sum()
    }
}

/// One shot of the protocol at rf frequency `rf`.
///
/// Order: selective ionization of `cfg.ionize`, rf transfer inside the
/// ionized pool (transitions taken by descending `m_hi`), ionization of the
/// remaining neutral donors, reset to the neutral pool keeping `m`.
pub fn run_endor_step(pop: &PopulationVector, cfg: &EndorConfig, rf: f64, table: &TransitionTable) -> PopulationVector {
    let spin = table.spin;
    let mut neutral = pop.neutral.clone();
    let mut ionized = pop.ionized.clone();

    if let Some(t) = spin.index_of(cfg.ionize) {
        let moved = neutral[t] * cfg.ionization_efficiency;
        neutral[t] -= moved;
        ionized[t] += moved;
    }

    for tr in &table.transitions {
        let p = excitation_profile(cfg.rf_duration, rf - tr.frequency);
        if p == 0.0 {
            continue;
        }
        let hi = spin.index_of(tr.m_hi).expect("table transition");
        let lo = hi + 1;
        let (a, b) = (ionized[hi], ionized[lo]);
        ionized[hi] = a + p * (b - a);
        ionized[lo] = b + p * (a - b);
    }

    for (n, i) in neutral.iter_mut().zip(ionized.iter_mut()) {
        *i += *n;
        *n = 0.0;
    }
    PopulationVector {
        neutral: ionized,
        ionized: neutral,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BroadeningShape {
    Gaussian,
    OneSidedExponential,
}

/// Distribution of the quadrupole coupling around its nominal value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BroadeningModel {
    /// Hz
    pub spread: f64,
    /// In `[−1, 1]`; for the Gaussian the two half-widths are
    /// `spread·(1 ∓ asymmetry)`, for the exponential its sign sets the tail
    /// direction.
    pub asymmetry: f64,
    pub shape: BroadeningShape,
    pub nodes: usize,
}

impl Default for BroadeningModel {
    fn default() -> Self {
        BroadeningModel::none()
    }
}

impl BroadeningModel {
    pub fn none() -> Self {
        BroadeningModel {
            spread: 0.0,
            asymmetry: 0.0,
            shape: BroadeningShape::Gaussian,
            nodes: 64,
        }
    }

    pub fn gaussian(spread: f64, asymmetry: f64) -> Self {
        BroadeningModel {
            spread,
            asymmetry,
            ..Self::none()
        }
    }

    pub fn one_sided(spread: f64, direction: f64) -> Self {
        BroadeningModel {
            spread,
            asymmetry: direction.signum(),
            shape: BroadeningShape::OneSidedExponential,
            nodes: 64,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.spread >= 0.0) || !self.spread.is_finite() {
            return Err(Error::InvalidInput("broadening spread must be ≥ 0".into()));
        }
        if !(-1.0..=1.0).contains(&self.asymmetry) {
            return Err(Error::InvalidInput("asymmetry outside [−1, 1]".into()));
        }
        Ok(())
    }

    /// `(offset Hz, weight)` pairs with weights summing to one.
    pub fn quadrature(&self) -> Vec<(f64, f64)> {
        self.quadrature_resolved(f64::INFINITY)
    }

    /// As [`quadrature`](Self::quadrature), with node spacing no coarser
    /// than `max_step` Hz (capped at [`MAX_BROADENING_NODES`]).
    pub fn quadrature_resolved(&self, max_step: f64) -> Vec<(f64, f64)> {
        if self.spread == 0.0 {
            return vec![(0.0, 1.0)];
        }
        let span = 8.0 * self.spread * (1.0 + self.asymmetry.abs());
        let needed = (span / max_step).ceil();
        let needed = if needed.is_finite() { needed as usize } else { 0 };
        let n = self.nodes.max(MIN_BROADENING_NODES).max(needed).min(MAX_BROADENING_NODES);
        let mut nodes = Vec::with_capacity(n);
        match self.shape {
            BroadeningShape::Gaussian => {
                let sides = [(-1.0, self.spread * (1.0 - self.asymmetry)), (1.0, self.spread * (1.0 + self.asymmetry))];
                let total_width: f64 = sides.iter().map(|s| s.1).sum();
                for (sign, sigma) in sides {
                    if sigma == 0.0 {
                        continue;
                    }
                    let per_side = n / 2;
                    let dx = 4.0 * sigma / per_side as f64;
                    for k in 0..per_side {
                        let x = (k as f64 + 0.5) * dx;
                        let w = (-0.5 * (x / sigma).powi(2)).exp() * dx / total_width;
                        nodes.push((sign * x, w));
                    }
                }
            }
            BroadeningShape::OneSidedExponential => {
                let sign = if self.asymmetry < 0.0 { -1.0 } else { 1.0 };
                let dx = 8.0 * self.spread / n as f64;
                for k in 0..n {
                    let x = (k as f64 + 0.5) * dx;
                    nodes.push((sign * x, (-x / self.spread).exp() * dx));
                }
            }
        }
        let total: f64 = nodes.iter().map(|n| n.1).sum();
        nodes.iter_mut().for_each(|n| n.1 /= total);
        nodes
    }
}

/// Static inputs of a synthesized spectrum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectrumSetup {
    pub spin: Spin,
    /// Hz
    pub f0: f64,
    /// Hz
    pub f_q: f64,
    /// Angle between the coupling axis and the field, rad.
    pub theta: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SpectrumMetadata {
    pub ionize: Option<f64>,
    pub b0: Option<f64>,
    pub strain: Option<String>,
    pub broadening: Option<BroadeningModel>,
    pub warnings: Vec<String>,
}

/// Baseline-normalized ENDOR signal against rf frequency.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spectrum {
    pub frequency: Vec<f64>,
    pub signal: Vec<f64>,
    pub metadata: SpectrumMetadata,
}

impl Spectrum {
    pub fn new(frequency: Vec<f64>, signal: Vec<f64>, metadata: SpectrumMetadata) -> Result<Self> {
        if frequency.len() != signal.len() {
            return Err(Error::InvalidInput("frequency and signal lengths differ".into()));
        }
        if frequency.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidInput("frequencies must be strictly increasing".into()));
        }
        if signal.iter().any(|s| !s.is_finite()) {
            return Err(Error::InvalidInput("non-finite signal".into()));
        }
        Ok(Spectrum {
            frequency,
            signal,
            metadata,
        })
    }

    pub fn len(&self) -> usize {
        self.frequency.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frequency.is_empty()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("frequency_Hz,signal\n");
        for (f, s) in self.frequency.iter().zip(&self.signal) {
            out.push_str(&format!("{f},{s}\n"));
        }
        out
    }

    /// Reads the `frequency_Hz,signal` schema; blank lines and `#` comments
    /// are skipped.
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#'));
        let header = lines.next().ok_or_else(|| Error::InvalidInput("empty spectrum file".into()))?;
        let cols: Vec<&str> = header.split(',').map(str::trim).collect();
        if cols != ["frequency_Hz", "signal"] {
            return Err(Error::InvalidInput(format!("unexpected header `{header}`")));
        }
        let (mut f, mut s) = (Vec::new(), Vec::new());
        for (k, line) in lines.enumerate() {
            let parse = |v: Option<&str>| {
                v.and_then(|v| v.trim().parse::<f64>().ok())
                    .ok_or_else(|| Error::InvalidInput(format!("bad row {}: `{line}`", k + 2)))
            };
            let mut parts = line.split(',');
            f.push(parse(parts.next())?);
            s.push(parse(parts.next())?);
            if parts.next().is_some() {
                return Err(Error::InvalidInput(format!("bad row {}: `{line}`", k + 2)));
            }
        }
        Spectrum::new(f, s, SpectrumMetadata::default())
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "metadata": self.metadata,
            "frequency_Hz": self.frequency,
            "signal": self.signal,
        })
    }

    pub fn from_json(value: &serde_json::Value) -> Result<Self> {
        let column = |key: &str| -> Result<Vec<f64>> {
            serde_json::from_value(value.get(key).cloned().unwrap_or_default())
                .map_err(|e| Error::InvalidInput(format!("`{key}`: {e}")))
        };
        let metadata = match value.get("metadata") {
            Some(m) => serde_json::from_value(m.clone()).map_err(|e| Error::InvalidInput(format!("metadata: {e}")))?,
            None => SpectrumMetadata::default(),
        };
        Spectrum::new(column("frequency_Hz")?, column("signal")?, metadata)
    }
}

fn sweep_grid(cfg: &EndorConfig, n_points: usize) -> Vec<f64> {
    let step = (cfg.rf_stop - cfg.rf_start) / (n_points - 1) as f64;
    (0..n_points).map(|k| cfg.rf_start + step * k as f64).collect()
}

/// Sweeps the rf over `cfg`'s range, averaging the protocol over the
/// broadened coupling distribution.
pub fn synthesize_spectrum(
    cfg: &EndorConfig,
    setup: &SpectrumSetup,
    broadening: &BroadeningModel,
    n_points: usize,
) -> Result<Spectrum> {
    cfg.validate(setup.spin)?;
    broadening.validate()?;
    if n_points < 10 {
        return Err(Error::InvalidInput(format!("{n_points} points, need at least 10")));
    }
    // Keep the line sampled at a quarter of the pulse-limited width; lines
    // move by at most ~f_Q/2 per unit of coupling for I = 3/2.
    let tables: Vec<(TransitionTable, f64)> = broadening
        .quadrature_resolved(0.4 / cfg.rf_duration)
        .into_iter()
        .map(|(offset, w)| (axial_hamiltonian(setup.spin, setup.f0, setup.f_q + offset, setup.theta).transitions(), w))
        .collect();

    let start = PopulationVector::thermal(setup.spin);
    let read = setup.spin.index_of(cfg.read).expect("validated");
    let baseline = start.neutral[read];
    let frequency = sweep_grid(cfg, n_points);
    let signal = frequency
        .iter()
        .map(|&rf| {
            tables
                .iter()
                .map(|(table, w)| w * run_endor_step(&start, cfg, rf, table).neutral[read])
                .sum::<f64>()
                / baseline
        })
        .collect();

    let mut metadata = SpectrumMetadata {
        ionize: Some(cfg.ionize.value()),
        broadening: Some(*broadening),
        ..Default::default()
    };
    let margin = 2.0 / cfg.rf_duration;
    let covered = tables.iter().any(|(t, _)| {
        t.transitions
            .iter()
            .any(|tr| tr.frequency > cfg.rf_start - margin && tr.frequency < cfg.rf_stop + margin)
    });
    if !covered {
        metadata
            .warnings
            .push("sweep range does not cover any transition; spectrum is flat".into());
    }
    Spectrum::new(frequency, signal, metadata)
}

/// One spectrum per ionization target, `m = I … −I`.
pub fn synthesize_all_targets(
    cfg: &EndorConfig,
    setup: &SpectrumSetup,
    broadening: &BroadeningModel,
    n_points: usize,
) -> Result<Vec<Spectrum>> {
    setup
        .spin
        .projections()
        .map(|m| {
            let c = EndorConfig {
                ionize: m,
                read: m,
                ..*cfg
            };
            synthesize_spectrum(&c, setup, broadening, n_points)
        })
        .collect()
}

/// A detected dip.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Peak {
    /// Hz
    pub center: f64,
    /// `1 − signal` at the refined minimum.
    pub depth: f64,
    /// Full width at half depth, Hz.
    pub width: f64,
    /// Set when another dip lies closer than this dip's width.
    pub multiplet: bool,
}

/// Dips shallower than this fraction of the deepest one are ignored. A
/// square-pulse side lobe is ~0.11 of the main lobe, and ~0.22 when the read
/// level takes part in two chained transfers.
pub const PEAK_RELATIVE_THRESHOLD: f64 = 0.3;
/// Spectra whose deepest dip is shallower than this are treated as flat.
pub const PEAK_ABSOLUTE_THRESHOLD: f64 = 1e-3;

/// Local minima with parabolic sub-bin refinement and half-depth widths.
pub fn peak_positions(spec: &Spectrum) -> Vec<Peak> {
    let n = spec.len();
    if n < 3 {
        return Vec::new();
    }
    let depth: Vec<f64> = spec.signal.iter().map(|s| 1.0 - s).collect();
    let max_depth = depth.iter().copied().fold(f64::MIN, f64::max);
    if max_depth < PEAK_ABSOLUTE_THRESHOLD {
        return Vec::new();
    }
    let threshold = PEAK_RELATIVE_THRESHOLD * max_depth;
    let f = &spec.frequency;
    let mut peaks = Vec::new();
    let mut i = 1;
    while i + 1 < n {
        // Plateaus count once, at their centre.
        let mut j = i;
        while j + 1 < n && depth[j + 1] == depth[i] {
            j += 1;
        }
        let is_min = j + 1 < n && depth[i] > depth[i - 1] && depth[i] > depth[j + 1];
        if is_min && depth[i] >= threshold {
            let c = (i + j) / 2;
            let (center, peak_depth) = if i == j {
                let (ym, y0, yp) = (depth[c - 1], depth[c], depth[c + 1]);
                let curvature = ym - 2.0 * y0 + yp;
                let offset = if curvature != 0.0 { 0.5 * (ym - yp) / curvature } else { 0.0 };
                let offset = offset.clamp(-0.5, 0.5);
                let spacing = if offset >= 0.0 { f[c + 1] - f[c] } else { f[c] - f[c - 1] };
                (f[c] + offset * spacing, y0 - 0.25 * (ym - yp) * offset)
            } else {
                (0.5 * (f[i] + f[j]), depth[i])
            };
            let half = 0.5 * peak_depth;
            let mut l = i;
            while l > 0 && depth[l] > half {
                l -= 1;
            }
            let left = if depth[l] > half {
                f[0]
            } else {
                f[l] + (half - depth[l]) / (depth[l + 1] - depth[l]) * (f[l + 1] - f[l])
            };
            let mut r = j;
            while r + 1 < n && depth[r] > half {
                r += 1;
            }
            let right = if depth[r] > half {
                f[n - 1]
            } else {
                f[r] - (half - depth[r]) / (depth[r - 1] - depth[r]) * (f[r] - f[r - 1])
            };
            // A flat-topped dip fools the three-point parabola; when the dip is
            // symmetric to within a bin, its half-depth midpoint is the better centre.
            let mid = 0.5 * (left + right);
            let bin = f[c + 1] - f[c];
            let center = if (mid - center).abs() < bin { mid } else { center };
            peaks.push(Peak {
                center,
                depth: peak_depth,
                width: right - left,
                multiplet: false,
            });
        }
        i = j + 1;
    }
    for k in 1..peaks.len() {
        let gap = peaks[k].center - peaks[k - 1].center;
        if gap < peaks[k].width.max(peaks[k - 1].width) {
            peaks[k].multiplet = true;
            peaks[k - 1].multiplet = true;
        }
    }
    peaks
}

/// Resonance fields of the `2I+1` hyperfine-split EDMR lines around
/// `center_field` (T), as `(m_I, B)` pairs.
pub fn edmr_line_fields(spin: Spin, center_field: f64, hyperfine: f64, g_e: f64) -> Vec<(Projection, f64)> {
    let per_tesla = g_e * MU_B_OVER_H;
    spin.projections()
        .map(|m| (m, center_field - m.value() * hyperfine / per_tesla))
        .collect()
}

/// [`edmr_line_fields`] with the arsenic hyperfine constant and g-factor.
pub fn arsenic_line_fields(center_field: f64) -> Vec<(Projection, f64)> {
    edmr_line_fields(Spin::THREE_HALVES, center_field, HYPERFINE_ARSENIC, G_E_ARSENIC)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spin::second_order_shift;
    use proptest::prelude::*;

    const F0: f64 = 2.55e6;
    const SPIN: Spin = Spin::THREE_HALVES;

    fn setup(f_q: f64, theta: f64) -> SpectrumSetup {
        SpectrumSetup {
            spin: SPIN,
            f0: F0,
            f_q,
            theta,
        }
    }

    fn table(f_q: f64) -> TransitionTable {
        axial_hamiltonian(SPIN, F0, f_q, 0.0).transitions()
    }

    #[test]
    fn far_off_resonance_is_baseline() {
        let cfg = EndorConfig::new(Projection(3), 2.0e6, 3.0e6, 400e-6);
        let pop = PopulationVector::thermal(SPIN);
        let out = run_endor_step(&pop, &cfg, 1.0e6, &table(255e3));
        for (a, b) in out.neutral.iter().zip(&pop.neutral) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn on_resonance_pi_transfer_empties_read_level() {
        let t = table(255e3);
        let cfg = EndorConfig::new(Projection(3), 2.0e6, 3.0e6, 400e-6);
        let rf = t.get(Projection(3)).unwrap().frequency;
        let out = run_endor_step(&PopulationVector::thermal(SPIN), &cfg, rf, &t);
        // the other lines sit 127.5 kHz away, where the sinc tail is ~1e-4
        assert!(out.neutral[0] < 1e-12);
        assert!((out.neutral[1] - 0.5).abs() < 1e-3);
    }

    #[test]
    fn middle_target_sees_two_transitions() {
        let t = table(255e3);
        let cfg = EndorConfig::new(Projection(1), 2.0e6, 3.0e6, 400e-6);
        let pop = PopulationVector::thermal(SPIN);
        for m_hi in [Projection(3), Projection(1)] {
            let rf = t.get(m_hi).unwrap().frequency;
            assert!(run_endor_step(&pop, &cfg, rf, &t).neutral[1] < 1e-3);
        }
        let rf = t.get(Projection(-1)).unwrap().frequency;
        assert!((run_endor_step(&pop, &cfg, rf, &t).neutral[1] - 0.25).abs() < 1e-3);
    }

    #[test]
    fn population_validation() {
        assert!(PopulationVector::new(vec![0.5, 0.5], vec![0.0, 0.0]).is_ok());
        assert!(PopulationVector::new(vec![0.5, 0.6], vec![0.0, 0.0]).is_err());
        assert!(PopulationVector::new(vec![1.5, -0.5], vec![0.0, 0.0]).is_err());
    }

    #[test]
    fn unstrained_spectra_single_dip_at_f0() {
        let cfg = EndorConfig::new(Projection(3), F0 - 20e3, F0 + 20e3, 400e-6);
        let spectra = synthesize_all_targets(&cfg, &setup(0.0, 0.0), &BroadeningModel::none(), 801).unwrap();
        assert_eq!(spectra.len(), 4);
        let widths: Vec<f64> = spectra
            .iter()
            .map(|s| {
                let peaks = peak_positions(s);
                assert_eq!(peaks.len(), 1, "{peaks:?}");
                assert!((peaks[0].center - F0).abs() < 5.0);
                peaks[0].width
            })
            .collect();
        // outer targets see one transfer (FWHM ≈ 0.8/T); inner targets chain two
        for w in [widths[0], widths[3]] {
            assert!((w - 0.799 / 400e-6).abs() < 0.05e3, "{widths:?}");
        }
        for w in [widths[1], widths[2]] {
            assert!(w > widths[0] && w < 1.5 * widths[0], "{widths:?}");
        }
        let long = EndorConfig::new(Projection(3), F0 - 5e3, F0 + 5e3, 800e-6);
        let s = synthesize_spectrum(&long, &setup(0.0, 0.0), &BroadeningModel::none(), 801).unwrap();
        assert!((peak_positions(&s)[0].width - widths[0] / 2.0).abs() < 0.03 * widths[0]);
    }

    #[test]
    fn strained_spectra_show_three_lines() {
        let cfg = EndorConfig::new(Projection(3), F0 - 200e3, F0 + 200e3, 400e-6);
        let spectra = synthesize_all_targets(&cfg, &setup(255e3, 0.0), &BroadeningModel::none(), 4001).unwrap();
        let mut centers: Vec<f64> = spectra.iter().flat_map(|s| peak_positions(s).into_iter().map(|p| p.center)).collect();
        centers.sort_by(f64::total_cmp);
        centers.dedup_by(|a, b| (*a - *b).abs() < 1e3);
        assert_eq!(centers.len(), 3, "{centers:?}");
        let expect = [F0 - 127.5e3, F0, F0 + 127.5e3];
        for (c, e) in centers.iter().zip(expect) {
            assert!((c - e).abs() < 100.0, "{c} vs {e}");
        }
    }

    #[test]
    fn second_order_inner_shift_resolved_with_long_pulse() {
        let theta = std::f64::consts::FRAC_PI_2;
        let shift = second_order_shift(SPIN, 255e3, F0, theta, Projection(1));
        let cfg = EndorConfig::new(Projection(1), F0 - 3e3, F0 + 3e3, 6e-3);
        let center = |f_q| {
            let s = synthesize_spectrum(&cfg, &setup(f_q, theta), &BroadeningModel::none(), 1201).unwrap();
            let peaks = peak_positions(&s);
            peaks.iter().min_by(|a, b| (a.center - F0).abs().total_cmp(&(b.center - F0).abs())).copied().unwrap()
        };
        let (plain, strained) = (center(0.0), center(255e3));
        let moved = strained.center - plain.center;
        assert!((moved - shift).abs() < 0.05 * shift.abs(), "{moved} vs {shift}");
        assert!(moved.abs() > 5.0 * strained.width);
    }

    #[test]
    fn flat_spectrum_warns() {
        let cfg = EndorConfig::new(Projection(3), 1.0e6, 1.1e6, 400e-6);
        let s = synthesize_spectrum(&cfg, &setup(0.0, 0.0), &BroadeningModel::none(), 50).unwrap();
        assert!(!s.metadata.warnings.is_empty());
        assert!(s.signal.iter().all(|&v| (v - 1.0).abs() < 1e-5));
        assert!(peak_positions(&s).is_empty());
        assert!(synthesize_spectrum(&cfg, &setup(0.0, 0.0), &BroadeningModel::none(), 5).is_err());
    }

    fn synthetic_dips(centers: &[f64], width: f64, grid: &[f64]) -> Spectrum {
        let sigma = width / 2.354_820_045;
        let signal = grid
            .iter()
            .map(|f| 1.0 - centers.iter().map(|c| 0.8 * (-0.5 * ((f - c) / sigma).powi(2)).exp()).sum::<f64>())
            .collect();
        Spectrum::new(grid.to_vec(), signal, SpectrumMetadata::default()).unwrap()
    }

    #[test]
    fn peak_centre_within_tenth_of_a_bin() {
        let bin = 100.0;
        let grid: Vec<f64> = (0..401).map(|k| 2.53e6 + k as f64 * bin).collect();
        for offset in [0.0, 13.0, 37.0, 50.0, 81.0] {
            let c = 2.55e6 + offset;
            let peaks = peak_positions(&synthetic_dips(&[c], 2e3, &grid));
            assert_eq!(peaks.len(), 1);
            assert!((peaks[0].center - c).abs() < 0.1 * bin, "{} vs {c}", peaks[0].center);
            assert!((peaks[0].width - 2e3).abs() < 0.05 * 2e3);
        }
    }

    #[test]
    fn resolved_and_overlapping_pairs() {
        let grid: Vec<f64> = (0..801).map(|k| 2.53e6 + k as f64 * 50.0).collect();
        let resolved = peak_positions(&synthetic_dips(&[2.545e6, 2.551e6], 2e3, &grid));
        assert_eq!(resolved.len(), 2);
        assert!(resolved.iter().all(|p| !p.multiplet));
        assert!((resolved[0].center - 2.545e6).abs() < 10.0 && (resolved[1].center - 2.551e6).abs() < 10.0);
        // 0.95 widths apart: still two minima, but each half-depth span covers both
        let close = peak_positions(&synthetic_dips(&[2.5500e6, 2.55095e6], 1.0e3, &grid));
        assert_eq!(close.len(), 2);
        assert!(close.iter().all(|p| p.multiplet));
    }

    #[test]
    fn csv_and_json_round_trip() {
        let cfg = EndorConfig::new(Projection(3), F0 - 5e3, F0 + 5e3, 400e-6);
        let s = synthesize_spectrum(&cfg, &setup(0.0, 0.0), &BroadeningModel::gaussian(1e3, 0.2), 40).unwrap();
        let csv = s.to_csv();
        assert!(csv.starts_with("frequency_Hz,signal\n"));
        let back = Spectrum::from_csv(&csv).unwrap();
        assert_eq!(back.frequency, s.frequency);
        assert_eq!(back.signal, s.signal);
        let json = Spectrum::from_json(&s.to_json()).unwrap();
        assert_eq!(json, s);
        assert!(Spectrum::from_csv("f,s\n1,2\n").is_err());
        assert!(Spectrum::from_csv("frequency_Hz,signal\n2,1\n1,1\n").is_err());
    }

    #[test]
    fn broadening_quadrature() {
        assert_eq!(BroadeningModel::none().quadrature(), vec![(0.0, 1.0)]);
        let g = BroadeningModel::gaussian(10e3, 0.0).quadrature();
        assert!(g.len() >= MIN_BROADENING_NODES);
        let mean: f64 = g.iter().map(|(x, w)| x * w).sum();
        let var: f64 = g.iter().map(|(x, w)| x * x * w).sum();
        assert!(mean.abs() < 1e-6);
        assert!((var.sqrt() / 10e3 - 1.0).abs() < 0.02);
        let e = BroadeningModel::one_sided(10e3, -1.0).quadrature();
        assert!(e.iter().all(|n| n.0 < 0.0));
        let mean: f64 = e.iter().map(|(x, w)| x * w).sum();
        assert!((mean / -10e3 - 1.0).abs() < 0.02);
        assert!(BroadeningModel::gaussian(-1.0, 0.0).validate().is_err());
        assert!(BroadeningModel::gaussian(1.0, 2.0).validate().is_err());
    }

    #[test]
    fn outer_width_tracks_spread_inner_does_not() {
        let widths = |spread: f64| {
            let width_near = |ionize: i32, at: f64| {
                let cfg = EndorConfig::new(Projection(ionize), F0 - 160e3, F0 + 160e3, 400e-6);
                let s = synthesize_spectrum(&cfg, &setup(255e3, 0.0), &BroadeningModel::gaussian(spread, 0.0), 6401)
                    .unwrap();
                peak_positions(&s).into_iter().find(|p| (p.center - at).abs() < 20e3).unwrap().width
            };
            (width_near(3, F0 - 127.5e3), width_near(-1, F0))
        };
        let (o20, i20) = widths(20e3);
        let (o40, i40) = widths(40e3);
        let (_, i0) = widths(0.0);
        // Gaussian spread σ maps to an outer-line FWHM ≈ 2.355·σ/2.
        assert!((o40 / o20 - 2.0).abs() < 0.1, "{o20} {o40}");
        assert!((o20 / (2.3548 * 10e3) - 1.0).abs() < 0.1, "{o20}");
        assert!((i40 - i0).abs() < 0.05 * i0 && (i20 - i0).abs() < 0.05 * i0);
    }

    #[test]
    fn edmr_fields_are_evenly_spaced() {
        let lines = arsenic_line_fields(0.35);
        assert_eq!(lines.len(), 4);
        let spacing = HYPERFINE_ARSENIC / (G_E_ARSENIC * MU_B_OVER_H);
        assert!((spacing - 7.092e-3).abs() < 1e-5);
        for w in lines.windows(2) {
            assert!(((w[1].1 - w[0].1) - spacing).abs() < 1e-12);
        }
        assert!(((lines[0].1 + lines[3].1) / 2.0 - 0.35).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn protocol_conserves_population(
            rf in 2.3e6f64..2.8e6,
            f_q in 0.0f64..300e3,
            target in 0usize..4,
            eff in 0.0f64..=1.0,
            raw in proptest::array::uniform4(0.0f64..1.0),
        ) {
            let total: f64 = raw.iter().sum::<f64>() + 1e-9;
            let neutral: Vec<f64> = raw.iter().map(|p| (p + 1e-9 / 4.0) / total).collect();
            let sum: f64 = neutral.iter().sum();
            let neutral: Vec<f64> = neutral.iter().map(|p| p / sum).collect();
            let pop = PopulationVector { neutral, ionized: vec![0.0; 4] };
            let m = SPIN.projections().nth(target).unwrap();
            let mut cfg = EndorConfig::new(m, 2.0e6, 3.0e6, 400e-6);
            cfg.ionization_efficiency = eff;
            let out = run_endor_step(&pop, &cfg, rf, &table(f_q));
            prop_assert!((out.total() - 1.0).abs() < 1e-12);
            prop_assert!(out.neutral.iter().chain(&out.ionized).all(|&p| p >= 0.0));
        }

        #[test]
        fn signal_within_unit_interval(f_q in 0.0f64..300e3, spread in 0.0f64..30e3, target in 0usize..4) {
            let m = SPIN.projections().nth(target).unwrap();
            let cfg = EndorConfig::new(m, F0 - 200e3, F0 + 200e3, 400e-6);
            let s = synthesize_spectrum(&cfg, &setup(f_q, 0.3), &BroadeningModel::gaussian(spread, 0.3), 60).unwrap();
            prop_assert!(s.signal.iter().all(|&v| (-1e-12..=1.0 + 1e-12).contains(&v)));
        }
    }
}
