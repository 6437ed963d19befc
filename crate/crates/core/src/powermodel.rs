//! Inference complexity counting and the system power / energy-efficiency
//! model (baseband compute plus converter consumption).

use std::collections::BTreeMap;

use crate::autoencoder::{decoder_plan, encoder_plan, ModelConfig};
use crate::error::{Error, Result};
use crate::fmt::format_sig;
use crate::neural::LayerSpec;

/// A layer as seen by the complexity model.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum CountedLayer {
    FullyConnected {
        i: u64,
        o: u64,
    },
    BatchNorm {
        i: u64,
    },
    PowerNorm {
        i: u64,
    },
    /// i/o feature sizes, c input channels, f filter size, s stride.
    Convolution {
        i: u64,
        o: u64,
        c: u64,
        f: u64,
        s: u64,
    },
    /// Activations, dropout, the (I)FWHT positions (realized by the
    /// converter hardware at inference) and the element-wise head.
    ZeroCost,
}

impl From<&LayerSpec> for CountedLayer {
    fn from(spec: &LayerSpec) -> Self {
        match *spec {
            LayerSpec::FullyConnected { in_dim, out_dim } => CountedLayer::FullyConnected {
                i: in_dim as u64,
                o: out_dim as u64,
            },
            LayerSpec::BatchNorm { dim } => CountedLayer::BatchNorm { i: dim as u64 },
            LayerSpec::PowerNorm { dim } => CountedLayer::PowerNorm { i: dim as u64 },
            LayerSpec::Activation { .. }
            | LayerSpec::Dropout { .. }
            | LayerSpec::SigmoidHead { .. }
            | LayerSpec::Transform { .. } => CountedLayer::ZeroCost,
        }
    }
}

/// (operations, parameters) for one layer.
pub fn layer_complexity(layer: &CountedLayer) -> Result<(u64, u64)> {
    match *layer {
        CountedLayer::FullyConnected { i, o } => {
            if i == 0 || o == 0 {
                return Err(Error::InvalidArgument("zero layer dimension".into()));
            }
            Ok((2 * i * o, (i + 1) * o))
        }
        CountedLayer::BatchNorm { i } => {
            if i == 0 {
                return Err(Error::InvalidArgument("zero layer dimension".into()));
            }
            Ok((4 * i, 4 * i))
        }
        CountedLayer::PowerNorm { i } => {
            if i == 0 {
                return Err(Error::InvalidArgument("zero layer dimension".into()));
            }
            Ok((i, i))
        }
        CountedLayer::Convolution { i, o, c, f, s } => {
            if i == 0 || o == 0 || c == 0 || f == 0 || s == 0 {
                return Err(Error::InvalidArgument("zero convolution dimension".into()));
            }
            Ok(((2 * c * f + 1) * i * o / s - 1, (c * f + 1) * o))
        }
        CountedLayer::ZeroCost => Ok((0, 0)),
    }
}

/// Per-layer and total operation/parameter counts.
#[derive(Clone, Debug)]
pub struct ComplexityReport {
    /// (label, ops, params) per layer, transmitter first.
    pub per_layer: Vec<(String, u64, u64)>,
    pub total_ops: u64,
    pub total_params: u64,
}

/// Walks the actual layer plan of the architecture and sums
/// [`layer_complexity`] over it.
pub fn model_complexity(cfg: &ModelConfig) -> Result<ComplexityReport> {
    cfg.validate()?;
    let mut per_layer = Vec::new();
    let mut total_ops = 0u64;
    let mut total_params = 0u64;
    let mut walk = |side: &str, plan: &[LayerSpec]| -> Result<()> {
        for (idx, spec) in plan.iter().enumerate() {
            let (ops, params) = layer_complexity(&CountedLayer::from(spec))?;
            total_ops += ops;
            total_params += params;
            per_layer.push((format!("{side}.{idx}.{}", spec_label(spec)), ops, params));
        }
        Ok(())
    };
    walk("tx", &encoder_plan(cfg))?;
    walk("rx", &decoder_plan(cfg))?;
    Ok(ComplexityReport {
        per_layer,
        total_ops,
        total_params,
    })
}

fn spec_label(spec: &LayerSpec) -> &'static str {
    match spec {
        LayerSpec::FullyConnected { .. } => "fc",
        LayerSpec::BatchNorm { .. } => "batch_norm",
        LayerSpec::Activation { .. } => "activation",
        LayerSpec::Dropout { .. } => "dropout",
        LayerSpec::PowerNorm { .. } => "power_norm",
        LayerSpec::SigmoidHead { .. } => "head",
        LayerSpec::Transform { .. } => "transform",
    }
}

/// Closed-form parameter total for the architecture.
///
/// Transmitter blocks cost Q(k+1) + (V-1)(Q^2+Q); the receiver's first block
/// takes the length-n channel vector, so its closed form uses n in place of
/// k. Batch-norm adds 4Q per block when enabled.
pub fn closed_form_params(cfg: &ModelConfig) -> u64 {
    let (n, k, q, v) = dims(cfg);
    let bn = if cfg.batch_norm { v * 4 * q } else { 0 };
    let tx = q * (k + 1) + (v - 1) * (q * q + q) + bn + n * (q + 1) + n;
    let rx = q * (n + 1) + (v - 1) * (q * q + q) + bn + k * (q + 1);
    tx + rx
}

/// Closed-form operation total (C_AI) for the architecture.
pub fn closed_form_ops(cfg: &ModelConfig) -> u64 {
    let (n, k, q, v) = dims(cfg);
    let bn = if cfg.batch_norm { v * 4 * q } else { 0 };
    let tx = 2 * k * q + (v - 1) * 2 * q * q + bn + 2 * q * n + n;
    let rx = 2 * n * q + (v - 1) * 2 * q * q + bn + 2 * q * k;
    tx + rx
}

fn dims(cfg: &ModelConfig) -> (u64, u64, u64, u64) {
    (cfg.n as u64, cfg.k as u64, cfg.q as u64, cfg.v as u64)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ConverterKind {
    Walsh,
    TimeInterleaved,
}

/// Hardware constants of the power model.
#[derive(Clone, Debug)]
pub struct PowerConfig {
    /// Compute efficiency in operations per joule.
    pub eta_ops_per_joule: f64,
    /// Aggregate sample rate f_s in samples per second.
    pub sample_rate_hz: f64,
    /// Interleaving order n; the baseband runs at f_s / n.
    pub interleave_order: usize,
    pub walsh_dac_w: f64,
    pub walsh_adc_w: f64,
    pub ti_dac_w: f64,
    pub ti_adc_w: f64,
    /// Polar decoding energy per block (joules) at the reference block
    /// length, keyed by list size.
    ///
    /// The defaults are order-of-magnitude placeholders, NOT published
    /// measurements; supply figures from an ASIC report for real studies.
    pub polar_energy_per_block_ref: BTreeMap<usize, f64>,
    /// Block length the configured polar energies refer to.
    pub polar_ref_block_len: usize,
}

impl Default for PowerConfig {
    fn default() -> Self {
        let mut polar = BTreeMap::new();
        // Placeholder per-block energies at n=256 (non-normative).
        polar.insert(2, 1.0e-8);
        polar.insert(4, 2.0e-8);
        polar.insert(8, 4.0e-8);
        Self {
            eta_ops_per_joule: 8e14,
            sample_rate_hz: 5e9,
            interleave_order: 32,
            walsh_dac_w: 0.044,
            walsh_adc_w: 0.046,
            ti_dac_w: 0.145,
            ti_adc_w: 0.1586,
            polar_energy_per_block_ref: polar,
            polar_ref_block_len: 256,
        }
    }
}

impl PowerConfig {
    /// Baseband rate f_BB = f_s / n.
    pub fn f_bb_hz(&self) -> f64 {
        self.sample_rate_hz / self.interleave_order as f64
    }

    fn converter_watts(&self, kind: ConverterKind) -> (f64, f64) {
        match kind {
            ConverterKind::Walsh => (self.walsh_dac_w, self.walsh_adc_w),
            ConverterKind::TimeInterleaved => (self.ti_dac_w, self.ti_adc_w),
        }
    }
}

/// Per-component power, throughput and energy efficiency.
#[derive(Clone, Debug)]
pub struct PowerReport {
    pub p_bb_w: f64,
    pub p_adc_w: f64,
    pub p_dac_w: f64,
    pub p_sys_w: f64,
    pub throughput_bps: f64,
    pub ee_bit_per_joule: f64,
    /// Baseband energy per inference.
    pub e_bb_joule: f64,
    /// Block-length scaling applied to configured polar energies, echoed for
    /// traceability (None for AI basebands).
    pub polar_block_scale: Option<f64>,
}

impl PowerReport {
    /// component,watts rows followed by the summary keys.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("component,watts\n");
        out.push_str(&format!("baseband,{}\n", format_sig(self.p_bb_w, 12)));
        out.push_str(&format!("adc,{}\n", format_sig(self.p_adc_w, 12)));
        out.push_str(&format!("dac,{}\n", format_sig(self.p_dac_w, 12)));
        out.push_str(&format!("system,{}\n", format_sig(self.p_sys_w, 12)));
        out.push_str(&format!(
            "throughput_bps,{}\n",
            format_sig(self.throughput_bps, 12)
        ));
        out.push_str(&format!(
            "ee_bit_per_joule,{}\n",
            format_sig(self.ee_bit_per_joule, 12)
        ));
        out.push_str(&format!("e_bb_joule,{}\n", format_sig(self.e_bb_joule, 12)));
        if let Some(scale) = self.polar_block_scale {
            out.push_str(&format!("polar_block_scale,{}\n", format_sig(scale, 12)));
        }
        out
    }
}

/// Baseband energy per inference and power: E = C_AI / eta, P = E * f_BB.
pub fn baseband_power(c_ai_ops: u64, pcfg: &PowerConfig) -> (f64, f64) {
    let e_bb = c_ai_ops as f64 / pcfg.eta_ops_per_joule;
    (e_bb, e_bb * pcfg.f_bb_hz())
}

/// EE_sys = k * f_BB / P_sys, in bits per joule.
pub fn energy_efficiency(k: usize, pcfg: &PowerConfig, p_sys_w: f64) -> f64 {
    k as f64 * pcfg.f_bb_hz() / p_sys_w
}

/// Assembles the full report: P_sys = P_BB + P_ADC + P_DAC.
pub fn system_power(
    k: usize,
    e_bb_joule: f64,
    p_bb_w: f64,
    kind: ConverterKind,
    pcfg: &PowerConfig,
) -> PowerReport {
    let (dac, adc) = pcfg.converter_watts(kind);
    let p_sys = p_bb_w + adc + dac;
    PowerReport {
        p_bb_w,
        p_adc_w: adc,
        p_dac_w: dac,
        p_sys_w: p_sys,
        throughput_bps: k as f64 * pcfg.f_bb_hz(),
        ee_bit_per_joule: energy_efficiency(k, pcfg, p_sys),
        e_bb_joule,
        polar_block_scale: None,
    }
}

/// Report for one AI baseband (model complexity through the power chain).
pub fn model_power(cfg: &ModelConfig, kind: ConverterKind, pcfg: &PowerConfig) -> Result<PowerReport> {
    let complexity = model_complexity(cfg)?;
    let (e_bb, p_bb) = baseband_power(complexity.total_ops, pcfg);
    Ok(system_power(cfg.k, e_bb, p_bb, kind, pcfg))
}

/// Report for the polar baseline: configured per-block decoding energy,
/// linearly rescaled from the reference block length, time-interleaved
/// converters.
pub fn polar_power(
    pcfg: &PowerConfig,
    list_size: usize,
    k_info: usize,
) -> Result<PowerReport> {
    let e_ref = pcfg
        .polar_energy_per_block_ref
        .get(&list_size)
        .copied()
        .ok_or(Error::MissingEnergyEntry(list_size))?;
    let scale = pcfg.interleave_order as f64 / pcfg.polar_ref_block_len as f64;
    let e_bb = e_ref * scale;
    let p_bb = e_bb * pcfg.f_bb_hz();
    let mut report = system_power(k_info, e_bb, p_bb, ConverterKind::TimeInterleaved, pcfg);
    report.polar_block_scale = Some(scale);
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autoencoder::Domain;
    use crate::neural::Activation;

    fn cfg(q: usize, v: usize, n: usize, k: usize, batch_norm: bool) -> ModelConfig {
        ModelConfig {
            n,
            k,
            q,
            v,
            activation: Activation::LeakyRelu(0.01),
            batch_norm,
            dropout: None,
            l2: Some(1e-5),
            domain: Domain::Walsh,
        }
    }

    #[test]
    fn layer_complexity_table_values() {
        assert_eq!(
            layer_complexity(&CountedLayer::FullyConnected { i: 16, o: 500 }).unwrap(),
            (16_000, 8_500)
        );
        assert_eq!(
            layer_complexity(&CountedLayer::BatchNorm { i: 500 }).unwrap(),
            (2_000, 2_000)
        );
        assert_eq!(
            layer_complexity(&CountedLayer::PowerNorm { i: 32 }).unwrap(),
            (32, 32)
        );
        assert_eq!(layer_complexity(&CountedLayer::ZeroCost).unwrap(), (0, 0));
        assert!(layer_complexity(&CountedLayer::FullyConnected { i: 0, o: 5 }).is_err());
    }

    #[test]
    fn convolution_formula() {
        let conv = CountedLayer::Convolution {
            i: 128,
            o: 64,
            c: 32,
            f: 5,
            s: 2,
        };
        let (ops, params) = layer_complexity(&conv).unwrap();
        assert_eq!(ops, (2 * 32 * 5 + 1) * 128 * 64 / 2 - 1);
        assert_eq!(params, (32 * 5 + 1) * 64);
    }

    #[test]
    fn paper_scale_parameter_count() {
        // The most complex searched model lands on ~6.1e6 weights.
        let report = model_complexity(&cfg(1000, 4, 32, 16, true)).unwrap();
        let target = 6.1e6;
        let rel = (report.total_params as f64 - target).abs() / target;
        assert!(rel < 0.01, "params {} ({rel})", report.total_params);
    }

    #[test]
    fn closed_forms_equal_layer_walk_on_grid() {
        for &q in &[100usize, 500, 1000] {
            for &v in &[1usize, 2, 4] {
                for &k in &[16usize, 32, 48, 64] {
                    for bn in [false, true] {
                        let c = cfg(q, v, 32, k, bn);
                        let walk = model_complexity(&c).unwrap();
                        assert_eq!(
                            walk.total_params,
                            closed_form_params(&c),
                            "params Q={q} V={v} k={k} bn={bn}"
                        );
                        assert_eq!(
                            walk.total_ops,
                            closed_form_ops(&c),
                            "ops Q={q} V={v} k={k} bn={bn}"
                        );
                        let layer_sum_ops: u64 = walk.per_layer.iter().map(|l| l.1).sum();
                        let layer_sum_params: u64 = walk.per_layer.iter().map(|l| l.2).sum();
                        assert_eq!(layer_sum_ops, walk.total_ops);
                        assert_eq!(layer_sum_params, walk.total_params);
                    }
                }
            }
        }
    }

    #[test]
    fn single_block_totals_are_affine_in_q() {
        // V = 1 removes the quadratic term.
        let p = |q: usize| closed_form_params(&cfg(q, 1, 32, 16, false)) as i64;
        assert_eq!(p(200) - p(100), p(300) - p(200));
        let o = |q: usize| closed_form_ops(&cfg(q, 1, 32, 16, false)) as i64;
        assert_eq!(o(200) - o(100), o(300) - o(200));
    }

    #[test]
    fn selected_architecture_complexity() {
        let report = model_complexity(&cfg(500, 4, 32, 16, true)).unwrap();
        assert!((report.total_ops as f64 - 3.10e6).abs() / 3.10e6 < 0.01);
    }

    #[test]
    fn baseband_power_values() {
        let pcfg = PowerConfig::default();
        assert!((pcfg.f_bb_hz() - 156.25e6).abs() < 1e-3);
        let (e_bb, _) = baseband_power(8e14 as u64, &pcfg);
        assert!((e_bb - 1.0).abs() < 1e-12);
        let (_, p_bb) = baseband_power(3_100_000, &pcfg);
        assert!((p_bb - 0.605).abs() < 1e-2, "p_bb {p_bb}");
        // linear in f_BB
        let mut double_rate = PowerConfig::default();
        double_rate.sample_rate_hz *= 2.0;
        let (_, p2) = baseband_power(3_100_000, &double_rate);
        assert!((p2 - 2.0 * p_bb).abs() < 1e-12);
    }

    #[test]
    fn converter_totals_match_published_table() {
        let pcfg = PowerConfig::default();
        let walsh = system_power(16, 0.0, 0.0, ConverterKind::Walsh, &pcfg);
        assert!((walsh.p_sys_w - 0.090).abs() < 1e-12);
        let ti = system_power(16, 0.0, 0.0, ConverterKind::TimeInterleaved, &pcfg);
        assert!((ti.p_sys_w - 0.3036).abs() < 1e-12);
        assert!(ti.p_sys_w > walsh.p_sys_w);
    }

    #[test]
    fn walsh_system_power_example() {
        let pcfg = PowerConfig::default();
        let r = system_power(16, 3.872e-9, 0.605, ConverterKind::Walsh, &pcfg);
        assert!((r.p_sys_w - 0.695).abs() < 1e-3);
    }

    #[test]
    fn energy_efficiency_values() {
        let pcfg = PowerConfig::default();
        let ee = energy_efficiency(16, &pcfg, 0.695);
        assert!((ee - 3.6e9).abs() / 3.6e9 < 0.02, "ee {ee}");
        assert!((energy_efficiency(16, &pcfg, 2.0 * 0.695) - ee / 2.0).abs() < 1.0);
        assert!((energy_efficiency(32, &pcfg, 0.695) - 2.0 * ee).abs() < 1.0);
    }

    #[test]
    fn pareto_model_energy_efficiency_in_paper_band() {
        let pcfg = PowerConfig::default();
        let report = model_power(&cfg(500, 4, 32, 16, true), ConverterKind::Walsh, &pcfg).unwrap();
        let bit_per_nj = report.ee_bit_per_joule / 1e9;
        assert!(
            (3.37..=3.73).contains(&bit_per_nj),
            "EE {bit_per_nj} bit/nJ"
        );
    }

    #[test]
    fn efficiency_decreases_with_complexity() {
        let pcfg = PowerConfig::default();
        let small = model_power(&cfg(100, 1, 32, 16, true), ConverterKind::Walsh, &pcfg).unwrap();
        let large = model_power(&cfg(1000, 4, 32, 16, true), ConverterKind::Walsh, &pcfg).unwrap();
        assert!(large.ee_bit_per_joule < small.ee_bit_per_joule);
        for r in [&small, &large] {
            assert!(r.p_bb_w > 0.0 && r.p_sys_w.is_finite());
            assert!(r.ee_bit_per_joule > 0.0);
            assert!(r.throughput_bps > 0.0);
        }
    }

    #[test]
    fn polar_power_scaling_and_errors() {
        let mut pcfg = PowerConfig::default();
        let r8 = polar_power(&pcfg, 8, 16).unwrap();
        assert_eq!(r8.polar_block_scale, Some(32.0 / 256.0));
        let r2 = polar_power(&pcfg, 2, 16).unwrap();
        assert!(r2.p_sys_w < r8.p_sys_w);
        assert!(matches!(
            polar_power(&pcfg, 16, 16),
            Err(Error::MissingEnergyEntry(16))
        ));
        // Zero decoding energy leaves only the TI converters.
        pcfg.polar_energy_per_block_ref.insert(2, 0.0);
        let r0 = polar_power(&pcfg, 2, 16).unwrap();
        assert!((r0.p_sys_w - 0.3036).abs() < 1e-12);
    }

    #[test]
    fn report_csv_has_summary_keys() {
        let pcfg = PowerConfig::default();
        let report = model_power(&cfg(500, 4, 32, 16, true), ConverterKind::Walsh, &pcfg).unwrap();
        let csv = report.to_csv();
        assert!(csv.starts_with("component,watts\n"));
        for key in ["baseband,", "adc,", "dac,", "system,", "throughput_bps,", "ee_bit_per_joule,"] {
            assert!(csv.contains(key), "missing {key} in {csv}");
        }
    }
}
