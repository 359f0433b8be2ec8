//! Synthetic record generator and report templates.
//!
//! High-risk records draw the cup-to-disc ratio from `{0.60, 0.65, ..., 0.95}`
//! and low-risk records from `{0.10, 0.15, ..., 0.55}`; the risk threshold of
//! 0.6 is generator policy.

use serde_json::Map;

use super::sample::{DiscSize, GlaucomaSample, RimColor, Risk};
use crate::rng::SplitMix64;

struct Policy {
    isnt_followed: f64,
    pallor: f64,
    bayoneting: f64,
    sharp_edge: f64,
    laminar: f64,
    notching: f64,
    thinning: f64,
    disc: [f64; 3],
    extra_note: f64,
}

const HIGH: Policy = Policy {
    isnt_followed: 0.1,
    pallor: 0.7,
    bayoneting: 0.6,
    sharp_edge: 0.5,
    laminar: 0.6,
    notching: 0.6,
    thinning: 0.85,
    disc: [0.15, 0.35, 0.5],
    extra_note: 0.3,
};

const LOW: Policy = Policy {
    isnt_followed: 0.9,
    pallor: 0.08,
    bayoneting: 0.08,
    sharp_edge: 0.08,
    laminar: 0.08,
    notching: 0.08,
    thinning: 0.08,
    disc: [0.3, 0.5, 0.2],
    extra_note: 0.1,
};

pub fn generate_sample(rng: &mut SplitMix64, risk: Risk) -> GlaucomaSample {
    let pol = match risk {
        Risk::High => &HIGH,
        Risk::Low => &LOW,
    };
    let (ratio, confidence) = match risk {
        Risk::High => ((60 + 5 * rng.below(8)) as f64 / 100.0, (70 + 5 * rng.below(6)) as f64 / 100.0),
        Risk::Low => ((10 + 5 * rng.below(10)) as f64 / 100.0, (80 + 5 * rng.below(4)) as f64 / 100.0),
    };
    let u = rng.next_f64();
    let optic_disc_size = if u < pol.disc[0] {
        DiscSize::Small
    } else if u < pol.disc[0] + pol.disc[1] {
        DiscSize::Medium
    } else {
        DiscSize::Large
    };
    let isnt_rule_followed = rng.bernoulli(pol.isnt_followed);
    let rim_pallor = rng.bernoulli(pol.pallor);
    let bayoneting = rng.bernoulli(pol.bayoneting);
    let sharp_edge = rng.bernoulli(pol.sharp_edge);
    let laminar_dot_sign = rng.bernoulli(pol.laminar);
    let notching = rng.bernoulli(pol.notching);
    let rim_thinning = rng.bernoulli(pol.thinning);
    let additional_observations = rng.bernoulli(pol.extra_note).then(|| match risk {
        Risk::High => "peripapillary atrophy".to_string(),
        Risk::Low => "small drusen".to_string(),
    });
    let mut s = GlaucomaSample {
        optic_disc_size,
        cup_to_disc_ratio: ratio,
        isnt_rule_followed,
        rim_pallor,
        rim_color: if rim_pallor { RimColor::Pale } else { RimColor::Pink },
        bayoneting,
        sharp_edge,
        laminar_dot_sign,
        notching,
        rim_thinning,
        additional_observations,
        neuroretinal_rim: String::new(),
        glaucoma_risk_assessment: risk,
        confidence_level: confidence,
        report: String::new(),
        image_path: None,
        extra: Map::new(),
    };
    s.neuroretinal_rim = rim_description(&s);
    s.report = render_report(&s);
    s
}

/// `count` records; record `i` uses stream `i` of `seed` and is high risk
/// with probability `high_fraction`.
pub fn generate_dataset(count: usize, seed: u64, high_fraction: f64) -> Vec<GlaucomaSample> {
    (0..count)
        .map(|i| {
            let mut rng = SplitMix64::derive(seed, i as u64);
            let risk = if rng.bernoulli(high_fraction) { Risk::High } else { Risk::Low };
            generate_sample(&mut rng, risk)
        })
        .collect()
}

/// Canonical example record: large disc, ratio 0.8, every pathology
/// flag set, ISNT violated, pale rim, high risk at confidence 0.9.
pub fn reference_sample() -> GlaucomaSample {
    let mut s = GlaucomaSample {
        optic_disc_size: DiscSize::Large,
        cup_to_disc_ratio: 0.8,
        isnt_rule_followed: false,
        rim_pallor: true,
        rim_color: RimColor::Pale,
        bayoneting: true,
        sharp_edge: true,
        laminar_dot_sign: true,
        notching: true,
        rim_thinning: true,
        additional_observations: None,
        neuroretinal_rim: String::new(),
        glaucoma_risk_assessment: Risk::High,
        confidence_level: 0.9,
        report: String::new(),
        image_path: None,
        extra: Map::new(),
    };
    s.neuroretinal_rim = rim_description(&s);
    s.report = render_report(&s);
    s
}

/// Free-text rim description, the corpus modality.
pub fn rim_description(s: &GlaucomaSample) -> String {
    let mut d = String::from(if s.rim_thinning { "thinned rim" } else { "healthy rim" });
    if s.notching {
        d.push_str(" with inferior notching");
    }
    d.push_str(if s.isnt_rule_followed {
        " preserving the isnt pattern"
    } else {
        " violating the isnt pattern"
    });
    d
}

pub fn render_report(s: &GlaucomaSample) -> String {
    let mut out = format!(
        "the optic disc is {} in size. the cup to disc ratio is {}. ",
        s.optic_disc_size.as_str(),
        s.cup_to_disc_ratio
    );
    out.push_str(if s.isnt_rule_followed {
        "the isnt rule is followed. "
    } else {
        "the isnt rule is not followed. "
    });
    let names = [
        (s.rim_pallor, "rim pallor"),
        (s.bayoneting, "bayoneting of vessels"),
        (s.sharp_edge, "sharp rim edges"),
        (s.laminar_dot_sign, "a laminar dot sign"),
        (s.notching, "focal notching"),
        (s.rim_thinning, "rim thinning"),
    ];
    let present: Vec<&str> = names.iter().filter(|(b, _)| *b).map(|(_, n)| *n).collect();
    match present.as_slice() {
        [] => out.push_str("no rim abnormalities are seen. "),
        [one] => out.push_str(&format!("there is {one}. ")),
        [init @ .., last] => out.push_str(&format!("there is {} and {last}. ", init.join(", "))),
    }
    out.push_str(&format!("the neuroretinal rim appears {}. ", s.rim_color.as_str()));
    if let Some(note) = &s.additional_observations {
        out.push_str(&format!("also noted {note}. "));
    }
    out.push_str(match s.glaucoma_risk_assessment {
        Risk::High => "these findings indicate a high risk of glaucoma.",
        Risk::Low => "these findings indicate a low risk of glaucoma.",
    });
    out
}
